//! The `dip` command-line tool.
//!
//! Task subcommands (`denoise`, `sr`, `inpaint`, `flash`, `restore`) resolve
//! their flags into a [`RunConfig`], which can also be loaded from JSON with
//! `--config` (flags then override it). Harness subcommands (`impedance`,
//! `ablate`, `bench`) run several restorations and write CSV tables.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! failures including divergence.

mod config;
mod experiments;
mod pool;
mod run;

pub use config::{
    architecture_by_name, CodeConfig, RunConfig, TaskConfig, ABLATION_ARCHS, DENOISE_Z_PERTURB, RESNET_WIDTH,
    SR_FACTOR, SR_Z_PERTURB,
};
pub use experiments::{
    ablate, bench, impedance, published_reference, AblationRow, BenchRow, BenchTask, HarnessConfig, ImpedanceSummary,
    Manifest, ManifestEntry, IMPEDANCE_TARGETS,
};
pub use pool::{parallel_map, worker_count, THREADS_ENV};
pub use run::{average, build_instance, execute, restore_seed, spec_for, Instance};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::imaging::{center_crop, load_tensor, MaskSpec};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dip", version, about = "Image restoration with an untrained generator as the prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by the task subcommands.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optimization steps.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed of the first run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of independent runs (seeds `seed, seed+1, …`).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Average the EMA outputs of all runs into average.png.
    #[arg(long)]
    pub average: bool,
    /// Ground-truth image for PSNR reporting.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Generator: hourglass, ed<depth>, unet<depth> or resnet<blocks>.
    #[arg(long)]
    pub arch: Option<String>,
    /// Std of the per-iteration code perturbation.
    #[arg(long)]
    pub z_perturb: Option<f64>,
    /// Trace every this many iterations.
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// Save intermediate outputs at these iterations (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub snapshot_at: Vec<usize>,
    /// Base configuration (JSON); explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Validate and print the resolved configuration without running.
    #[arg(long)]
    pub dry_run: bool,
}

/// Flags shared by the harness subcommands.
#[derive(Debug, Args)]
pub struct HarnessArgs {
    #[arg(long, default_value = "dip-output")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Center crop to this square size before running.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blind denoising.
    Denoise {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Treat the input as clean and add Gaussian noise of this σ (0–255).
        #[arg(long)]
        sigma_synth: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Super-resolution by an integer factor.
    Sr {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        factor: Option<usize>,
        /// Treat the input as high-resolution ground truth and downsample it.
        #[arg(long)]
        synth: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Inpainting under a mask: bernoulli:p, rect:x,y,w,h or file:path.
    Inpaint {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mask: Option<String>,
        /// Divide the energy by the number of known pixels.
        #[arg(long)]
        normalized: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Flash/no-flash restoration guided by the flash image.
    Flash {
        #[arg(long)]
        flash: Option<PathBuf>,
        #[arg(long)]
        noflash: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generic blind restoration (e.g. compression artifacts).
    Restore {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a natural image, its noisy and shuffled versions and white noise.
    Impedance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        /// Noise σ (0–255) of the noisy target.
        #[arg(long, default_value_t = 25.0)]
        sigma: f64,
        #[arg(long, default_value = "hourglass")]
        arch: String,
        #[command(flatten)]
        harness: HarnessArgs,
    },
    /// Inpaint one image with several generator architectures.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "bernoulli:0.5")]
        mask: String,
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_ARCHS.map(String::from))]
        archs: Vec<String>,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[command(flatten)]
        harness: HarnessArgs,
    },
    /// Benchmark over a dataset directory with a manifest.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task: BenchTask,
        /// Defaults to DATASET/manifest.json.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, default_value = "hourglass")]
        arch: String,
        #[command(flatten)]
        harness: HarnessArgs,
    },
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::ConfigError(format!("--{flag} is required (or give --config)")))
}

/// Builds the run configuration of a task subcommand.
pub fn resolve(command: &Command) -> Result<(RunConfig, bool)> {
    let (common, task) = match command {
        Command::Denoise {
            input,
            sigma_synth,
            common,
        } => (
            common,
            input.clone().map(|input| TaskConfig::Denoise {
                input,
                gt: common.gt.clone(),
                sigma_synth: *sigma_synth,
            }),
        ),
        Command::Sr {
            input,
            factor,
            synth,
            common,
        } => (
            common,
            input.clone().map(|input| TaskConfig::SuperResolve {
                input,
                gt: common.gt.clone(),
                factor: factor.unwrap_or(SR_FACTOR),
                synthesize: *synth,
            }),
        ),
        Command::Inpaint {
            input,
            mask,
            normalized,
            common,
        } => {
            let task = match (input, mask) {
                (Some(input), Some(mask)) => Some(TaskConfig::Inpaint {
                    input: input.clone(),
                    gt: common.gt.clone(),
                    mask: mask.clone(),
                    normalized: *normalized,
                }),
                (None, None) => None,
                _ => return Err(Error::ConfigError("inpaint needs both --input and --mask".into())),
            };
            (common, task)
        }
        Command::Flash {
            flash,
            noflash,
            common,
        } => {
            let task = match (flash, noflash) {
                (Some(f), Some(n)) => Some(TaskConfig::Flash {
                    flash: f.clone(),
                    no_flash: n.clone(),
                    gt: common.gt.clone(),
                }),
                (None, None) => None,
                _ => return Err(Error::ConfigError("flash needs both --flash and --noflash".into())),
            };
            (common, task)
        }
        Command::Restore { input, common } => (
            common,
            input.clone().map(|input| TaskConfig::Restore {
                input,
                gt: common.gt.clone(),
            }),
        ),
        _ => return Err(Error::ConfigError("not a task subcommand".into())),
    };

    let mut cfg = match (&common.config, task) {
        (Some(path), task) => {
            let mut cfg = RunConfig::load(path)?;
            if let Some(task) = task {
                if std::mem::discriminant(&task) != std::mem::discriminant(&cfg.task) {
                    return Err(Error::ConfigError(format!(
                        "config describes a {} run",
                        cfg.task.name()
                    )));
                }
                cfg.task = task;
            }
            cfg
        }
        (None, Some(task)) => RunConfig::for_task(task),
        (None, None) => return Err(required::<()>(None, "input").unwrap_err()),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(iters) = common.iters {
        cfg.optim.iterations = iters;
    }
    if let Some(lr) = common.lr {
        cfg.optim.optimizer = cfg.optim.optimizer.with_lr(lr);
    }
    if common.seed.is_some() || common.seeds.is_some() {
        let first = common.seed.unwrap_or(cfg.seeds[0]);
        let n = common.seeds.unwrap_or(cfg.seeds.len()) as u64;
        cfg.seeds = (first..first + n).collect();
    }
    cfg.optim.seed = *cfg.seeds.first().unwrap_or(&0);
    if common.average {
        cfg.average = true;
    }
    if let Some(arch) = &common.arch {
        cfg.architecture = architecture_by_name(arch)?;
    }
    if let Some(z) = common.z_perturb {
        cfg.optim.z_perturb_std = z;
    }
    if let Some(t) = common.trace_every {
        cfg.optim.trace_every = t;
    }
    if !common.snapshot_at.is_empty() {
        cfg.snapshot_at = common.snapshot_at.clone();
    }
    cfg.validate()?;
    Ok((cfg, common.dry_run))
}

fn harness_image(input: &PathBuf, size: Option<usize>) -> Result<crate::tensor::Tensor> {
    let img = load_tensor(input)?;
    match size {
        Some(s) => center_crop(&img, s, s),
        None => Ok(img),
    }
}

/// Runs a parsed command; the returned text is printed on success.
pub fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Impedance {
            input,
            iters,
            sigma,
            arch,
            harness,
        } => {
            let mut cfg = HarnessConfig::new(iters, harness.lr, harness.seed);
            cfg.architecture = architecture_by_name(&arch)?;
            cfg.optim.validate()?;
            let image = harness_image(&input, harness.size)?;
            let (s, _) = impedance(&image, sigma, &cfg, Some(&harness.out))?;
            Ok(format!(
                "final energy: natural {:.6e}, noisy {:.6e}, shuffled {:.6e}, white noise {:.6e}; ordering holds: {}",
                s.natural,
                s.noisy,
                s.shuffled,
                s.white_noise,
                s.holds()
            ))
        }
        Command::Ablate {
            input,
            mask,
            archs,
            iters,
            harness,
        } => {
            let cfg = HarnessConfig::new(iters, harness.lr, harness.seed);
            cfg.optim.validate()?;
            let mask: MaskSpec = mask.parse().map_err(|e: Error| Error::ConfigError(e.to_string()))?;
            for a in &archs {
                architecture_by_name(a)?;
            }
            let image = harness_image(&input, harness.size)?;
            let rows = ablate(&image, &mask, &archs, &cfg, Some(&harness.out))?;
            Ok(rows
                .iter()
                .map(|r| format!("{:<10} {:>9} params  PSNR {:.2} dB", r.arch, r.parameters, r.psnr_final))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Bench {
            dataset,
            task,
            manifest,
            iters,
            arch,
            harness,
        } => {
            let default_iters = match task {
                BenchTask::Denoise => config::DENOISE_ITERS,
                BenchTask::Sr => config::SR_ITERS,
            };
            let mut cfg = HarnessConfig::new(iters.unwrap_or(default_iters), harness.lr, harness.seed);
            cfg.architecture = architecture_by_name(&arch)?;
            cfg.optim.validate()?;
            let manifest_path = manifest.unwrap_or_else(|| dataset.join("manifest.json"));
            let m = Manifest::load(&manifest_path)?;
            let rows = bench(&dataset, &m, task, &cfg, Some(&harness.out))?;
            Ok(rows
                .iter()
                .map(|r| {
                    format!(
                        "{:<16} DIP {:.2} dB  EMA {:.2} dB  baseline {:.2} dB",
                        r.image, r.dip_psnr, r.dip_ema_psnr, r.baseline_psnr
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        task => {
            let (cfg, dry_run) = resolve(&task)?;
            if dry_run {
                return Ok(format!("{}\nconfig hash: {}", cfg.to_json(), cfg.hash()));
            }
            let summary = execute(&cfg)?;
            Ok(format!(
                "wrote {} (runs: {})",
                cfg.out.join("result.json").display(),
                summary["runs"].as_array().map_or(0, Vec::len)
            ))
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigError(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

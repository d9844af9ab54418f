//! Single-task runs: build the instance, restore once per seed, write files.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{RunConfig, TaskConfig};
use super::pool::parallel_map;
use crate::error::{Error, Result};
use crate::imaging::{
    add_gaussian_noise, bicubic_up, crop_to_multiple, degrade_for_sr, load_tensor, make_mask, psnr,
    save_tensor, MaskSpec,
};
use crate::network::{ArchitectureSpec, CodeInput};
use crate::optimize::{run_restoration_with, trace_to_csv, RestorationResult, RunOptions};
use crate::tasks::{
    flash_noflash_setup, inpainting_energy, make_code_input_in, reconstruction_energy, sr_energy, FlashPair,
    TaskEnergy,
};
use crate::tensor::{Rng, Tensor};

/// Stream labels for the seeded generators of a run.
pub(crate) mod streams {
    pub const CODE: u64 = 0xc0de;
    pub const NOISE: u64 = 0x0015e;
    pub const MASK: u64 = 0x3a5c;
    pub const SHUFFLE: u64 = 0x54ff1e;
    pub const WHITE: u64 = 0x3417e;
}

/// A prepared restoration problem.
pub struct Instance {
    pub energy: TaskEnergy,
    /// Generator input used instead of a random code (flash guidance).
    pub guide: Option<FlashPair>,
    pub ground_truth: Option<Tensor>,
    pub psnr_crop: usize,
    /// Extra images written next to the results, such as the synthesized
    /// observation or the baseline.
    pub extras: Vec<(&'static str, Tensor)>,
    /// Name and PSNR of the comparison image (observation or baseline).
    pub reference: Option<(&'static str, f64)>,
}

fn load_gt(gt: &Option<PathBuf>) -> Result<Option<Tensor>> {
    gt.as_ref().map(load_tensor).transpose()
}

/// Loads and degrades the inputs of `cfg`. Synthetic degradations draw
/// from streams of the first seed so every seed sees the same observation.
pub fn build_instance(cfg: &RunConfig) -> Result<Instance> {
    let root = Rng::new(cfg.seeds[0]);
    let reference_psnr = |name, obs: &Tensor, gt: &Option<Tensor>, crop| -> Result<Option<(&'static str, f64)>> {
        gt.as_ref()
            .filter(|g| g.shape() == obs.shape())
            .map(|g| psnr(obs, g, crop).map(|p| (name, p)))
            .transpose()
    };
    Ok(match &cfg.task {
        TaskConfig::Denoise {
            input,
            gt,
            sigma_synth,
        } => {
            let image = load_tensor(input)?;
            let (noisy, gt, extras) = match sigma_synth {
                Some(sigma) => {
                    let noisy = add_gaussian_noise(&image, *sigma, &mut root.derive(streams::NOISE))?;
                    (noisy.clone(), Some(image), vec![("noisy", noisy)])
                }
                None => (image, load_gt(gt)?, Vec::new()),
            };
            let reference = reference_psnr("noisy", &noisy, &gt, 0)?;
            Instance {
                energy: reconstruction_energy(noisy)?,
                guide: None,
                ground_truth: gt,
                psnr_crop: 0,
                extras,
                reference,
            }
        }
        TaskConfig::SuperResolve {
            input,
            gt,
            factor,
            synthesize,
        } => {
            let (low, gt, mut extras) = if *synthesize {
                let hr = crop_to_multiple(&load_tensor(input)?, *factor)?;
                let low = degrade_for_sr(&hr, *factor)?;
                (low.clone(), Some(hr), vec![("lr", low)])
            } else {
                (load_tensor(input)?, load_gt(gt)?, Vec::new())
            };
            let bicubic = bicubic_up(&low, *factor)?;
            let reference = reference_psnr("bicubic", &bicubic, &gt, *factor)?;
            extras.push(("bicubic", bicubic));
            Instance {
                energy: sr_energy(low, *factor)?,
                guide: None,
                ground_truth: gt,
                psnr_crop: *factor,
                extras,
                reference,
            }
        }
        TaskConfig::Inpaint {
            input,
            gt,
            mask,
            normalized,
        } => {
            let image = load_tensor(input)?;
            let spec: MaskSpec = mask.parse().map_err(|e: Error| Error::ConfigError(e.to_string()))?;
            let (c, h, w) = image.chw()?;
            let m = make_mask(&spec, c, h, w, &mut root.derive(streams::MASK))?;
            let observed = image.mul(&m)?;
            // Synthetic masks hide pixels of a clean input, which then
            // serves as ground truth.
            let gt = match (load_gt(gt)?, &spec) {
                (Some(g), _) => Some(g),
                (None, MaskSpec::File(_)) => None,
                (None, _) => Some(image),
            };
            let mut energy = inpainting_energy(observed.clone(), m.clone())?;
            if *normalized {
                energy = energy.normalized();
            }
            let reference = reference_psnr("masked", &observed, &gt, 0)?;
            Instance {
                energy,
                guide: None,
                ground_truth: gt,
                psnr_crop: 0,
                // one plane, reusable as a `file:` mask
                extras: vec![("masked", observed), ("mask", Tensor::new(&[1, h, w], m.channel(0).to_vec())?)],
                reference,
            }
        }
        TaskConfig::Flash { flash, no_flash, gt } => {
            let pair = FlashPair::new(load_tensor(flash)?, load_tensor(no_flash)?)?;
            let gt = load_gt(gt)?;
            let reference = reference_psnr("no_flash", &pair.no_flash, &gt, 0)?;
            Instance {
                energy: reconstruction_energy(pair.no_flash.clone())?,
                guide: Some(pair),
                ground_truth: gt,
                psnr_crop: 0,
                extras: Vec::new(),
                reference,
            }
        }
        TaskConfig::Restore { input, gt } => {
            let image = load_tensor(input)?;
            let gt = load_gt(gt)?;
            let reference = reference_psnr("input", &image, &gt, 0)?;
            Instance {
                energy: reconstruction_energy(image)?,
                guide: None,
                ground_truth: gt,
                psnr_crop: 0,
                extras: Vec::new(),
                reference,
            }
        }
    })
}

/// The generator spec adapted to the observation's channel count.
pub fn spec_for(cfg: &RunConfig, energy: &TaskEnergy) -> ArchitectureSpec {
    let mut spec = cfg.architecture.clone();
    spec.output_channels = energy.output_shape().0;
    spec
}

/// The code for `seed`: uniform noise, or the flash guide when present.
pub fn code_for(cfg: &RunConfig, instance: &Instance, seed: u64) -> Result<CodeInput> {
    let mut rng = Rng::new(seed).derive(streams::CODE);
    match &instance.guide {
        Some(pair) => Ok(flash_noflash_setup(pair, cfg.code.channels, &mut rng)?.1),
        None => {
            let (_, h, w) = instance.energy.output_shape();
            make_code_input_in(h, w, cfg.code.channels, (cfg.code.lo, cfg.code.hi), &mut rng)
        }
    }
}

pub fn restore_seed(cfg: &RunConfig, instance: &Instance, seed: u64) -> Result<RestorationResult> {
    let spec = spec_for(cfg, &instance.energy);
    let code = code_for(cfg, instance, seed)?;
    let optim = crate::optimize::OptimConfig {
        seed,
        ..cfg.optim.clone()
    };
    let opts = RunOptions {
        ground_truth: instance.ground_truth.clone(),
        psnr_crop: instance.psnr_crop,
        snapshot_at: cfg.snapshot_at.clone(),
    };
    run_restoration_with(&instance.energy, &spec, &code, &optim, &opts)
}

fn write_run(dir: &Path, result: &RestorationResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_tensor(dir.join("final.png"), &result.image)?;
    save_tensor(dir.join("ema.png"), &result.ema_image)?;
    std::fs::write(dir.join("trace.csv"), trace_to_csv(&result.trace))?;
    for (it, img) in &result.snapshots {
        save_tensor(dir.join(format!("snapshot_{it:06}.png")), img)?;
    }
    Ok(())
}

/// Mean of equally shaped tensors.
pub fn average(images: &[&Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidShape("average of nothing".into()))?;
    let mut acc = first.full_like(0.0);
    for img in images {
        acc.axpy(1.0, img)?;
    }
    Ok(acc.scale(1.0 / images.len() as f64))
}

pub fn to_json_f64(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

/// Runs every seed of `cfg`, writes images, traces and `result.json`, and
/// returns the summary document.
pub fn execute(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let instance = build_instance(cfg)?;
    let out = &cfg.out;
    std::fs::create_dir_all(out)?;
    let started = std::time::Instant::now();
    let results = parallel_map(&cfg.seeds, |&seed| restore_seed(cfg, &instance, seed));

    for (name, img) in &instance.extras {
        save_tensor(out.join(format!("{name}.png")), img)?;
    }
    let multi = cfg.seeds.len() > 1;
    let mut runs = Vec::new();
    let mut ok = Vec::new();
    for (&seed, result) in cfg.seeds.iter().zip(results) {
        let dir = if multi { out.join(format!("seed_{seed}")) } else { out.clone() };
        match result {
            Ok(r) => {
                write_run(&dir, &r)?;
                runs.push(json!({
                    "seed": seed,
                    "output_dir": if multi { format!("seed_{seed}") } else { ".".to_string() },
                    "final_energy": r.final_energy(),
                    "psnr_final": to_json_f64(r.psnr_final),
                    "psnr_ema": to_json_f64(r.psnr_ema),
                    "wall_time_s": r.wall_time_s,
                }));
                ok.push(r);
            }
            Err(Error::DivergenceDetected {
                iteration,
                energy,
                trace,
            }) => {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("trace.csv"), trace_to_csv(&trace))?;
                return Err(Error::DivergenceDetected {
                    iteration,
                    energy,
                    trace,
                });
            }
            Err(e) => return Err(e),
        }
    }

    let mut average_psnr = None;
    if cfg.average {
        let emas: Vec<&Tensor> = ok.iter().map(|r| &r.ema_image).collect();
        let avg = average(&emas)?;
        save_tensor(out.join("average.png"), &avg)?;
        average_psnr = instance
            .ground_truth
            .as_ref()
            .map(|gt| psnr(&avg, gt, instance.psnr_crop))
            .transpose()?;
    }

    let summary = json!({
        "task": cfg.task.name(),
        "config_hash": cfg.hash(),
        "seeds": cfg.seeds,
        "iterations": cfg.optim.iterations,
        "parameter_count": ok[0].parameter_count,
        "psnr_crop": instance.psnr_crop,
        "reference": instance.reference.map(|(name, p)| json!({ "name": name, "psnr": p })),
        "runs": runs,
        "average_psnr": to_json_f64(average_psnr),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "config": canonical_config(cfg),
    });
    std::fs::write(out.join("result.json"), serde_json::to_string_pretty(&summary).unwrap() + "\n")?;
    Ok(summary)
}

/// The config as recorded in result files: the output directory is
/// omitted so reruns elsewhere compare equal.
pub fn canonical_config(cfg: &RunConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config is always serializable");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("out");
    }
    v
}

//! The persisted run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::ArchitectureSpec;
use crate::optimize::OptimConfig;
use crate::tasks::CODE_RANGE;

pub const DENOISE_ITERS: usize = 1800;
pub const SR_ITERS: usize = 2000;
pub const INPAINT_ITERS: usize = 3000;
pub const RESTORE_ITERS: usize = 2400;
pub const FLASH_ITERS: usize = 1800;
pub const SR_FACTOR: usize = 4;

/// Per-iteration code perturbation std, as a fraction of the code range.
/// Super-resolution needs far more than denoising: the downsampler ignores
/// pixel-scale detail, and a weakly perturbed code lets the generator paint
/// the code's own noise into that blind spot.
pub const DENOISE_Z_PERTURB: f64 = 1.0 / 30.0;
pub const SR_Z_PERTURB: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TaskConfig {
    Denoise {
        input: PathBuf,
        #[serde(default)]
        gt: Option<PathBuf>,
        /// When set, `input` is clean and noise of this σ (0–255 scale) is
        /// added to it; the clean image becomes the ground truth.
        #[serde(default)]
        sigma_synth: Option<f64>,
    },
    SuperResolve {
        input: PathBuf,
        #[serde(default)]
        gt: Option<PathBuf>,
        factor: usize,
        /// When true, `input` is the high-resolution ground truth and the
        /// observation is its downsampled version.
        #[serde(default)]
        synthesize: bool,
    },
    Inpaint {
        input: PathBuf,
        #[serde(default)]
        gt: Option<PathBuf>,
        mask: String,
        #[serde(default)]
        normalized: bool,
    },
    Flash {
        flash: PathBuf,
        no_flash: PathBuf,
        #[serde(default)]
        gt: Option<PathBuf>,
    },
    Restore {
        input: PathBuf,
        #[serde(default)]
        gt: Option<PathBuf>,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Denoise { .. } => "denoise",
            TaskConfig::SuperResolve { .. } => "super_resolve",
            TaskConfig::Inpaint { .. } => "inpaint",
            TaskConfig::Flash { .. } => "flash",
            TaskConfig::Restore { .. } => "restore",
        }
    }

    pub fn default_iterations(&self) -> usize {
        match self {
            TaskConfig::Denoise { .. } => DENOISE_ITERS,
            TaskConfig::SuperResolve { .. } => SR_ITERS,
            TaskConfig::Inpaint { .. } => INPAINT_ITERS,
            TaskConfig::Flash { .. } => FLASH_ITERS,
            TaskConfig::Restore { .. } => RESTORE_ITERS,
        }
    }

    /// Default code perturbation as a fraction of the code range.
    pub fn code_perturbation(&self) -> f64 {
        match self {
            TaskConfig::Denoise { .. } => DENOISE_Z_PERTURB,
            TaskConfig::SuperResolve { .. } => SR_Z_PERTURB,
            _ => 0.0,
        }
    }
}

/// Shape and range of the uniform code tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub channels: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            lo: CODE_RANGE.0,
            hi: CODE_RANGE.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub architecture: ArchitectureSpec,
    /// `optim.seed` mirrors `seeds[0]`; each run substitutes its own seed.
    pub optim: OptimConfig,
    pub code: CodeConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    /// Average the EMA images of all seeds into `average.png`.
    pub average: bool,
    pub snapshot_at: Vec<usize>,
}

impl RunConfig {
    /// Defaults for `task`: the hourglass generator, Adam at 0.01 and the
    /// task's iteration budget.
    pub fn for_task(task: TaskConfig) -> Self {
        let code = CodeConfig::default();
        let optim = OptimConfig {
            iterations: task.default_iterations(),
            z_perturb_std: task.code_perturbation() * (code.hi - code.lo),
            ..OptimConfig::default()
        };
        Self {
            task,
            architecture: ArchitectureSpec::hourglass(),
            optim,
            code,
            out: PathBuf::from("dip-output"),
            seeds: vec![0],
            average: false,
            snapshot_at: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigError(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.optim.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::ConfigError("at least one seed is required".into()));
        }
        if self.code.channels != self.architecture.input_channels {
            return Err(Error::ConfigError(format!(
                "code has {} channels, generator expects {}",
                self.code.channels, self.architecture.input_channels
            )));
        }
        if !(self.code.lo < self.code.hi) || !self.code.lo.is_finite() || !self.code.hi.is_finite() {
            return Err(Error::ConfigError(format!(
                "code range [{}, {})",
                self.code.lo, self.code.hi
            )));
        }
        if self.snapshot_at.iter().any(|&s| s == 0 || s > self.optim.iterations) {
            return Err(Error::ConfigError(format!(
                "snapshots {:?} outside 1..={}",
                self.snapshot_at, self.optim.iterations
            )));
        }
        match &self.task {
            TaskConfig::Denoise { sigma_synth: Some(s), .. } if !(*s >= 0.0) => {
                Err(Error::ConfigError(format!("noise sigma {s}")))
            }
            TaskConfig::SuperResolve { factor: 0, .. } => Err(Error::ConfigError("factor 0".into())),
            TaskConfig::Inpaint { mask, .. } => mask
                .parse::<crate::imaging::MaskSpec>()
                .map(|_| ())
                .map_err(|e| Error::ConfigError(e.to_string())),
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON with the output directory blanked, so
    /// identical experiments written to different places share a hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config is always serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Resolves an architecture name: `hourglass`, `ed<depth>`, `unet<depth>`
/// or `resnet<blocks>`.
pub fn architecture_by_name(name: &str) -> Result<ArchitectureSpec> {
    let number = |prefix: &str| -> Option<usize> { name.strip_prefix(prefix)?.parse().ok() };
    let spec = if name == "hourglass" {
        ArchitectureSpec::hourglass()
    } else if let Some(d) = number("ed") {
        ArchitectureSpec::encoder_decoder(d)
    } else if let Some(d) = number("unet") {
        ArchitectureSpec::unet(d)
    } else if let Some(b) = number("resnet") {
        ArchitectureSpec::resnet(b, RESNET_WIDTH)
    } else {
        return Err(Error::ConfigError(format!("unknown architecture {name:?}")));
    };
    spec.validate()?;
    Ok(spec)
}

/// Channel width of the residual generators in the ablation zoo.
pub const RESNET_WIDTH: usize = 16;

pub const ABLATION_ARCHS: [&str; 6] = ["hourglass", "ed2", "ed4", "ed6", "unet5", "resnet8"];

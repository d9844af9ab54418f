//! Data terms `E(x; x0)` for the supported restoration tasks, and the
//! construction of generator codes.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::{CodeDistribution, CodeInput};
use crate::tensor::{Rng, Tensor};

/// Default code range: `z ~ U[0, 0.1)`.
pub const CODE_RANGE: (f64, f64) = (0.0, 0.1);
/// Amplitude of the uniform dither added to a flash-derived code.
pub const FLASH_DITHER: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskEnergy {
    /// `mean((x - x0)²)`; denoising and blind restoration.
    Reconstruct { observation: Tensor },
    /// `mean((d(x) - x0)²)` with `d` the Lanczos downsampler of factor `factor`.
    SuperResolve { observation: Tensor, factor: usize },
    /// `Σ ((x - x0) ⊙ m)²`, or divided by `Σ m` when `normalized`.
    Inpaint {
        observation: Tensor,
        mask: Tensor,
        normalized: bool,
    },
}

fn require_image(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    x.chw()
        .map_err(|_| Error::InvalidShape(format!("{what} must be C×H×W, got {:?}", x.shape())))
}

pub fn reconstruction_energy(observation: Tensor) -> Result<TaskEnergy> {
    require_image(&observation, "observation")?;
    Ok(TaskEnergy::Reconstruct { observation })
}

pub fn sr_energy(observation: Tensor, factor: usize) -> Result<TaskEnergy> {
    require_image(&observation, "observation")?;
    if factor == 0 {
        return Err(Error::InvalidShape("super-resolution factor 0".into()));
    }
    Ok(TaskEnergy::SuperResolve { observation, factor })
}

/// Checks that every mask entry is exactly 0 or 1.
pub fn validate_mask(mask: &Tensor) -> Result<()> {
    match mask.data().iter().find(|&&m| m != 0.0 && m != 1.0) {
        Some(bad) => Err(Error::InvalidMask(format!("mask value {bad} is not 0 or 1"))),
        None => Ok(()),
    }
}

pub fn inpainting_energy(observation: Tensor, mask: Tensor) -> Result<TaskEnergy> {
    require_image(&observation, "observation")?;
    if mask.shape() != observation.shape() {
        return Err(Error::mismatch(observation.shape(), mask.shape()));
    }
    validate_mask(&mask)?;
    Ok(TaskEnergy::Inpaint {
        observation,
        mask,
        normalized: false,
    })
}

impl TaskEnergy {
    /// The same energy divided by the known-pixel count (inpainting only).
    pub fn normalized(self) -> Self {
        match self {
            TaskEnergy::Inpaint { observation, mask, .. } => TaskEnergy::Inpaint {
                observation,
                mask,
                normalized: true,
            },
            other => other,
        }
    }

    pub fn observation(&self) -> &Tensor {
        match self {
            TaskEnergy::Reconstruct { observation }
            | TaskEnergy::SuperResolve { observation, .. }
            | TaskEnergy::Inpaint { observation, .. } => observation,
        }
    }

    /// Shape `(C, H, W)` the candidate image must have.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.observation().chw().expect("checked at construction");
        match self {
            TaskEnergy::SuperResolve { factor, .. } => (c, h * factor, w * factor),
            _ => (c, h, w),
        }
    }

    /// Records `E(x; x0)` on the tape.
    pub fn evaluate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (c, h, w) = self.output_shape();
        if tape.value(x).shape() != [c, h, w] {
            return Err(Error::mismatch(tape.value(x).shape(), &[c, h, w]));
        }
        match self {
            TaskEnergy::Reconstruct { observation } => {
                let x0 = tape.constant(observation.clone());
                tape.mse(x, x0)
            }
            TaskEnergy::SuperResolve { observation, factor } => {
                let dx = tape.lanczos_down(x, *factor)?;
                let x0 = tape.constant(observation.clone());
                tape.mse(dx, x0)
            }
            TaskEnergy::Inpaint {
                observation,
                mask,
                normalized,
            } => {
                let x0 = tape.constant(observation.clone());
                if *normalized {
                    tape.masked_mse(x, x0, mask)
                } else {
                    tape.masked_sse(x, x0, mask)
                }
            }
        }
    }

    /// Plain evaluation without recording gradients.
    pub fn value(&self, x: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let e = self.evaluate(&mut tape, v)?;
        Ok(tape.scalar(e))
    }
}

/// A flash photograph and a no-flash photograph of the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FlashPair {
    pub flash: Tensor,
    pub no_flash: Tensor,
}

impl FlashPair {
    pub fn new(flash: Tensor, no_flash: Tensor) -> Result<Self> {
        require_image(&flash, "flash image")?;
        if flash.shape() != no_flash.shape() {
            return Err(Error::mismatch(flash.shape(), no_flash.shape()));
        }
        for (name, t) in [("flash", &flash), ("no-flash", &no_flash)] {
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidRange(format!("{name} image outside [0, 1]")));
            }
        }
        Ok(Self { flash, no_flash })
    }

    pub fn swapped(&self) -> Self {
        Self {
            flash: self.no_flash.clone(),
            no_flash: self.flash.clone(),
        }
    }
}

/// Targets the no-flash image and feeds the flash image to the generator.
///
/// The guide's channels are cycled to fill `code_channels` maps and a fixed
/// uniform dither in `[0, FLASH_DITHER)` (drawn from `rng`) breaks the
/// symmetry between replicated maps.
pub fn flash_noflash_setup(
    pair: &FlashPair,
    code_channels: usize,
    rng: &mut Rng,
) -> Result<(TaskEnergy, CodeInput)> {
    let (c, h, w) = require_image(&pair.flash, "flash image")?;
    if code_channels == 0 {
        return Err(Error::InvalidShape("code needs at least one channel".into()));
    }
    let energy = reconstruction_energy(pair.no_flash.clone())?;
    let plane = h * w;
    let mut data = Vec::with_capacity(code_channels * plane);
    for k in 0..code_channels {
        data.extend_from_slice(pair.flash.channel(k % c));
    }
    let mut base = Tensor::new(&[code_channels, h, w], data)?;
    let dither = Tensor::rand_uniform(rng, base.shape(), 0.0, FLASH_DITHER)?;
    base.axpy(1.0, &dither)?;
    Ok((
        energy,
        CodeInput {
            base,
            distribution: CodeDistribution::Image,
        },
    ))
}

/// Uniform code of `channels × height × width` over [`CODE_RANGE`].
pub fn make_code_input(height: usize, width: usize, channels: usize, rng: &mut Rng) -> Result<CodeInput> {
    make_code_input_in(height, width, channels, CODE_RANGE, rng)
}

pub fn make_code_input_in(
    height: usize,
    width: usize,
    channels: usize,
    (lo, hi): (f64, f64),
    rng: &mut Rng,
) -> Result<CodeInput> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidShape(format!(
            "code dimensions {channels}×{height}×{width}"
        )));
    }
    Ok(CodeInput {
        base: Tensor::rand_uniform(rng, &[channels, height, width], lo, hi)?,
        distribution: CodeDistribution::Uniform { lo, hi },
    })
}

//! The restoration loop: gradient steps on the generator parameters from a
//! random start, stopped after a fixed budget, with an exponential moving
//! average of the generated images.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::imaging::psnr;
use crate::network::{ArchitectureSpec, CodeInput, Generator, ParameterSet};
use crate::tasks::TaskEnergy;
use crate::tensor::{reflect_pad, Rng, Tensor};

/// Parameters whose magnitude exceeds this are treated as divergence; a
/// healthy run drifts by at most `lr · iterations` from an O(1) start.
pub const PARAMETER_BLOWUP: f64 = 1e8;

/// An energy this many times above the first iteration's is divergence.
/// Adam moves each parameter by at most `lr` per step, so an unnormalized
/// generator can grow its output geometrically with depth long before any
/// parameter or value overflows.
pub const ENERGY_BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::Sgd { lr } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            OptimizerKind::Adam { beta1, beta2, eps, .. } => OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            },
            OptimizerKind::Sgd { .. } => OptimizerKind::Sgd { lr },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub ema_decay: f64,
    /// Std of the Gaussian noise added to the code at every iteration.
    pub z_perturb_std: f64,
    pub trace_every: usize,
    /// Seeds parameter initialization and code perturbations.
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::adam(0.01),
            iterations: 1800,
            ema_decay: 0.99,
            z_perturb_std: 0.0,
            trace_every: 10,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        match self.optimizer {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr > 0.0) || !lr.is_finite() {
                    return bad(format!("learning rate {lr}"));
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return bad(format!("adam betas ({beta1}, {beta2}) outside [0, 1)"));
                }
                if !(eps > 0.0) {
                    return bad(format!("adam eps {eps}"));
                }
            }
            OptimizerKind::Sgd { lr } => {
                if !(lr > 0.0) || !lr.is_finite() {
                    return bad(format!("learning rate {lr}"));
                }
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema decay {} outside [0, 1)", self.ema_decay));
        }
        if !(self.z_perturb_std >= 0.0) || !self.z_perturb_std.is_finite() {
            return bad(format!("code perturbation std {}", self.z_perturb_std));
        }
        if self.trace_every == 0 {
            return bad("trace_every must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> i32 {
        self.step
    }
}

fn check_pairs(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::mismatch(&[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::mismatch(p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_pairs(params, grads)?;
    if state.first.len() != params.len() {
        return Err(Error::mismatch(&[state.first.len()], &[params.len()]));
    }
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step);
    let c2 = 1.0 - beta2.powi(state.step);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    check_pairs(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        state: AdamState,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        match kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                state: AdamState::new(params),
            },
            OptimizerKind::Sgd { lr } => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                state,
            } => adam_step(params, grads, state, *lr, *beta1, *beta2, *eps),
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
        }
    }
}

/// `avg ← decay·avg + (1 - decay)·x`; the first call stores `x`.
pub fn ema_update(avg: &mut Option<Tensor>, x: &Tensor, decay: f64) -> Result<()> {
    match avg {
        None => *avg = Some(x.clone()),
        Some(a) => {
            if a.shape() != x.shape() {
                return Err(Error::mismatch(a.shape(), x.shape()));
            }
            for (ai, &xi) in a.data_mut().iter_mut().zip(x.data()) {
                *ai = decay * *ai + (1.0 - decay) * xi;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub energy: f64,
    pub psnr_vs_gt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RestorationResult {
    /// `f_θ*(z)` with the final parameters, clamped to `[0, 1]`.
    pub image: Tensor,
    /// Moving average of the per-iteration outputs, clamped to `[0, 1]`.
    pub ema_image: Tensor,
    pub trace: Vec<TracePoint>,
    pub wall_time_s: f64,
    pub psnr_final: Option<f64>,
    pub psnr_ema: Option<f64>,
    pub parameter_count: usize,
    /// Clamped outputs at the requested iterations.
    pub snapshots: Vec<(usize, Tensor)>,
    pub params: ParameterSet,
}

impl RestorationResult {
    pub fn final_energy(&self) -> f64 {
        self.trace.last().map(|t| t.energy).unwrap_or(f64::NAN)
    }
}

/// Extras for [`run_restoration_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Clean image of the output's shape, for PSNR bookkeeping only.
    pub ground_truth: Option<Tensor>,
    /// Border excluded from PSNR on every side.
    pub psnr_crop: usize,
    pub snapshot_at: Vec<usize>,
}

/// Writes the loss trace as `iteration,energy,psnr_vs_gt`.
pub fn trace_to_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iteration,energy,psnr_vs_gt\n");
    for t in trace {
        let psnr = t.psnr_vs_gt.map(|p| format!("{p}")).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", t.iteration, t.energy, psnr));
    }
    out
}

pub fn run_restoration(
    energy: &TaskEnergy,
    spec: &ArchitectureSpec,
    code: &CodeInput,
    cfg: &OptimConfig,
) -> Result<RestorationResult> {
    run_restoration_with(energy, spec, code, cfg, &RunOptions::default())
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Fits the generator to `energy` for exactly `cfg.iterations` steps.
///
/// The code is reflect-padded to a multiple of the generator's total stride
/// and the output cropped back to the energy's expected shape.
pub fn run_restoration_with(
    energy: &TaskEnergy,
    spec: &ArchitectureSpec,
    code: &CodeInput,
    cfg: &OptimConfig,
    opts: &RunOptions,
) -> Result<RestorationResult> {
    cfg.validate()?;
    let started = Instant::now();
    let generator = Generator::new(spec.clone())?;
    let (out_c, out_h, out_w) = energy.output_shape();
    if out_c != spec.output_channels {
        return Err(Error::ShapeMismatch {
            left: vec![out_c, out_h, out_w],
            right: vec![spec.output_channels, out_h, out_w],
        });
    }
    let (_, zh, zw) = code.base.chw()?;
    if (zh, zw) != (out_h, out_w) {
        return Err(Error::mismatch(code.base.shape(), &[spec.input_channels, out_h, out_w]));
    }
    if let Some(gt) = &opts.ground_truth {
        if gt.shape() != [out_c, out_h, out_w] {
            return Err(Error::mismatch(gt.shape(), &[out_c, out_h, out_w]));
        }
    }
    let m = spec.size_multiple();
    let base = reflect_pad(&code.base, round_up(out_h, m), round_up(out_w, m))?;

    let mut params = generator.init(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, params.tensors());
    let mut perturb_rng = Rng::new(cfg.seed).derive(0x7a_7065_7274);
    let mut ema: Option<Tensor> = None;
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut first_energy = None;

    let psnr_of = |x: &Tensor| -> Result<Option<f64>> {
        opts.ground_truth
            .as_ref()
            .map(|gt| psnr(&x.clamp(0.0, 1.0), gt, opts.psnr_crop))
            .transpose()
    };

    for iteration in 1..=cfg.iterations {
        let z = if cfg.z_perturb_std > 0.0 {
            let noise = Tensor::rand_normal(&mut perturb_rng, base.shape(), 0.0, cfg.z_perturb_std)?;
            base.add(&noise)?
        } else {
            base.clone()
        };
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let zv = tape.constant(z);
        let full = generator.forward(&mut tape, &pv, zv)?;
        let out = if (out_h, out_w) == (base.shape()[1], base.shape()[2]) {
            full
        } else {
            tape.crop(full, 0, 0, out_h, out_w)?
        };
        let loss = energy.evaluate(&mut tape, out)?;
        let value = tape.scalar(loss);
        let record = iteration % cfg.trace_every == 0 || iteration == cfg.iterations;
        let first = *first_energy.get_or_insert(value);
        if !value.is_finite() || (first > 0.0 && value > ENERGY_BLOWUP * first) {
            return Err(Error::DivergenceDetected {
                iteration,
                energy: value,
                trace,
            });
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = pv
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| p.full_like(0.0)))
            .collect();
        let image = tape.value(out).clone();
        drop(tape);

        ema_update(&mut ema, &image, cfg.ema_decay)?;
        if record {
            trace.push(TracePoint {
                iteration,
                energy: value,
                psnr_vs_gt: psnr_of(&image)?,
            });
        }
        if opts.snapshot_at.contains(&iteration) {
            snapshots.push((iteration, image.clamp(0.0, 1.0)));
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::DivergenceDetected {
                iteration,
                energy: value,
                trace,
            });
        }
        optimizer.step(params.tensors_mut(), &grads)?;
        let blown = params
            .tensors()
            .iter()
            .any(|p| p.data().iter().any(|v| !(v.abs() <= PARAMETER_BLOWUP)));
        if blown {
            return Err(Error::DivergenceDetected {
                iteration,
                energy: value,
                trace,
            });
        }
    }

    let full = generator.generate(&params, &base)?;
    let image = if full.shape() == [out_c, out_h, out_w] {
        full
    } else {
        full.crop(0, 0, out_h, out_w)?
    }
    .clamp(0.0, 1.0);
    let ema_image = ema.expect("at least one iteration").clamp(0.0, 1.0);
    let psnr_final = psnr_of(&image)?;
    let psnr_ema = psnr_of(&ema_image)?;
    Ok(RestorationResult {
        image,
        ema_image,
        trace,
        wall_time_s: started.elapsed().as_secs_f64(),
        psnr_final,
        psnr_ema,
        parameter_count: generator.parameter_count(),
        snapshots,
        params,
    })
}

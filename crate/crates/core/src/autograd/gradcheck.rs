//! Central finite-difference check of tape gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates to probe; every coordinate is checked when there are fewer.
    pub samples: usize,
    pub seed: u64,
    /// Gradient magnitudes below this are compared in absolute terms.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 200,
            seed: 0,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step perturbation moved an activation across its
    /// kink; the difference quotient is meaningless there.
    pub skipped_kinks: usize,
    /// `(parameter index, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NotAScalar(tape.value(out).shape().to_vec()));
    }
    Ok((tape.scalar(out), tape.activation_pattern()))
}

/// Compares [`Tape::backward`] against `(f(θ + h·e) - f(θ - h·e)) / 2h` on
/// sampled coordinates of `params`.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, abs_floor)`.
pub fn grad_check<F>(f: F, params: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::InvalidRange(format!("finite-difference step {}", cfg.step)));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let base_pattern = tape.activation_pattern();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| p.full_like(0.0)))
        .collect();
    drop(tape);

    let total: usize = params.iter().map(Tensor::len).sum();
    let coords: Vec<(usize, usize)> = if total <= cfg.samples {
        params
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| (0..p.len()).map(move |i| (pi, i)))
            .collect()
    } else {
        let mut rng = Rng::new(cfg.seed);
        (0..cfg.samples)
            .map(|_| {
                let mut flat = rng.below(total);
                let mut pi = 0;
                while flat >= params[pi].len() {
                    flat -= params[pi].len();
                    pi += 1;
                }
                (pi, flat)
            })
            .collect()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for (pi, i) in coords {
        let orig = work[pi].data()[i];
        work[pi].data_mut()[i] = orig + cfg.step;
        let (plus, plus_pattern) = evaluate(&f, &work)?;
        work[pi].data_mut()[i] = orig - cfg.step;
        let (minus, minus_pattern) = evaluate(&f, &work)?;
        work[pi].data_mut()[i] = orig;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[pi].data()[i];
        let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((pi, i));
        }
    }
    Ok(report)
}

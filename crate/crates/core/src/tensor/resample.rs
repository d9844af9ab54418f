//! Separable resampling: nearest and bilinear upsampling, Lanczos
//! downsampling.
//!
//! Every resampler is a pair of 1-D sparse linear maps (rows, then columns).
//! Each output sample is evaluated relative to an anchor tap,
//! `x[a] + Σ w_i (x[i] - x[a])`, so constant signals come out bit-exact
//! whatever rounding the weights carry.

use super::Tensor;
use crate::error::{Error, Result};

/// Lobes of the Lanczos window.
pub const LANCZOS_SUPPORT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    NearestUp(usize),
    BilinearUp(usize),
    LanczosDown(usize),
}

/// One axis of a separable resampler.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableWeights {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
    pub anchors: Vec<usize>,
}

impl SeparableWeights {
    pub fn from_taps(in_len: usize, raw: Vec<Vec<(usize, f64)>>) -> Self {
        let mut taps = Vec::with_capacity(raw.len());
        let mut anchors = Vec::with_capacity(raw.len());
        for row in raw {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (i, w) in row {
                match merged.iter_mut().find(|(j, _)| *j == i) {
                    Some(slot) => slot.1 += w,
                    None => merged.push((i, w)),
                }
            }
            let anchor = merged
                .iter()
                .enumerate()
                .fold(0, |best, (k, &(_, w))| if w > merged[best].1 { k } else { best });
            anchors.push(merged[anchor].0);
            taps.push(merged);
        }
        Self {
            in_len,
            taps,
            anchors,
        }
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    #[inline]
    fn apply_line(&self, src: &[f64], dst: &mut [f64], stride_in: usize, stride_out: usize) {
        for (j, (taps, &a)) in self.taps.iter().zip(&self.anchors).enumerate() {
            let base = src[a * stride_in];
            let mut acc = 0.0;
            for &(i, w) in taps {
                if i != a {
                    acc += w * (src[i * stride_in] - base);
                }
            }
            dst[j * stride_out] = base + acc;
        }
    }

    #[inline]
    fn adjoint_line(&self, grad_out: &[f64], grad_in: &mut [f64], stride_in: usize, stride_out: usize) {
        for (j, (taps, &a)) in self.taps.iter().zip(&self.anchors).enumerate() {
            let g = grad_out[j * stride_out];
            let mut off_anchor = 0.0;
            for &(i, w) in taps {
                if i != a {
                    grad_in[i * stride_in] += w * g;
                    off_anchor += w;
                }
            }
            grad_in[a * stride_in] += (1.0 - off_anchor) * g;
        }
    }

    /// Dense `out_len × in_len` matrix of the effective linear map.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.taps
            .iter()
            .zip(&self.anchors)
            .map(|(taps, &a)| {
                let mut row = vec![0.0; self.in_len];
                let mut off = 0.0;
                for &(i, w) in taps {
                    if i != a {
                        row[i] += w;
                        off += w;
                    }
                }
                row[a] += 1.0 - off;
                row
            })
            .collect()
    }
}

/// Mirror an index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x == x.round() {
        // sin(πk) is not exactly zero in floating point
        0.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// `sinc(x) · sinc(x/a)` on `|x| < a`, zero elsewhere.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

/// Antialiased Lanczos-`LANCZOS_SUPPORT` reduction of one axis by `factor`.
pub fn lanczos_down_weights(in_len: usize, factor: usize) -> Result<SeparableWeights> {
    if factor == 0 || in_len % factor != 0 {
        return Err(Error::InvalidShape(format!(
            "length {in_len} is not divisible by factor {factor}"
        )));
    }
    let t = factor as f64;
    let radius = LANCZOS_SUPPORT as f64 * t;
    let raw = (0..in_len / factor)
        .map(|j| {
            let center = (j as f64 + 0.5) * t - 0.5;
            let first = (center - radius).ceil() as isize;
            let last = (center + radius).floor() as isize;
            let mut taps: Vec<(usize, f64)> = (first..=last)
                .filter_map(|i| {
                    let w = lanczos_kernel((i as f64 - center) / t, LANCZOS_SUPPORT);
                    (w != 0.0).then(|| (reflect_index(i, in_len), w))
                })
                .collect();
            let total: f64 = taps.iter().map(|(_, w)| w).sum();
            for tap in &mut taps {
                tap.1 /= total;
            }
            taps
        })
        .collect();
    Ok(SeparableWeights::from_taps(in_len, raw))
}

/// Half-pixel-centred linear interpolation, edge samples replicated.
pub fn bilinear_weights(in_len: usize, factor: usize) -> SeparableWeights {
    let t = factor as f64;
    let last = in_len as isize - 1;
    let raw = (0..in_len * factor)
        .map(|j| {
            let src = (j as f64 + 0.5) / t - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let i0 = i0 as isize;
            let lo = i0.clamp(0, last) as usize;
            let hi = (i0 + 1).clamp(0, last) as usize;
            vec![(lo, 1.0 - frac), (hi, frac)]
        })
        .collect();
    SeparableWeights::from_taps(in_len, raw)
}

fn nearest_weights(in_len: usize, factor: usize) -> SeparableWeights {
    let raw = (0..in_len * factor).map(|j| vec![(j / factor, 1.0)]).collect();
    SeparableWeights::from_taps(in_len, raw)
}

impl ResampleMode {
    pub fn factor(&self) -> usize {
        match *self {
            ResampleMode::NearestUp(t) | ResampleMode::BilinearUp(t) | ResampleMode::LanczosDown(t) => t,
        }
    }

    /// Row and column weights for a `height × width` input.
    pub fn weights(&self, height: usize, width: usize) -> Result<(SeparableWeights, SeparableWeights)> {
        let t = self.factor();
        if t == 0 {
            return Err(Error::InvalidShape("resampling factor 0".into()));
        }
        Ok(match *self {
            ResampleMode::NearestUp(_) => (nearest_weights(height, t), nearest_weights(width, t)),
            ResampleMode::BilinearUp(_) => (bilinear_weights(height, t), bilinear_weights(width, t)),
            ResampleMode::LanczosDown(_) => (
                lanczos_down_weights(height, t)?,
                lanczos_down_weights(width, t)?,
            ),
        })
    }
}

/// Applies a separable map to a `C×H×W` tensor: columns of each row first,
/// then rows.
pub fn apply_separable(input: &Tensor, rows: &SeparableWeights, cols: &SeparableWeights) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if rows.in_len != h || cols.in_len != w {
        return Err(Error::mismatch(input.shape(), &[c, rows.in_len, cols.in_len]));
    }
    let (ho, wo) = (rows.out_len(), cols.out_len());
    let mut mid = vec![0.0; c * h * wo];
    for (src, dst) in input.data().chunks_exact(w).zip(mid.chunks_exact_mut(wo)) {
        cols.apply_line(src, dst, 1, 1);
    }
    let mut out = vec![0.0; c * ho * wo];
    for (src, dst) in mid.chunks_exact(h * wo).zip(out.chunks_exact_mut(ho * wo)) {
        for x in 0..wo {
            rows.apply_line(&src[x..], &mut dst[x..], wo, wo);
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

/// Adjoint of [`apply_separable`] for an output gradient of shape `C×H'×W'`.
pub fn apply_separable_adjoint(
    grad_out: &Tensor,
    rows: &SeparableWeights,
    cols: &SeparableWeights,
) -> Result<Tensor> {
    let (c, ho, wo) = grad_out.chw()?;
    let (h, w) = (rows.in_len, cols.in_len);
    if rows.out_len() != ho || cols.out_len() != wo {
        return Err(Error::mismatch(grad_out.shape(), &[c, rows.out_len(), cols.out_len()]));
    }
    let mut mid = vec![0.0; c * h * wo];
    for (src, dst) in grad_out.data().chunks_exact(ho * wo).zip(mid.chunks_exact_mut(h * wo)) {
        for x in 0..wo {
            rows.adjoint_line(&src[x..], &mut dst[x..], wo, wo);
        }
    }
    let mut out = vec![0.0; c * h * w];
    for (src, dst) in mid.chunks_exact(wo).zip(out.chunks_exact_mut(w)) {
        cols.adjoint_line(src, dst, 1, 1);
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

pub fn resample_raw(input: &Tensor, mode: ResampleMode) -> Result<Tensor> {
    let (_, h, w) = input.chw()?;
    let (rows, cols) = mode.weights(h, w)?;
    apply_separable(input, &rows, &cols)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn nearest_up_raw(input: &Tensor, factor: usize) -> Result<Tensor> {
    resample_raw(input, ResampleMode::NearestUp(factor))
}

/// Reflect-pads a `C×H×W` tensor on the bottom and right edges up to
/// `height × width`.
pub fn reflect_pad(input: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if height < h || width < w {
        return Err(Error::InvalidShape(format!(
            "cannot pad {h}×{w} down to {height}×{width}"
        )));
    }
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = input.channel(ch);
        for y in 0..height {
            let sy = reflect_index(y as isize, h);
            let row = &plane[sy * w..(sy + 1) * w];
            out.extend((0..width).map(|x| row[reflect_index(x as isize, w)]));
        }
    }
    Ok(Tensor::from_parts(vec![c, height, width], out))
}

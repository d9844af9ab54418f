//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended
//! in creation order, so inputs always precede their consumers and the tape is
//! acyclic by construction; [`Tape::backward`] walks it once in reverse.
//! The restoration loop builds a fresh tape for every iteration.
//!
//! ```
//! use dip_core::autograd::Tape;
//! use dip_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[1], vec![3.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.mean(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{
    apply_separable, apply_separable_adjoint, col2im, conv2d_raw_with_cols, ConvGeometry,
    gemm, MatRef, ResampleMode, SeparableWeights, Tensor,
};

pub type NodeId = usize;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    node: NodeId,
    requires_grad: bool,
}

impl Var {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ChannelBias {
        x: NodeId,
        bias: NodeId,
    },
    ChannelAffine {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        geometry: ConvGeometry,
        cols: Vec<f64>,
    },
    Resample {
        x: NodeId,
        rows: SeparableWeights,
        cols: SeparableWeights,
    },
    Concat(Vec<NodeId>),
    Crop {
        x: NodeId,
        top: usize,
        left: usize,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Sigmoid(NodeId),
    InstanceNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mse(NodeId, NodeId),
    MaskedSse {
        a: NodeId,
        b: NodeId,
        mask: Tensor,
        weight: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_leaf.get(&v.node)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.by_leaf.remove(&v.node)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.by_leaf.iter().map(|(&k, v)| (k, v))
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(acc) => {
            for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                *a += g;
            }
        }
        None => *slot = Some(grad),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.node].value
    }

    /// Value of a single-element variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.node].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let node = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            node,
            requires_grad,
        }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a.node, b.node]);
        Ok(self.push(value, Op::Add(a.node, b.node), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs(&[a.node, b.node]);
        Ok(self.push(value, Op::Sub(a.node, b.node), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.needs(&[a.node, b.node]);
        Ok(self.push(value, Op::Mul(a.node, b.node), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a.node, c), a.requires_grad)
    }

    fn check_channel_vector(&self, x: Var, v: Var) -> Result<(usize, usize)> {
        let (c, h, w) = self.value(x).chw()?;
        if self.value(v).shape() != [c] {
            return Err(Error::mismatch(self.value(x).shape(), self.value(v).shape()));
        }
        Ok((c, h * w))
    }

    /// Adds `bias[c]` to every sample of channel `c`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, plane) = self.check_channel_vector(x, bias)?;
        let b = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .zip(b)
            .flat_map(|(row, &bc)| row.iter().map(move |&v| v + bc))
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        let rg = self.needs(&[x.node, bias.node]);
        Ok(self.push(value, Op::ChannelBias { x: x.node, bias: bias.node }, rg))
    }

    /// `scale[c]·x + shift[c]` per channel.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (_, plane) = self.check_channel_vector(x, scale)?;
        self.check_channel_vector(x, shift)?;
        let (s, t) = (self.value(scale).data(), self.value(shift).data());
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .enumerate()
            .flat_map(|(c, row)| row.iter().map(move |&v| s[c] * v + t[c]))
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        let rg = self.needs(&[x.node, scale.node, shift.node]);
        Ok(self.push(
            value,
            Op::ChannelAffine {
                x: x.node,
                scale: scale.node,
                shift: shift.node,
            },
            rg,
        ))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, pad: usize) -> Result<Var> {
        let (value, cols, geometry) =
            conv2d_raw_with_cols(self.value(input), self.value(kernels), stride, pad)?;
        let rg = self.needs(&[input.node, kernels.node]);
        // Kernel gradients need the patch matrix; input gradients do not.
        let cols = if kernels.requires_grad { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv2d {
                input: input.node,
                kernels: kernels.node,
                geometry,
                cols,
            },
            rg,
        ))
    }

    pub fn resample(&mut self, x: Var, mode: ResampleMode) -> Result<Var> {
        let (_, h, w) = self.value(x).chw()?;
        let (rows, cols) = mode.weights(h, w)?;
        let value = apply_separable(self.value(x), &rows, &cols)?;
        Ok(self.push(value, Op::Resample { x: x.node, rows, cols }, x.requires_grad))
    }

    pub fn nearest_up(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.resample(x, ResampleMode::NearestUp(factor))
    }

    pub fn bilinear_up(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.resample(x, ResampleMode::BilinearUp(factor))
    }

    pub fn lanczos_down(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.resample(x, ResampleMode::LanczosDown(factor))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&tensors)?;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.node).collect();
        let rg = self.needs(&ids);
        Ok(self.push(value, Op::Concat(ids), rg))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        let value = self.value(x).crop(top, left, height, width)?;
        Ok(self.push(value, Op::Crop { x: x.node, top, left }, x.requires_grad))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { x: x.node, slope }, x.requires_grad)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x.node), x.requires_grad)
    }

    /// Per-channel normalization over the spatial axes followed by a learned
    /// per-channel affine map.
    pub fn instance_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (_, plane) = self.check_channel_vector(x, scale)?;
        self.check_channel_vector(x, shift)?;
        if plane == 1 {
            return Err(Error::DegenerateNormalization(self.value(x).shape().to_vec()));
        }
        let (s, t) = (self.value(scale).data(), self.value(shift).data());
        let src = self.value(x);
        let mut normalized = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(s.len());
        let mut out = Vec::with_capacity(src.len());
        for (c, row) in src.data().chunks_exact(plane).enumerate() {
            let mean = row.iter().sum::<f64>() / plane as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for &v in row {
                let n = (v - mean) * inv;
                normalized.push(n);
                out.push(s[c] * n + t[c]);
            }
        }
        let value = Tensor::new(src.shape(), out)?;
        let rg = self.needs(&[x.node, scale.node, shift.node]);
        Ok(self.push(
            value,
            Op::InstanceNorm {
                x: x.node,
                scale: scale.node,
                shift: shift.node,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// `mean((a - b)²)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::mismatch(va.shape(), vb.shape()));
        }
        let sse: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(sse / va.len() as f64);
        let rg = self.needs(&[a.node, b.node]);
        Ok(self.push(value, Op::Mse(a.node, b.node), rg))
    }

    fn masked(&mut self, a: Var, b: Var, mask: &Tensor, normalize: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::mismatch(va.shape(), vb.shape()));
        }
        if mask.shape() != va.shape() {
            return Err(Error::mismatch(va.shape(), mask.shape()));
        }
        let weight = if normalize {
            1.0 / mask.sum().max(1.0)
        } else {
            1.0
        };
        let sse: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .zip(mask.data())
            .map(|((x, y), &m)| {
                let r = masked_residual(*x, *y, m);
                r * r
            })
            .sum();
        let value = Tensor::scalar(sse * weight);
        let rg = self.needs(&[a.node, b.node]);
        Ok(self.push(
            value,
            Op::MaskedSse {
                a: a.node,
                b: b.node,
                mask: mask.clone(),
                weight,
            },
            rg,
        ))
    }

    /// `Σ ((a - b) ⊙ m)²`.
    pub fn masked_sse(&mut self, a: Var, b: Var, mask: &Tensor) -> Result<Var> {
        self.masked(a, b, mask, false)
    }

    /// [`Tape::masked_sse`] divided by the number of known entries `Σ m`.
    pub fn masked_mse(&mut self, a: Var, b: Var, mask: &Tensor) -> Result<Var> {
        self.masked(a, b, mask, true)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x.node), x.requires_grad)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(value, Op::Mean(x.node), x.requires_grad)
    }

    /// Sign pattern of every leaky-ReLU input on the tape. Two evaluations
    /// with equal patterns lie on the same linear piece of every activation.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { x, .. } => Some(&self.nodes[x].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Gradients of a scalar `loss` with respect to every leaf requiring them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NotAScalar(shape.to_vec()));
        }
        self.backward_from(loss, self.value(loss).full_like(1.0))
    }

    /// Vector-Jacobian product seeded with `seed` at `output`.
    pub fn backward_from(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::mismatch(seed.shape(), self.value(output).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.node).map(|_| None).collect();
        grads[output.node] = Some(seed);
        let mut by_leaf = BTreeMap::new();
        for id in (0..=output.node).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                by_leaf.insert(id, g);
                continue;
            }
            self.propagate(node, g, &mut grads)?;
        }
        Ok(Gradients { by_leaf })
    }

    fn propagate(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let rg = |id: NodeId| self.nodes[id].requires_grad;
        let val = |id: NodeId| &self.nodes[id].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(*b) {
                    accumulate(&mut grads[*b], g.clone());
                }
                if rg(*a) {
                    accumulate(&mut grads[*a], g);
                }
            }
            Op::Sub(a, b) => {
                if rg(*b) {
                    accumulate(&mut grads[*b], g.scale(-1.0));
                }
                if rg(*a) {
                    accumulate(&mut grads[*a], g);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    accumulate(&mut grads[*a], g.mul(val(*b))?);
                }
                if rg(*b) {
                    accumulate(&mut grads[*b], g.mul(val(*a))?);
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[*a], g.scale(*c)),
            Op::ChannelBias { x, bias } => {
                if rg(*bias) {
                    let plane = g.len() / val(*bias).len();
                    let db: Vec<f64> = g.data().chunks_exact(plane).map(|r| r.iter().sum()).collect();
                    accumulate(&mut grads[*bias], Tensor::new(val(*bias).shape(), db)?);
                }
                if rg(*x) {
                    accumulate(&mut grads[*x], g);
                }
            }
            Op::ChannelAffine { x, scale, shift } => {
                let plane = g.len() / val(*scale).len();
                if rg(*scale) {
                    let ds: Vec<f64> = g
                        .data()
                        .chunks_exact(plane)
                        .zip(val(*x).data().chunks_exact(plane))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads[*scale], Tensor::new(val(*scale).shape(), ds)?);
                }
                if rg(*shift) {
                    let dt: Vec<f64> = g.data().chunks_exact(plane).map(|r| r.iter().sum()).collect();
                    accumulate(&mut grads[*shift], Tensor::new(val(*shift).shape(), dt)?);
                }
                if rg(*x) {
                    let s = val(*scale).data();
                    let dx: Vec<f64> = g
                        .data()
                        .chunks_exact(plane)
                        .enumerate()
                        .flat_map(|(c, r)| r.iter().map(move |v| v * s[c]))
                        .collect();
                    accumulate(&mut grads[*x], Tensor::new(g.shape(), dx)?);
                }
            }
            Op::Conv2d {
                input,
                kernels,
                geometry,
                cols,
            } => {
                let gm = geometry;
                let (k, p) = (gm.patch_len(), gm.out_pixels());
                if rg(*kernels) {
                    let patches: &[f64] = if gm.is_pointwise() { val(*input).data() } else { cols };
                    let mut dk = vec![0.0; gm.c_out * k];
                    gemm(
                        gm.c_out,
                        p,
                        k,
                        MatRef::row_major(g.data(), p),
                        MatRef::transposed(patches, p),
                        0.0,
                        &mut dk,
                    );
                    accumulate(&mut grads[*kernels], Tensor::new(val(*kernels).shape(), dk)?);
                }
                if rg(*input) {
                    let mut dcols = vec![0.0; k * p];
                    gemm(
                        k,
                        gm.c_out,
                        p,
                        MatRef::transposed(val(*kernels).data(), k),
                        MatRef::row_major(g.data(), p),
                        0.0,
                        &mut dcols,
                    );
                    let dx = if gm.is_pointwise() { dcols } else { col2im(&dcols, gm) };
                    accumulate(&mut grads[*input], Tensor::new(val(*input).shape(), dx)?);
                }
            }
            Op::Resample { x, rows, cols } => {
                accumulate(&mut grads[*x], apply_separable_adjoint(&g, rows, cols)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if rg(p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        accumulate(&mut grads[p], Tensor::new(val(p).shape(), slice)?);
                    }
                    offset += n;
                }
            }
            Op::Crop { x, top, left } => {
                let (c, h, w) = val(*x).chw()?;
                let (_, ch, cw) = g.chw()?;
                let mut dx = vec![0.0; c * h * w];
                for (plane, src) in g.data().chunks_exact(ch * cw).enumerate() {
                    for (y, row) in src.chunks_exact(cw).enumerate() {
                        let start = (plane * h + top + y) * w + left;
                        dx[start..start + cw].copy_from_slice(row);
                    }
                }
                accumulate(&mut grads[*x], Tensor::new(val(*x).shape(), dx)?);
            }
            Op::LeakyRelu { x, slope } => {
                let dx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv })
                    .collect();
                accumulate(&mut grads[*x], Tensor::new(g.shape(), dx)?);
            }
            Op::Sigmoid(x) => {
                let dx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                accumulate(&mut grads[*x], Tensor::new(g.shape(), dx)?);
            }
            Op::InstanceNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let channels = inv_std.len();
                let plane = g.len() / channels;
                let s = val(*scale).data();
                let mut dscale = vec![0.0; channels];
                let mut dshift = vec![0.0; channels];
                let mut dx = vec![0.0; g.len()];
                for c in 0..channels {
                    let range = c * plane..(c + 1) * plane;
                    let gr = &g.data()[range.clone()];
                    let nr = &normalized[range.clone()];
                    let sum_g: f64 = gr.iter().sum();
                    let sum_gn: f64 = gr.iter().zip(nr).map(|(a, b)| a * b).sum();
                    dshift[c] = sum_g;
                    dscale[c] = sum_gn;
                    // dL/dx = γ·σ⁻¹/N · (N·g − Σg − x̂·Σ(g·x̂))
                    let k = s[c] * inv_std[c] / plane as f64;
                    for ((d, &gv), &nv) in dx[range].iter_mut().zip(gr).zip(nr) {
                        *d = k * (plane as f64 * gv - sum_g - nv * sum_gn);
                    }
                }
                if rg(*scale) {
                    accumulate(&mut grads[*scale], Tensor::new(&[channels], dscale)?);
                }
                if rg(*shift) {
                    accumulate(&mut grads[*shift], Tensor::new(&[channels], dshift)?);
                }
                if rg(*x) {
                    accumulate(&mut grads[*x], Tensor::new(g.shape(), dx)?);
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let k = 2.0 * g.data()[0] / va.len() as f64;
                let da: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| k * (x - y)).collect();
                let da = Tensor::new(va.shape(), da)?;
                if rg(*b) {
                    accumulate(&mut grads[*b], da.scale(-1.0));
                }
                if rg(*a) {
                    accumulate(&mut grads[*a], da);
                }
            }
            Op::MaskedSse { a, b, mask, weight } => {
                let (va, vb) = (val(*a), val(*b));
                let k = 2.0 * g.data()[0] * weight;
                let da: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .zip(mask.data())
                    .map(|((x, y), &m)| k * masked_residual(*x, *y, m) * m)
                    .collect();
                let da = Tensor::new(va.shape(), da)?;
                if rg(*b) {
                    let db = da.map(|v| if v == 0.0 { 0.0 } else { -v });
                    accumulate(&mut grads[*b], db);
                }
                if rg(*a) {
                    accumulate(&mut grads[*a], da);
                }
            }
            Op::Sum(x) => {
                accumulate(&mut grads[*x], val(*x).full_like(g.data()[0]));
            }
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                accumulate(&mut grads[*x], val(*x).full_like(g.data()[0] / n));
            }
        }
        Ok(())
    }
}

/// `(a - b)·m`, with a positive zero wherever the mask is zero so that the
/// value at masked coordinates carries no trace of `a` or `b`.
#[inline]
fn masked_residual(a: f64, b: f64, m: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        (a - b) * m
    }
}

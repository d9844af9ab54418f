//! Dense tensors and the raw numeric kernels wrapped by [`crate::autograd`].
//!
//! Images are stored channels-first (`C×H×W`) in row-major order with values
//! nominally in `[0, 1]`.

mod conv;
mod resample;
mod rng;

pub use conv::{col2im, conv2d_raw, conv2d_raw_with_cols, im2col, ConvGeometry};
pub(crate) use conv::{gemm, MatRef};
pub use resample::{
    apply_separable, apply_separable_adjoint, bilinear_weights, lanczos_down_weights, lanczos_kernel, nearest_up_raw, reflect_index,
    reflect_pad, resample_raw, ResampleMode, SeparableWeights, LANCZOS_SUPPORT,
};
pub use rng::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Scale(f64),
    Clamp(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Sum,
    Mean,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("rank-0 shape".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!("zero dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn new_filled(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new_filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::new_filled(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Same shape as `self`, every element `value`.
    pub fn full_like(&self, value: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![value; self.data.len()],
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn rand_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange(format!("uniform [{lo}, {hi})")));
        }
        let n = check_shape(shape)?;
        let width = hi - lo;
        let data = (0..n)
            .map(|_| {
                let v = lo + width * rng.next_f64();
                // lo + width*u can round up to hi
                if v < hi {
                    v
                } else {
                    hi.next_down()
                }
            })
            .collect();
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn rand_normal(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidRange(format!("normal std {std}")));
        }
        let n = check_shape(shape)?;
        let data = if std == 0.0 {
            vec![mean; n]
        } else {
            (0..n).map(|_| mean + std * rng.standard_normal()).collect()
        };
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Interprets a rank-3 tensor as `(C, H, W)`.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidShape(format!(
                "expected C×H×W, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::mismatch(&self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ew_binary(&self, other: &Tensor, op: BinaryOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::mismatch(&self.shape, &other.shape));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn ew_unary(&self, op: UnaryOp) -> Result<Tensor> {
        let data = match op {
            UnaryOp::Scale(c) => self.data.iter().map(|&a| a * c).collect(),
            UnaryOp::Clamp(lo, hi) => {
                if lo > hi {
                    return Err(Error::InvalidRange(format!("clamp [{lo}, {hi}]")));
                }
                self.data.iter().map(|&a| a.clamp(lo, hi)).collect()
            }
        };
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&a| f(a)).collect())
    }

    pub fn reduce(&self, op: Reduction) -> f64 {
        let sum: f64 = self.data.iter().sum();
        match op {
            Reduction::Sum => sum,
            Reduction::Mean => sum / self.data.len() as f64,
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.ew_binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.ew_binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.ew_binary(other, BinaryOp::Mul)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|a| a * c)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|a| a.clamp(lo, hi))
    }

    pub fn sum(&self) -> f64 {
        self.reduce(Reduction::Sum)
    }

    pub fn mean(&self) -> f64 {
        self.reduce(Reduction::Mean)
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(&self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Rectangular spatial window of a `C×H×W` tensor.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::InvalidShape(format!(
                "crop {height}×{width} at ({top},{left}) exceeds {h}×{w}"
            )));
        }
        let mut out = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in top..top + height {
                let row = (ch * h + y) * w;
                out.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Self::from_parts(vec![c, height, width], out))
    }

    /// Stacks `C_i×H×W` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let (_, h, w) = first.chw()?;
        let mut channels = 0;
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::mismatch(first.shape(), p.shape()));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_parts(vec![channels, h, w], data))
    }

    /// One channel of a `C×H×W` tensor as a slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn filled_tensors() {
        let t = Tensor::new_filled(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::new_filled(&[1], 7.5).unwrap();
        assert_eq!(t.data(), &[7.5]);
        assert_eq!(Tensor::new_filled(&[3, 2, 2], 1.0).unwrap().sum(), 12.0);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(matches!(Tensor::new_filled(&[], 1.0), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::new_filled(&[2, 0], 1.0), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::new(&[2], vec![1.0]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn code_range_uniform() {
        let mut rng = Rng::new(42);
        let t = Tensor::rand_uniform(&mut rng, &[32, 8, 8], 0.0, 0.1).unwrap();
        assert!(t.data().iter().all(|&v| (0.0..0.1).contains(&v)));
        let again = Tensor::rand_uniform(&mut Rng::new(42), &[32, 8, 8], 0.0, 0.1).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn uniform_mean_within_three_sigma() {
        // Var(U(0,1)) = 1/12; 3σ of the mean of 1e5 samples is 3*sqrt(1/12/1e5) ≈ 0.0027.
        let t = Tensor::rand_uniform(&mut Rng::new(5), &[100_000], 0.0, 1.0).unwrap();
        assert!((t.mean() - 0.5).abs() < 0.01);
    }

    #[test]
    fn uniform_rejects_empty_range() {
        let mut rng = Rng::new(0);
        assert!(matches!(
            Tensor::rand_uniform(&mut rng, &[2], 1.0, 1.0),
            Err(Error::InvalidRange(_))
        ));
    }

    #[test]
    fn normal_moments_and_degenerate_case() {
        let mut rng = Rng::new(9);
        let t = Tensor::rand_normal(&mut rng, &[100_000], 0.0, 1.0).unwrap();
        let mean = t.mean();
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var.sqrt() - 1.0).abs() < 0.02);

        let flat = Tensor::rand_normal(&mut rng, &[10], 3.0, 0.0).unwrap();
        assert!(flat.data().iter().all(|&v| v == 3.0));
        assert!(matches!(
            Tensor::rand_normal(&mut rng, &[1], 0.0, -1.0),
            Err(Error::InvalidRange(_))
        ));
        let a = Tensor::rand_normal(&mut Rng::new(1), &[64], 0.0, 1.0).unwrap();
        let b = Tensor::rand_normal(&mut Rng::new(1), &[64], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().data(), &[0.0, 2.0]);
        assert_eq!(Tensor::new(&[2], vec![1.0, 3.0]).unwrap().mean(), 2.0);
        let c = Tensor::new(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(c.ew_unary(UnaryOp::Clamp(0.0, 1.0)).unwrap().data(), &[0.0, 1.0]);
        let d = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&d), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn crop_and_concat() {
        let t = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(t.crop(1, 1, 2, 2).unwrap().data(), &[5.0, 6.0, 8.0, 9.0]);
        assert!(t.crop(2, 2, 2, 2).is_err());
        let both = Tensor::concat_channels(&[&t, &t]).unwrap();
        assert_eq!(both.shape(), &[2, 3, 3]);
        assert_eq!(both.channel(1), t.data());
    }

    proptest! {
        #[test]
        fn algebraic_identities(values in prop::collection::vec(-1e3f64..1e3, 1..64),
                                shift in -10.0f64..10.0) {
            let n = values.len();
            let a = Tensor::new(&[n], values.clone()).unwrap();
            let b = a.map(|v| v * 0.5 + shift);
            let ones = a.full_like(1.0);
            prop_assert_eq!(a.mul(&ones).unwrap(), a.clone());
            let lhs = a.add(&b).unwrap().sum();
            let rhs = a.sum() + b.sum();
            let scale = a.data().iter().chain(b.data()).map(|v| v.abs()).sum::<f64>().max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }
    }
}

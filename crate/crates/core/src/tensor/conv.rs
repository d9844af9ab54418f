//! 2-D cross-correlation with zero padding, lowered to a matrix product via
//! im2col.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c_in, height, width) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::InvalidShape(format!("conv input {input:?} is not C×H×W"))),
        };
        let (c_out, kc, kh, kw) = match *kernels {
            [o, c, kh, kw] => (o, c, kh, kw),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "conv kernels {kernels:?} are not C_out×C_in×k×k"
                )))
            }
        };
        if kh != kw {
            return Err(Error::InvalidShape(format!("non-square kernel {kh}×{kw}")));
        }
        if kc != c_in {
            return Err(Error::mismatch(input, kernels));
        }
        if stride == 0 {
            return Err(Error::InvalidShape("stride 0".into()));
        }
        let kernel = kh;
        if kernel > height + 2 * pad || kernel > width + 2 * pad {
            return Err(Error::InvalidShape(format!(
                "{kernel}×{kernel} kernel exceeds padded input {height}×{width} (pad {pad})"
            )));
        }
        Ok(Self {
            c_in,
            height,
            width,
            c_out,
            kernel,
            stride,
            pad,
            out_height: (height + 2 * pad - kernel) / stride + 1,
            out_width: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    /// Columns of the im2col matrix.
    pub fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// A 1×1, stride-1, unpadded convolution reads the input as its own
    /// im2col matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.out_height, self.out_width]
    }
}

/// Unfolds input patches into a `(C_in·k·k) × (H'·W')` row-major matrix.
pub fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let p = g.out_pixels();
    let mut cols = vec![0.0; g.patch_len() * p];
    let k = g.kernel;
    for ci in 0..g.c_in {
        let plane = &input[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let out_row = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *slot = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let p = g.out_pixels();
    let mut out = vec![0.0; g.c_in * g.height * g.width];
    let k = g.kernel;
    for ci in 0..g.c_in {
        let plane = &mut out[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let in_row = &src[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Strided matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c = a·b + beta·c` for an `m×k` by `k×n` product into row-major `c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    let reach = |mat: &MatRef, rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * mat.row_stride + (cols - 1) * mat.col_stride + 1
        }
    };
    assert!(a.data.len() >= reach(&a, m, k));
    assert!(b.data.len() >= reach(&b, k, n));
    // SAFETY: the asserts above bound every index dgemm touches through the
    // given strides, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Returns the output together with the im2col matrix (empty for pointwise
/// convolutions) so the backward pass can reuse it.
pub fn conv2d_raw_with_cols(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f64>, ConvGeometry)> {
    let g = ConvGeometry::new(input.shape(), kernels.shape(), stride, pad)?;
    let p = g.out_pixels();
    let mut out = vec![0.0; g.c_out * p];
    let cols = if g.is_pointwise() {
        Vec::new()
    } else {
        im2col(input.data(), &g)
    };
    let b = if g.is_pointwise() {
        MatRef::row_major(input.data(), p)
    } else {
        MatRef::row_major(&cols, p)
    };
    gemm(
        g.c_out,
        g.patch_len(),
        p,
        MatRef::row_major(kernels.data(), g.patch_len()),
        b,
        0.0,
        &mut out,
    );
    let out = Tensor::from_parts(g.output_shape(), out);
    Ok((out, cols, g))
}

/// Cross-correlation of a `C_in×H×W` input with `C_out×C_in×k×k` kernels.
pub fn conv2d_raw(input: &Tensor, kernels: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_raw_with_cols(input, kernels, stride, pad).map(|(out, _, _)| out)
}

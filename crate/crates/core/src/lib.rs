//! Single-image restoration with untrained convolutional generators.
//!
//! An image is parametrized as the output `x = f_θ(z)` of a randomly
//! initialized generator driven by a fixed noise code `z`; the parameters `θ`
//! are fitted by gradient descent to a task-specific data term on one degraded
//! observation, and the iteration budget acts as the regularizer.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, the deterministic RNG, raw convolution and
//!   resampling kernels.
//! - [`autograd`]: a define-by-run tape with reverse-mode differentiation
//!   and a finite-difference gradient checker.
//! - [`network`]: generator architectures and their initialization.
//! - [`optimize`]: Adam/SGD, output averaging and the restoration loop.
//! - [`tasks`]: data terms for reconstruction, super-resolution and
//!   inpainting, plus the flash/no-flash setup.
//! - [`imaging`]: image files, synthetic degradations, bicubic baseline,
//!   PSNR.
//! - [`cli`]: configuration, experiment harnesses and the `dip` command.

pub mod autograd;
pub mod cli;
pub mod error;
pub mod imaging;
pub mod network;
pub mod optimize;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};

//! Python bindings: tensors, image I/O, task energies, generator specs and
//! the restoration loop, plus the full command line as `dip.main`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dip_core::cli::{architecture_by_name, RunConfig};
use dip_core::network::{ArchitectureSpec, Generator};
use dip_core::optimize::{run_restoration_with, OptimConfig, OptimizerKind, RunOptions};
use dip_core::tasks::{inpainting_energy, make_code_input_in, reconstruction_energy, sr_energy, CODE_RANGE};
use dip_core::{imaging, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::ConfigError(_)
        | Error::ShapeMismatch { .. }
        | Error::InvalidShape(_)
        | Error::InvalidRange(_)
        | Error::InvalidMask(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Dense float64 tensor; images are `[channels, height, width]` in [0, 1].
#[pyclass(module = "dip", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Tensor(dip_core::Tensor);

#[pymethods]
impl Tensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        dip_core::Tensor::new(&shape, data).map(Tensor).map_err(py_err)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        dip_core::Tensor::zeros(&shape).map(Tensor).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    /// Flat row-major samples.
    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn sum(&self) -> f64 {
        self.0.sum()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn clamp(&self, lo: f64, hi: f64) -> Self {
        Tensor(self.0.clamp(lo, hi))
    }

    fn __add__(&self, other: &Tensor) -> PyResult<Self> {
        self.0.add(&other.0).map(Tensor).map_err(py_err)
    }

    fn __sub__(&self, other: &Tensor) -> PyResult<Self> {
        self.0.sub(&other.0).map(Tensor).map_err(py_err)
    }

    fn __mul__(&self, other: &Tensor) -> PyResult<Self> {
        self.0.mul(&other.0).map(Tensor).map_err(py_err)
    }

    fn __eq__(&self, other: &Tensor) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<Tensor> {
    imaging::load_tensor(path).map(Tensor).map_err(py_err)
}

/// Quantizes to 8 bits; the extension picks PNG, PPM or PGM.
#[pyfunction]
fn save_image(path: PathBuf, image: &Tensor) -> PyResult<()> {
    imaging::save_tensor(path, &image.0).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, crop=0))]
fn psnr(a: &Tensor, b: &Tensor, crop: usize) -> PyResult<f64> {
    imaging::psnr(&a.0, &b.0, crop).map_err(py_err)
}

/// Adds clamped Gaussian noise of std `sigma` on the 0–255 scale.
#[pyfunction]
#[pyo3(signature = (image, sigma, seed=0))]
fn add_noise(image: &Tensor, sigma: f64, seed: u64) -> PyResult<Tensor> {
    imaging::add_gaussian_noise(&image.0, sigma, &mut dip_core::Rng::new(seed))
        .map(Tensor)
        .map_err(py_err)
}

#[pyfunction]
fn downsample(image: &Tensor, factor: usize) -> PyResult<Tensor> {
    imaging::degrade_for_sr(&image.0, factor).map(Tensor).map_err(py_err)
}

#[pyfunction]
fn bicubic_upsample(image: &Tensor, factor: usize) -> PyResult<Tensor> {
    imaging::bicubic_up(&image.0, factor).map(Tensor).map_err(py_err)
}

/// `bernoulli:p`, `rect:x,y,w,h` or `file:path`; 1 marks known pixels.
#[pyfunction]
#[pyo3(signature = (spec, channels, height, width, seed=0))]
fn make_mask(spec: &str, channels: usize, height: usize, width: usize, seed: u64) -> PyResult<Tensor> {
    let spec: imaging::MaskSpec = spec.parse().map_err(py_err)?;
    imaging::make_mask(&spec, channels, height, width, &mut dip_core::Rng::new(seed))
        .map(Tensor)
        .map_err(py_err)
}

/// A generator architecture.
#[pyclass(module = "dip", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Architecture(ArchitectureSpec);

#[pymethods]
impl Architecture {
    /// `hourglass`, `ed<depth>`, `unet<depth>` or `resnet<blocks>`.
    #[new]
    #[pyo3(signature = (name="hourglass"))]
    fn new(name: &str) -> PyResult<Self> {
        architecture_by_name(name).map(Architecture).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: ArchitectureSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.validate().map_err(py_err)?;
        Ok(Architecture(spec))
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("spec is serializable")
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.depth
    }

    /// Trainable parameters for `output_channels` outputs.
    #[pyo3(signature = (output_channels=3))]
    fn parameter_count(&self, output_channels: usize) -> PyResult<usize> {
        let spec = ArchitectureSpec {
            output_channels,
            ..self.0.clone()
        };
        Generator::new(spec).map(|g| g.parameter_count()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Architecture(kind={:?}, depth={})", self.0.kind, self.0.depth)
    }
}

/// A data term `E(x; x0)`.
#[pyclass(module = "dip", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Energy(dip_core::tasks::TaskEnergy);

#[pymethods]
impl Energy {
    #[staticmethod]
    fn reconstruction(observation: &Tensor) -> PyResult<Self> {
        reconstruction_energy(observation.0.clone()).map(Energy).map_err(py_err)
    }

    #[staticmethod]
    fn super_resolution(observation: &Tensor, factor: usize) -> PyResult<Self> {
        sr_energy(observation.0.clone(), factor).map(Energy).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (observation, mask, normalized=false))]
    fn inpainting(observation: &Tensor, mask: &Tensor, normalized: bool) -> PyResult<Self> {
        let e = inpainting_energy(observation.0.clone(), mask.0.clone()).map_err(py_err)?;
        Ok(Energy(if normalized { e.normalized() } else { e }))
    }

    /// Shape `[c, h, w]` of the images this energy scores.
    #[getter]
    fn output_shape(&self) -> Vec<usize> {
        let (c, h, w) = self.0.output_shape();
        vec![c, h, w]
    }

    fn __call__(&self, x: &Tensor) -> PyResult<f64> {
        self.0.value(&x.0).map_err(py_err)
    }
}

#[pyclass(module = "dip", frozen, get_all)]
struct Restoration {
    image: Tensor,
    ema_image: Tensor,
    /// `(iteration, energy, psnr or None)` rows.
    trace: Vec<(usize, f64, Option<f64>)>,
    psnr_final: Option<f64>,
    psnr_ema: Option<f64>,
    parameter_count: usize,
    wall_time_s: f64,
}

#[pymethods]
impl Restoration {
    #[getter]
    fn final_energy(&self) -> Option<f64> {
        self.trace.last().map(|t| t.1)
    }

    fn __repr__(&self) -> String {
        format!(
            "Restoration(iterations={}, final_energy={:?}, psnr_ema={:?})",
            self.trace.last().map_or(0, |t| t.0),
            self.final_energy(),
            self.psnr_ema
        )
    }
}

/// Fits a freshly initialized generator to `energy` from a uniform code.
#[pyfunction]
#[pyo3(signature = (
    energy, architecture=None, iterations=1800, lr=0.01, seed=0,
    z_perturb_std=0.0, ema_decay=0.99, trace_every=10, code_channels=32,
    ground_truth=None, psnr_crop=0,
))]
#[allow(clippy::too_many_arguments)]
fn restore(
    py: Python<'_>,
    energy: &Energy,
    architecture: Option<&Architecture>,
    iterations: usize,
    lr: f64,
    seed: u64,
    z_perturb_std: f64,
    ema_decay: f64,
    trace_every: usize,
    code_channels: usize,
    ground_truth: Option<&Tensor>,
    psnr_crop: usize,
) -> PyResult<Restoration> {
    let mut spec = architecture.map_or_else(ArchitectureSpec::hourglass, |a| a.0.clone());
    let (c, h, w) = energy.0.output_shape();
    spec.output_channels = c;
    spec.input_channels = code_channels;
    let cfg = OptimConfig {
        optimizer: OptimizerKind::adam(lr),
        iterations,
        ema_decay,
        z_perturb_std,
        trace_every,
        seed,
    };
    let opts = RunOptions {
        ground_truth: ground_truth.map(|g| g.0.clone()),
        psnr_crop,
        snapshot_at: Vec::new(),
    };
    let energy = energy.0.clone();
    let r = py
        .detach(move || {
            // same code stream as the command line
            let code = make_code_input_in(h, w, code_channels, CODE_RANGE, &mut dip_core::Rng::new(seed).derive(0xc0de))?;
            run_restoration_with(&energy, &spec, &code, &cfg, &opts)
        })
        .map_err(py_err)?;
    Ok(Restoration {
        image: Tensor(r.image),
        ema_image: Tensor(r.ema_image),
        trace: r.trace.iter().map(|t| (t.iteration, t.energy, t.psnr_vs_gt)).collect(),
        psnr_final: r.psnr_final,
        psnr_ema: r.psnr_ema,
        parameter_count: r.parameter_count,
        wall_time_s: r.wall_time_s,
    })
}

/// Runs a JSON run configuration as the command line would and returns the
/// `result.json` document as text.
#[pyfunction]
fn run_config(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json(config_json).map_err(py_err)?;
    let summary = py.detach(move || dip_core::cli::execute(&cfg)).map_err(py_err)?;
    Ok(serde_json::to_string_pretty(&summary).expect("json"))
}

/// The `dip` command line; returns its exit code.
#[pyfunction]
fn main(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("dip".to_string()).chain(args).collect();
    py.detach(move || dip_core::cli::main_with_args(argv))
}

#[pymodule]
fn dip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add_class::<Architecture>()?;
    m.add_class::<Energy>()?;
    m.add_class::<Restoration>()?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(downsample, m)?)?;
    m.add_function(wrap_pyfunction!(bicubic_upsample, m)?)?;
    m.add_function(wrap_pyfunction!(make_mask, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}

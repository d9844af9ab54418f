//! Generator architectures `x = f_θ(z)` and their random initialization.
//!
//! Four families are available:
//!
//! - [`ArchitectureKind::HourglassSkip`]: encoder-decoder with a thin
//!   convolutional skip branch at every scale (the default generator).
//! - [`ArchitectureKind::EncoderDecoder`]: the same hourglass with every skip
//!   removed.
//! - [`ArchitectureKind::Unet`]: encoder feature maps concatenated into the
//!   decoder at each scale.
//! - [`ArchitectureKind::Resnet`]: full-resolution residual blocks.
//!
//! Every convolution is followed by normalization (when enabled) and the
//! activation; the head is a 1×1 convolution with bias and an output
//! nonlinearity. A feature map that has shrunk to a single pixel cannot be
//! normalized, so its normalization layer applies only the learned per-channel
//! scale and shift.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    HourglassSkip,
    EncoderDecoder,
    Unet,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Activation {
    LeakyRelu { slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Normalization {
    None,
    Instance { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    /// Scale levels (hourglass, encoder-decoder, U-Net) or residual blocks.
    pub depth: usize,
    pub channels: Vec<usize>,
    /// Width of the skip branch at each level; 0 removes it. For U-Net a
    /// skip carries the whole encoder map, so entries are 0 or `channels[i]`.
    pub skip_channels: Vec<usize>,
    pub down_kernel: usize,
    pub up_kernel: usize,
    pub skip_kernel: usize,
    pub upsample: UpsampleMode,
    pub activation: Activation,
    pub normalization: Normalization,
    pub output_activation: OutputActivation,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self::hourglass()
    }
}

impl ArchitectureSpec {
    /// Depth-5 hourglass with 4-channel skips at every scale.
    pub fn hourglass() -> Self {
        Self {
            kind: ArchitectureKind::HourglassSkip,
            depth: 5,
            channels: vec![16, 32, 64, 128, 128],
            skip_channels: vec![4; 5],
            down_kernel: 3,
            up_kernel: 3,
            skip_kernel: 1,
            upsample: UpsampleMode::Bilinear,
            activation: Activation::LeakyRelu { slope: 0.2 },
            normalization: Normalization::Instance { eps: 1e-5 },
            output_activation: OutputActivation::Sigmoid,
            input_channels: 32,
            output_channels: 3,
        }
    }

    /// Hourglass without skips; widths follow the default hourglass and stay
    /// at 128 beyond its fifth level.
    pub fn encoder_decoder(depth: usize) -> Self {
        let channels = (0..depth).map(|i| [16, 32, 64, 128].get(i).copied().unwrap_or(128)).collect();
        Self {
            kind: ArchitectureKind::EncoderDecoder,
            depth,
            channels,
            skip_channels: vec![0; depth],
            ..Self::hourglass()
        }
    }

    pub fn unet(depth: usize) -> Self {
        let channels: Vec<usize> =
            (0..depth).map(|i| [16, 32, 64, 128].get(i).copied().unwrap_or(128)).collect();
        Self {
            kind: ArchitectureKind::Unet,
            depth,
            skip_channels: channels.clone(),
            channels,
            ..Self::hourglass()
        }
    }

    pub fn resnet(blocks: usize, width: usize) -> Self {
        Self {
            kind: ArchitectureKind::Resnet,
            depth: blocks,
            channels: vec![width; blocks],
            skip_channels: vec![0; blocks],
            ..Self::hourglass()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigError(msg));
        if self.depth == 0 {
            return bad("depth must be positive".into());
        }
        if self.channels.len() != self.depth || self.skip_channels.len() != self.depth {
            return bad(format!(
                "depth {} needs {0} channel and skip widths, got {} and {}",
                self.depth,
                self.channels.len(),
                self.skip_channels.len()
            ));
        }
        if self.channels.contains(&0) || self.input_channels == 0 || self.output_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        for (name, k) in [
            ("down_kernel", self.down_kernel),
            ("up_kernel", self.up_kernel),
            ("skip_kernel", self.skip_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        let Activation::LeakyRelu { slope } = self.activation;
        if !slope.is_finite() {
            return bad("activation slope must be finite".into());
        }
        if let Normalization::Instance { eps } = self.normalization {
            if !(eps > 0.0) {
                return bad("normalization eps must be positive".into());
            }
        }
        match self.kind {
            ArchitectureKind::EncoderDecoder if self.skip_channels.iter().any(|&s| s != 0) => {
                bad("encoder_decoder has no skip connections".into())
            }
            ArchitectureKind::Unet
                if self
                    .skip_channels
                    .iter()
                    .zip(&self.channels)
                    .any(|(&s, &c)| s != 0 && s != c) =>
            {
                bad("unet skips carry whole encoder maps: use 0 or the level width".into())
            }
            ArchitectureKind::Resnet if self.channels.iter().any(|&c| c != self.channels[0]) => {
                bad("residual blocks need a constant width".into())
            }
            _ => Ok(()),
        }
    }

    /// Number of stride-2 reductions between input and bottleneck.
    pub fn downsampling_levels(&self) -> usize {
        match self.kind {
            ArchitectureKind::HourglassSkip | ArchitectureKind::EncoderDecoder => self.depth,
            ArchitectureKind::Unet => self.depth - 1,
            ArchitectureKind::Resnet => 0,
        }
    }

    /// Spatial sides of the input code must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.downsampling_levels()
    }
}

/// Distribution the base code tensor was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum CodeDistribution {
    Uniform { lo: f64, hi: f64 },
    /// Derived from a guide image rather than sampled.
    Image,
}

/// The fixed generator input `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeInput {
    pub base: Tensor,
    pub distribution: CodeDistribution,
}

impl CodeInput {
    /// Peak-to-peak range of the distribution, used to scale perturbations.
    pub fn range(&self) -> f64 {
        match self.distribution {
            CodeDistribution::Uniform { lo, hi } => hi - lo,
            CodeDistribution::Image => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Normal(0, gain/√fan_in).
    Kernel { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamDecl {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// The trainable parameters θ, in a fixed declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    seed: u64,
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Records every parameter as a gradient-carrying leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        ParamVars::new(self.names.clone(), vars)
    }
}

/// Tape handles for a [`ParameterSet`], addressable by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    index: HashMap<String, usize>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Self {
        let index = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        Self { index, vars }
    }

    /// Handles in declaration order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::ConfigError(format!("missing parameter {name}")))
    }
}

/// A validated architecture: declares its parameters and evaluates `f_θ(z)`.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: ArchitectureSpec,
    decls: Vec<ParamDecl>,
}

struct Declarer<'a> {
    decls: &'a mut Vec<ParamDecl>,
    normalize: bool,
}

impl Declarer<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.decls.push(ParamDecl { name, shape, init });
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        self.push(
            format!("{name}.weight"),
            vec![c_out, c_in, k, k],
            Init::Kernel { fan_in: c_in * k * k },
        );
    }

    /// Convolution followed by normalization and activation.
    fn block(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        self.conv(name, c_in, c_out, k);
        if self.normalize {
            self.push(format!("{name}.norm.scale"), vec![c_out], Init::Ones);
            self.push(format!("{name}.norm.shift"), vec![c_out], Init::Zeros);
        } else {
            self.push(format!("{name}.bias"), vec![c_out], Init::Zeros);
        }
    }
}

impl Generator {
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let mut decls = Vec::new();
        let mut d = Declarer {
            decls: &mut decls,
            normalize: matches!(spec.normalization, Normalization::Instance { .. }),
        };
        let s = &spec;
        let head_in = match s.kind {
            ArchitectureKind::HourglassSkip | ArchitectureKind::EncoderDecoder => {
                let mut c_prev = s.input_channels;
                for i in 0..s.depth {
                    let c = s.channels[i];
                    let deeper = if i + 1 < s.depth { s.channels[i + 1] } else { c };
                    if s.skip_channels[i] > 0 {
                        d.block(&format!("level{i}.skip"), c_prev, s.skip_channels[i], s.skip_kernel);
                    }
                    d.block(&format!("level{i}.down1"), c_prev, c, s.down_kernel);
                    d.block(&format!("level{i}.down2"), c, c, s.down_kernel);
                    d.block(&format!("level{i}.up1"), s.skip_channels[i] + deeper, c, s.up_kernel);
                    d.block(&format!("level{i}.up2"), c, c, 1);
                    c_prev = c;
                }
                s.channels[0]
            }
            ArchitectureKind::Unet => {
                let mut c_prev = s.input_channels;
                for i in 0..s.depth {
                    let c = s.channels[i];
                    if i > 0 {
                        d.block(&format!("level{i}.down"), c_prev, c_prev, s.down_kernel);
                    }
                    d.block(&format!("level{i}.enc1"), c_prev, c, s.down_kernel);
                    d.block(&format!("level{i}.enc2"), c, c, s.down_kernel);
                    c_prev = c;
                }
                for i in (0..s.depth - 1).rev() {
                    let c = s.channels[i];
                    d.block(&format!("level{i}.dec1"), s.skip_channels[i] + s.channels[i + 1], c, s.up_kernel);
                    d.block(&format!("level{i}.dec2"), c, c, s.up_kernel);
                }
                s.channels[0]
            }
            ArchitectureKind::Resnet => {
                let c = s.channels[0];
                d.block("stem", s.input_channels, c, s.down_kernel);
                for b in 0..s.depth {
                    d.block(&format!("block{b}.conv1"), c, c, s.down_kernel);
                    d.block(&format!("block{b}.conv2"), c, c, s.down_kernel);
                }
                c
            }
        };
        d.conv("head", head_in, s.output_channels, 1);
        d.push("head.bias".into(), vec![s.output_channels], Init::Zeros);
        Ok(Self { spec, decls })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.decls.iter().map(|d| d.shape.iter().product::<usize>()).sum()
    }

    /// He-style initialization matched to the leaky-ReLU slope.
    pub fn init(&self, seed: u64) -> ParameterSet {
        let Activation::LeakyRelu { slope } = self.spec.activation;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let root = Rng::new(seed);
        let mut names = Vec::with_capacity(self.decls.len());
        let mut tensors = Vec::with_capacity(self.decls.len());
        for (i, decl) in self.decls.iter().enumerate() {
            let tensor = match decl.init {
                Init::Kernel { fan_in } => {
                    let std = gain / (fan_in as f64).sqrt();
                    Tensor::rand_normal(&mut root.derive(i as u64), &decl.shape, 0.0, std)
                }
                Init::Ones => Tensor::ones(&decl.shape),
                Init::Zeros => Tensor::zeros(&decl.shape),
            }
            .expect("declared shapes are non-empty");
            names.push(decl.name.clone());
            tensors.push(tensor);
        }
        ParameterSet {
            names,
            tensors,
            seed,
        }
    }

    fn check_code(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = shape else {
            return Err(Error::InvalidShape(format!("code {shape:?} is not C×H×W")));
        };
        let m = self.spec.size_multiple();
        if *c != self.spec.input_channels {
            return Err(Error::InvalidShape(format!(
                "code has {c} channels, generator expects {}",
                self.spec.input_channels
            )));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidShape(format!(
                "code {h}×{w} is not divisible by {m}"
            )));
        }
        Ok(())
    }

    /// Evaluates the generator on `z`, recording on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVars, z: Var) -> Result<Var> {
        self.check_code(tape.value(z).shape())?;
        let f = Forward {
            spec: &self.spec,
            params,
        };
        let features = match self.spec.kind {
            ArchitectureKind::HourglassSkip | ArchitectureKind::EncoderDecoder => {
                f.hourglass_level(tape, 0, z)?
            }
            ArchitectureKind::Unet => f.unet(tape, z)?,
            ArchitectureKind::Resnet => f.resnet(tape, z)?,
        };
        let w = params.get("head.weight")?;
        let b = params.get("head.bias")?;
        let y = tape.conv2d(features, w, 1, 0)?;
        let y = tape.channel_bias(y, b)?;
        Ok(match self.spec.output_activation {
            OutputActivation::Sigmoid => tape.sigmoid(y),
            OutputActivation::Identity => y,
        })
    }

    /// Convenience wrapper: fresh tape, parameters as leaves, `z` constant.
    pub fn generate(&self, params: &ParameterSet, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &pv, zv)?;
        Ok(tape.value(out).clone())
    }
}

struct Forward<'a> {
    spec: &'a ArchitectureSpec,
    params: &'a ParamVars,
}

impl Forward<'_> {
    fn block(&self, tape: &mut Tape, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let k = tape.value(w).shape()[2];
        let y = tape.conv2d(x, w, stride, k / 2)?;
        let y = match self.spec.normalization {
            Normalization::Instance { eps } => {
                let scale = self.params.get(&format!("{name}.norm.scale"))?;
                let shift = self.params.get(&format!("{name}.norm.shift"))?;
                let (_, h, w) = tape.value(y).chw()?;
                if h * w > 1 {
                    tape.instance_norm(y, scale, shift, eps)?
                } else {
                    tape.channel_affine(y, scale, shift)?
                }
            }
            Normalization::None => {
                let bias = self.params.get(&format!("{name}.bias"))?;
                tape.channel_bias(y, bias)?
            }
        };
        let Activation::LeakyRelu { slope } = self.spec.activation;
        Ok(tape.leaky_relu(y, slope))
    }

    fn upsample(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.spec.upsample {
            UpsampleMode::Nearest => tape.nearest_up(x, 2),
            UpsampleMode::Bilinear => tape.bilinear_up(x, 2),
        }
    }

    fn hourglass_level(&self, tape: &mut Tape, i: usize, x: Var) -> Result<Var> {
        let skip = if self.spec.skip_channels[i] > 0 {
            Some(self.block(tape, &format!("level{i}.skip"), x, 1)?)
        } else {
            None
        };
        let d = self.block(tape, &format!("level{i}.down1"), x, 2)?;
        let mut d = self.block(tape, &format!("level{i}.down2"), d, 1)?;
        if i + 1 < self.spec.depth {
            d = self.hourglass_level(tape, i + 1, d)?;
        }
        let up = self.upsample(tape, d)?;
        let merged = match skip {
            Some(s) => tape.concat_channels(&[s, up])?,
            None => up,
        };
        let y = self.block(tape, &format!("level{i}.up1"), merged, 1)?;
        self.block(tape, &format!("level{i}.up2"), y, 1)
    }

    fn unet(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let depth = self.spec.depth;
        let mut encoded = Vec::with_capacity(depth);
        let mut x = z;
        for i in 0..depth {
            if i > 0 {
                x = self.block(tape, &format!("level{i}.down"), x, 2)?;
            }
            x = self.block(tape, &format!("level{i}.enc1"), x, 1)?;
            x = self.block(tape, &format!("level{i}.enc2"), x, 1)?;
            encoded.push(x);
        }
        for i in (0..depth - 1).rev() {
            let up = self.upsample(tape, x)?;
            let merged = if self.spec.skip_channels[i] > 0 {
                tape.concat_channels(&[encoded[i], up])?
            } else {
                up
            };
            x = self.block(tape, &format!("level{i}.dec1"), merged, 1)?;
            x = self.block(tape, &format!("level{i}.dec2"), x, 1)?;
        }
        Ok(x)
    }

    fn resnet(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let mut x = self.block(tape, "stem", z, 1)?;
        for b in 0..self.spec.depth {
            let h = self.block(tape, &format!("block{b}.conv1"), x, 1)?;
            let h = self.block(tape, &format!("block{b}.conv2"), h, 1)?;
            x = tape.add(x, h)?;
        }
        Ok(x)
    }
}

//! 8-bit images, synthetic degradations, the bicubic baseline and PSNR.

mod io;

pub use io::{decode, decode_pnm, decode_png, encode_png, encode_pnm, load, save, ImageFormat};

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{apply_separable, reflect_index, resample_raw, ResampleMode, Rng, SeparableWeights, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Interleaved 8-bit samples, row-major, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidShape(format!("{channels} channels (1 or 3 supported)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape(format!("empty image {width}×{height}")));
        }
        if samples.len() != width * height * channels {
            return Err(Error::InvalidShape(format!(
                "{} samples for {width}×{height}×{channels}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Planar `C×H×W` tensor with values `sample / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0.0; c * h * w];
        for (i, px) in self.samples.chunks_exact(c).enumerate() {
            for (ch, &s) in px.iter().enumerate() {
                data[ch * h * w + i] = f64::from(s) / 255.0;
            }
        }
        Tensor::new(&[c, h, w], data).expect("consistent by construction")
    }

    /// Quantizes a `C×H×W` tensor (C ∈ {1, 3}); values are clamped to
    /// `[0, 1]` and `255·v` is rounded half away from zero.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 1 && c != 3 {
            return Err(Error::InvalidShape(format!("{c} channels (1 or 3 supported)")));
        }
        let plane = h * w;
        let mut samples = vec![0u8; c * plane];
        for ch in 0..c {
            for (i, &v) in t.channel(ch).iter().enumerate() {
                samples[i * c + ch] = quantize(v);
            }
        }
        Self::new(w, h, c, samples)
    }
}

/// `round(255·clamp(v, 0, 1))`; NaN maps to 0.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

pub fn load_tensor(path: impl AsRef<std::path::Path>) -> Result<Tensor> {
    Ok(load(path)?.to_tensor())
}

pub fn save_tensor(path: impl AsRef<std::path::Path>, t: &Tensor) -> Result<()> {
    save(path, &ImageBuffer::from_tensor(t)?)
}

/// `clamp(x + ε, 0, 1)` with `ε ~ N(0, (sigma_255/255)²)` per sample.
pub fn add_gaussian_noise(img: &Tensor, sigma_255: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma_255 >= 0.0) || !sigma_255.is_finite() {
        return Err(Error::InvalidRange(format!("noise sigma {sigma_255}")));
    }
    if sigma_255 == 0.0 {
        return Ok(img.clone());
    }
    let noise = Tensor::rand_normal(rng, img.shape(), 0.0, sigma_255 / 255.0)?;
    Ok(img.add(&noise)?.clamp(0.0, 1.0))
}

/// The super-resolution forward model: Lanczos downsampling by `factor`.
pub fn degrade_for_sr(img: &Tensor, factor: usize) -> Result<Tensor> {
    resample_raw(img, ResampleMode::LanczosDown(factor))
}

/// Top-left crop to the largest size divisible by `multiple`.
pub fn crop_to_multiple(img: &Tensor, multiple: usize) -> Result<Tensor> {
    let (_, h, w) = img.chw()?;
    if multiple == 0 || h < multiple || w < multiple {
        return Err(Error::InvalidShape(format!("cannot crop {h}×{w} to a multiple of {multiple}")));
    }
    img.crop(0, 0, h - h % multiple, w - w % multiple)
}

/// Center crop of the given size.
pub fn center_crop(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, h, w) = img.chw()?;
    if height > h || width > w {
        return Err(Error::InvalidShape(format!("cannot crop {h}×{w} to {height}×{width}")));
    }
    img.crop((h - height) / 2, (w - width) / 2, height, width)
}

/// Inpainting mask recipes. A mask is 1 on known and 0 on missing pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    /// Every pixel is dropped independently with probability `drop`.
    Bernoulli { drop: f64 },
    /// The rectangle with top-left `(x, y)` and size `w × h` is missing.
    Rect { x: usize, y: usize, w: usize, h: usize },
    /// Single-channel bitmap file: 0 = missing, 255 = known.
    File(std::path::PathBuf),
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// Parses `bernoulli:p`, `rect:x,y,w,h` or `file:path`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidMask(format!("cannot parse mask spec {s:?}"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "bernoulli" => {
                let drop: f64 = arg.trim().parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&drop) {
                    return Err(Error::InvalidMask(format!("drop probability {drop} outside [0, 1]")));
                }
                Ok(MaskSpec::Bernoulli { drop })
            }
            "rect" => {
                let v: Vec<usize> = arg
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match v[..] {
                    [x, y, w, h] => Ok(MaskSpec::Rect { x, y, w, h }),
                    _ => Err(bad()),
                }
            }
            "file" if !arg.is_empty() => Ok(MaskSpec::File(arg.into())),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskSpec::Bernoulli { drop } => write!(f, "bernoulli:{drop}"),
            MaskSpec::Rect { x, y, w, h } => write!(f, "rect:{x},{y},{w},{h}"),
            MaskSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Builds a `channels×height×width` mask; each pixel's value is shared by
/// all channels.
pub fn make_mask(spec: &MaskSpec, channels: usize, height: usize, width: usize, rng: &mut Rng) -> Result<Tensor> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidShape(format!("mask {channels}×{height}×{width}")));
    }
    let plane: Vec<f64> = match spec {
        MaskSpec::Bernoulli { drop } => {
            if !(0.0..=1.0).contains(drop) {
                return Err(Error::InvalidMask(format!("drop probability {drop}")));
            }
            (0..height * width)
                .map(|_| if rng.next_f64() < *drop { 0.0 } else { 1.0 })
                .collect()
        }
        MaskSpec::Rect { x, y, w, h } => {
            if *w == 0 || *h == 0 || x + w > width || y + h > height {
                return Err(Error::InvalidMask(format!(
                    "rectangle {w}×{h} at ({x},{y}) outside {width}×{height}"
                )));
            }
            let mut m = vec![1.0; height * width];
            for row in *y..y + h {
                m[row * width + x..row * width + x + w].fill(0.0);
            }
            m
        }
        MaskSpec::File(path) => {
            let img = load(path)?;
            let m = mask_from_image(&img)?;
            if m.shape()[1..] != [height, width] {
                return Err(Error::InvalidMask(format!(
                    "mask bitmap is {}×{}, image is {width}×{height}",
                    img.width(),
                    img.height()
                )));
            }
            m.into_data()
        }
    };
    let mut data = Vec::with_capacity(channels * plane.len());
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    Tensor::new(&[channels, height, width], data)
}

/// Reads a single-channel 0/255 bitmap as a `1×H×W` mask.
pub fn mask_from_image(img: &ImageBuffer) -> Result<Tensor> {
    if img.channels() != 1 {
        return Err(Error::InvalidMask("mask bitmap must be single-channel".into()));
    }
    let data = img
        .samples()
        .iter()
        .map(|&s| match s {
            0 => Ok(0.0),
            255 => Ok(1.0),
            v => Err(Error::InvalidMask(format!("mask sample {v} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<f64>>>()?;
    Tensor::new(&[1, img.height(), img.width()], data)
}

/// Catmull-Rom cubic (`a = -0.5`).
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn bicubic_weights(in_len: usize, factor: usize) -> SeparableWeights {
    let t = factor as f64;
    let raw = (0..in_len * factor)
        .map(|j| {
            let src = (j as f64 + 0.5) / t - 0.5;
            let base = src.floor() as isize;
            (base - 1..=base + 2)
                .filter_map(|i| {
                    let w = cubic_kernel(src - i as f64);
                    (w != 0.0).then(|| (reflect_index(i, in_len), w))
                })
                .collect()
        })
        .collect();
    SeparableWeights::from_taps(in_len, raw)
}

/// Bicubic upsampling by an integer factor with mirrored borders.
pub fn bicubic_up(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = img.chw()?;
    if factor == 0 {
        return Err(Error::InvalidShape("upsampling factor 0".into()));
    }
    apply_separable(img, &bicubic_weights(h, factor), &bicubic_weights(w, factor))
}

/// `10·log10(1 / MSE)` over all channels after removing `crop_border`
/// pixels from every side; capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor, crop_border: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(a.shape(), b.shape()));
    }
    let (_, h, w) = a.chw()?;
    if 2 * crop_border >= h || 2 * crop_border >= w {
        return Err(Error::InvalidShape(format!("crop border {crop_border} exceeds {h}×{w}")));
    }
    let (ch, cw) = (h - 2 * crop_border, w - 2 * crop_border);
    let a = a.crop(crop_border, crop_border, ch, cw)?;
    let b = b.crop(crop_border, crop_border, ch, cw)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Applies one seeded permutation of pixel positions to every channel.
pub fn shuffle_pixels(img: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let (c, h, w) = img.chw()?;
    let mut perm: Vec<usize> = (0..h * w).collect();
    rng.shuffle(&mut perm);
    let mut data = Vec::with_capacity(img.len());
    for ch in 0..c {
        let plane = img.channel(ch);
        data.extend(perm.iter().map(|&p| plane[p]));
    }
    Tensor::new(&[c, h, w], data)
}

/// I.i.d. uniform `[0, 1)` image.
pub fn white_noise(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    Tensor::rand_uniform(rng, shape, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_conversion_is_lossless() {
        let samples: Vec<u8> = (0..=255u8).chain(0..=255u8).chain(0..=255u8).collect();
        let img = ImageBuffer::new(16, 16, 3, samples).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 16, 16]);
        // interleaved RGB: pixel (0, 1) of the red plane is sample 3
        assert_eq!(t.data()[1], 3.0 / 255.0);
        assert_eq!(ImageBuffer::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn quantization_rounds_half_away() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn buffer_validation() {
        assert!(ImageBuffer::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(ImageBuffer::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(ImageBuffer::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let x = Tensor::new_filled(&[3, 4, 4], 0.3).unwrap();
        assert_eq!(add_gaussian_noise(&x, 0.0, &mut Rng::new(0)).unwrap(), x);
        assert!(add_gaussian_noise(&x, -1.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn noise_statistics_on_mid_gray() {
        let x = Tensor::new_filled(&[1, 400, 250], 128.0 / 255.0).unwrap();
        let y = add_gaussian_noise(&x, 25.0, &mut Rng::new(1)).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let d = y.sub(&x).unwrap();
        let mean = d.mean();
        let var = d.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64;
        let target = 25.0 / 255.0;
        assert!((var.sqrt() - target).abs() < 0.05 * target, "{}", var.sqrt());
    }

    #[test]
    fn bernoulli_mask_fraction() {
        let m = make_mask(&MaskSpec::Bernoulli { drop: 0.5 }, 1, 250, 400, &mut Rng::new(2)).unwrap();
        let known = m.mean();
        assert!((known - 0.5).abs() < 0.005, "{known}");
        let m3 = make_mask(&MaskSpec::Bernoulli { drop: 0.5 }, 3, 8, 8, &mut Rng::new(2)).unwrap();
        assert_eq!(m3.channel(0), m3.channel(2));
    }

    #[test]
    fn rect_masks() {
        let full = make_mask(&MaskSpec::Rect { x: 0, y: 0, w: 6, h: 5 }, 3, 5, 6, &mut Rng::new(0)).unwrap();
        assert!(full.data().iter().all(|&v| v == 0.0));
        let part = make_mask(&MaskSpec::Rect { x: 1, y: 2, w: 2, h: 1 }, 1, 3, 4, &mut Rng::new(0)).unwrap();
        assert_eq!(part.data(), &[1., 1., 1., 1., 1., 1., 1., 1., 1., 0., 0., 1.]);
        assert!(matches!(
            make_mask(&MaskSpec::Rect { x: 3, y: 0, w: 2, h: 1 }, 1, 3, 4, &mut Rng::new(0)),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn mask_spec_parsing() {
        assert_eq!("bernoulli:0.5".parse::<MaskSpec>().unwrap(), MaskSpec::Bernoulli { drop: 0.5 });
        assert_eq!(
            "rect:1,2,3,4".parse::<MaskSpec>().unwrap(),
            MaskSpec::Rect { x: 1, y: 2, w: 3, h: 4 }
        );
        assert_eq!("file:m.png".parse::<MaskSpec>().unwrap(), MaskSpec::File("m.png".into()));
        for bad in ["bernoulli:1.5", "rect:1,2,3", "circle:1", "nocolon", "file:"] {
            assert!(bad.parse::<MaskSpec>().is_err(), "{bad}");
        }
        let spec = MaskSpec::Rect { x: 1, y: 2, w: 3, h: 4 };
        assert_eq!(spec.to_string().parse::<MaskSpec>().unwrap(), spec);
    }

    #[test]
    fn bitmap_masks() {
        let img = ImageBuffer::new(2, 1, 1, vec![0, 255]).unwrap();
        assert_eq!(mask_from_image(&img).unwrap().data(), &[0.0, 1.0]);
        let soft = ImageBuffer::new(2, 1, 1, vec![0, 128]).unwrap();
        assert!(matches!(mask_from_image(&soft), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn sr_degradation_identity_scale() {
        let x = Tensor::rand_uniform(&mut Rng::new(3), &[3, 6, 6], 0.0, 1.0).unwrap();
        assert_eq!(degrade_for_sr(&x, 1).unwrap(), x);
        assert_eq!(degrade_for_sr(&x, 3).unwrap().shape(), &[3, 2, 2]);
        assert!(degrade_for_sr(&x, 4).is_err());
    }

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        // direct evaluation of the piecewise cubic at 0.5 and 1.5
        assert!((cubic_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5) + 0.0625).abs() < 1e-15);
        for k in 0..50 {
            let f = k as f64 / 50.0;
            let s: f64 = (-1..=2).map(|i| cubic_kernel(f - i as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bicubic_constants_and_identity() {
        let c = Tensor::new_filled(&[3, 5, 7], 0.37).unwrap();
        assert_eq!(bicubic_up(&c, 3).unwrap(), Tensor::new_filled(&[3, 15, 21], 0.37).unwrap());
        let x = Tensor::rand_uniform(&mut Rng::new(4), &[3, 5, 7], 0.0, 1.0).unwrap();
        assert_eq!(bicubic_up(&x, 1).unwrap(), x);
    }

    #[test]
    fn bicubic_reproduces_ramps_in_interior() {
        let (h, w, t) = (6, 10, 4);
        let ramp = Tensor::new(&[1, h, w], (0..h * w).map(|i| 0.1 * (i % w) as f64 + 0.02 * (i / w) as f64).collect()).unwrap();
        let up = bicubic_up(&ramp, t).unwrap();
        for y in 2 * t..(h - 2) * t {
            for x in 2 * t..(w - 2) * t {
                let sx = (x as f64 + 0.5) / t as f64 - 0.5;
                let sy = (y as f64 + 0.5) / t as f64 - 0.5;
                let expected = 0.1 * sx + 0.02 * sy;
                let got = up.data()[y * w * t + x];
                assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn psnr_reference_values() {
        let a = Tensor::rand_uniform(&mut Rng::new(5), &[3, 8, 8], 0.0, 1.0).unwrap();
        assert_eq!(psnr(&a, &a, 0).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 1.0 / 255.0);
        let p = psnr(&a, &b, 0).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9, "{p}");
        assert_eq!(p, psnr(&b, &a, 0).unwrap());
        assert!(psnr(&a, &b, 4).is_err());
        assert!(psnr(&a, &b, 3).is_ok());
    }

    #[test]
    fn psnr_crop_ignores_border() {
        let a = Tensor::zeros(&[1, 6, 6]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(psnr(&a, &b, 1).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &b, 0).unwrap() < PSNR_CAP);
    }

    #[test]
    fn shuffle_is_shared_permutation() {
        let x = Tensor::rand_uniform(&mut Rng::new(6), &[3, 4, 5], 0.0, 1.0).unwrap();
        let s = shuffle_pixels(&x, &mut Rng::new(7)).unwrap();
        assert_eq!(s, shuffle_pixels(&x, &mut Rng::new(7)).unwrap());
        for c in 0..3 {
            let mut a = x.channel(c).to_vec();
            let mut b = s.channel(c).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
        // the same position map in every channel
        let pos = |c: usize, v: f64| x.channel(c).iter().position(|&u| u == v).unwrap();
        for i in 0..20 {
            assert_eq!(pos(0, s.channel(0)[i]), pos(1, s.channel(1)[i]));
        }
    }
}

//! PNG (through the `png` crate) and binary PPM/PGM codecs.

use std::io::{BufRead, Cursor, Read, Seek};
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pnm,
}

impl ImageFormat {
    /// Picks the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "png" => Ok(ImageFormat::Png),
            "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
            _ => Err(Error::DecodeError(format!(
                "unsupported image extension {:?}",
                path.display()
            ))),
        }
    }

    /// Sniffs the format from the leading bytes.
    pub fn detect(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Ok(ImageFormat::Png)
        } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
            Ok(ImageFormat::Pnm)
        } else {
            Err(Error::DecodeError("unrecognized image signature".into()))
        }
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path.as_ref())?;
    decode(&bytes)
}

/// Writes `img` in the format named by the extension (`.ppm`/`.pgm` pick the
/// binary portable formats; the channel count must match the extension).
pub fn save(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Png => encode_png(img)?,
        ImageFormat::Pnm => {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            let expected = match ext.to_ascii_lowercase().as_str() {
                "ppm" => Some(3),
                "pgm" => Some(1),
                _ => None,
            };
            if expected.is_some_and(|c| c != img.channels()) {
                return Err(Error::InvalidShape(format!(
                    "{}-channel image cannot be written as .{ext}",
                    img.channels()
                )));
            }
            encode_pnm(img)
        }
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
    match ImageFormat::detect(bytes)? {
        ImageFormat::Png => decode_png(Cursor::new(bytes)),
        ImageFormat::Pnm => decode_pnm(bytes),
    }
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::DecodeError(format!("png: {e}"))
}

pub fn decode_png<R: BufRead + Seek>(reader: R) -> Result<ImageBuffer> {
    let mut reader = png::Decoder::new(reader).read_info().map_err(png_err)?;
    let info = reader.info();
    if info.interlaced {
        return Err(Error::DecodeError("interlaced png is not supported".into()));
    }
    let channels = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (ct, bd) => {
            return Err(Error::DecodeError(format!(
                "png {ct:?} at {bd:?} is not supported (8-bit gray or RGB only)"
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::DecodeError("png dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(frame.buffer_size());
    ImageBuffer::new(frame.width as usize, frame.height as usize, channels, buf)
        .map_err(|e| Error::DecodeError(e.to_string()))
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(img.samples()).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.samples());
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::DecodeError(format!("pnm: bad {what}")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::DecodeError("pnm: expected P5 or P6".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::DecodeError(format!("pnm: maxval {maxval} (only 255 supported)")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::DecodeError("pnm: missing separator after header".into()));
    }
    let mut body = &bytes[h.pos + 1..];
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::DecodeError("pnm: dimensions overflow".into()))?;
    if body.len() < need {
        return Err(Error::DecodeError(format!(
            "pnm: {} sample bytes, expected {need}",
            body.len()
        )));
    }
    let mut samples = vec![0; need];
    body.read_exact(&mut samples)?;
    ImageBuffer::new(width, height, channels, samples).map_err(|e| Error::DecodeError(e.to_string()))
}

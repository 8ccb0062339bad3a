//! Raster image carrier with normalized float intensities.
//!
//! Interchange is binary PGM (P5) for grayscale and PPM (P6) for RGB, 8-bit
//! maxval 255 only. Loading maps bytes to v/255; saving quantizes with
//! round-half-up, so a save/load round trip moves a pixel by at most 1/510.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    /// Builds an image, checking every invariant: dims at least 8x8,
    /// 1 or 3 channels, all values finite in [0, 1].
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::Argument(format!(
                "image must be at least 8x8, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Argument(format!("image value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`new`], but clamps values into [0, 1] instead of rejecting them.
    /// Non-finite values are still rejected.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("image value {v} is not finite")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, channels, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Grayscale view: channel 0 for single-channel images, BT.601 luma
    /// (0.299 R + 0.587 G + 0.114 B) for RGB.
    pub fn to_luma(&self) -> ScalarField {
        let mut out = Vec::with_capacity(self.height * self.width);
        if self.channels == 1 {
            out.extend_from_slice(&self.data);
        } else {
            for px in self.data.chunks_exact(3) {
                out.push(LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2]);
            }
        }
        ScalarField::new(self.height, self.width, out).expect("image invariants imply valid field")
    }

    /// Per-channel corner-aligned bilinear resize.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<ImageBuf> {
        let mut out = vec![0.0; height * width * self.channels];
        for c in 0..self.channels {
            let plane = self.plane(c);
            let resized = plane.resize_bilinear(height, width)?;
            for (i, &v) in resized.data().iter().enumerate() {
                out[i * self.channels + c] = v;
            }
        }
        ImageBuf::from_clamped(height, width, self.channels, out)
    }

    /// Extracts one channel as a field.
    pub fn plane(&self, c: usize) -> ScalarField {
        let mut out = Vec::with_capacity(self.height * self.width);
        for px in self.data.chunks_exact(self.channels) {
            out.push(px[c]);
        }
        ScalarField::new(self.height, self.width, out).expect("image invariants imply valid field")
    }

    /// Saves as binary P5 (1 channel) or P6 (3 channels) with maxval 255.
    pub fn save(&self, path: &Path) -> Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut bytes = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.reserve(self.data.len());
        for &v in &self.data {
            bytes.push((v * 255.0).round() as u8);
        }
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ImageBuf> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut p = PnmParser { bytes: &bytes, pos: 0 };

        let magic = p.take(2).ok_or_else(|| Error::format(path, 0, "truncated magic"))?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::format(path, 0, "expected P5 or P6 magic")),
        };
        let width = p
            .next_uint()
            .ok_or_else(|| Error::format(path, p.pos, "missing width"))?;
        let height = p
            .next_uint()
            .ok_or_else(|| Error::format(path, p.pos, "missing height"))?;
        let maxval = p
            .next_uint()
            .ok_or_else(|| Error::format(path, p.pos, "missing maxval"))?;
        if maxval != 255 {
            return Err(Error::format(path, p.pos, format!("unsupported maxval {maxval}, expected 255")));
        }
        // Exactly one whitespace byte separates the header from the payload.
        if !p.take(1).is_some_and(|b| b[0].is_ascii_whitespace()) {
            return Err(Error::format(path, p.pos, "missing whitespace after maxval"));
        }
        let expected = width * height * channels;
        let payload_start = p.pos;
        let payload = p
            .take(expected)
            .ok_or_else(|| Error::format(path, bytes.len(), format!("truncated payload: expected {expected} bytes after offset {payload_start}")))?;
        if p.pos != bytes.len() {
            return Err(Error::format(path, p.pos, "trailing bytes after payload"));
        }
        let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
        ImageBuf::new(height, width, channels, data)
    }
}

struct PnmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmParser<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    /// Skips whitespace and `#` comments, then reads a decimal integer.
    fn next_uint(&mut self) -> Option<usize> {
        loop {
            match self.bytes.get(self.pos)? {
                b if b.is_ascii_whitespace() => self.pos += 1,
                b'#' => {
                    while *self.bytes.get(self.pos)? != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

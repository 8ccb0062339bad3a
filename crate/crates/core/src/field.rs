//! Single-channel float grid at image resolution.
//!
//! `ScalarField` carries attention maps, localization maps, and lesion masks.
//! On disk it is a `.fld` file: a 16-byte header (magic `MSF1`, rows and cols
//! as little-endian u32, four reserved zero bytes) followed by the row-major
//! payload as little-endian 32-bit floats. In memory all math runs in f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FLD_MAGIC: &[u8; 4] = b"MSF1";
const FLD_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarField {
    /// Builds a field, checking the size/finiteness invariants.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "field dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Argument(format!(
                "field data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("field contains non-finite value {v}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Linear-interpolated order statistic: q = 0 gives the minimum,
    /// q = 1 the maximum, interior values interpolate between neighbors.
    pub fn quantile(&self, q: f64) -> f64 {
        quantile_of(&self.data, q)
    }

    /// Bilinear resample to `height x width` with corner-aligned sample
    /// positions. Output values stay within the input min/max.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<ScalarField> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "resize target must be positive, got {height}x{width}"
            )));
        }
        let mut out = vec![0.0; height * width];
        for oy in 0..height {
            let (y0, y1, ty) = lerp_pos(oy, height, self.height);
            for ox in 0..width {
                let (x0, x1, tx) = lerp_pos(ox, width, self.width);
                let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
                let bot = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
                out[oy * width + ox] = top * (1.0 - ty) + bot * ty;
            }
        }
        ScalarField::new(height, width, out)
    }

    /// Transpose of [`resize_bilinear`]: scatters a gradient over the resized
    /// grid back to source resolution with the exact forward weights.
    pub fn resize_bilinear_transpose(
        grad: &ScalarField,
        src_height: usize,
        src_width: usize,
    ) -> Result<ScalarField> {
        let mut out = vec![0.0; src_height * src_width];
        for oy in 0..grad.height {
            let (y0, y1, ty) = lerp_pos(oy, grad.height, src_height);
            for ox in 0..grad.width {
                let (x0, x1, tx) = lerp_pos(ox, grad.width, src_width);
                let g = grad.get(oy, ox);
                out[y0 * src_width + x0] += g * (1.0 - tx) * (1.0 - ty);
                out[y0 * src_width + x1] += g * tx * (1.0 - ty);
                out[y1 * src_width + x0] += g * (1.0 - tx) * ty;
                out[y1 * src_width + x1] += g * tx * ty;
            }
        }
        ScalarField::new(src_height, src_width, out)
    }

    /// Writes the `.fld` representation (payload truncated to f32).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(FLD_HEADER_LEN + self.data.len() * 4);
        bytes.extend_from_slice(FLD_MAGIC);
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        for &v in &self.data {
            let v32 = v as f32;
            if !v32.is_finite() {
                return Err(Error::Argument(format!(
                    "field value {v} not representable as finite f32"
                )));
            }
            bytes.extend_from_slice(&v32.to_le_bytes());
        }
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ScalarField> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < FLD_HEADER_LEN {
            return Err(Error::format(path, bytes.len(), "truncated header"));
        }
        if &bytes[0..4] != FLD_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected MSF1"));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::format(path, 4, "zero dimension"));
        }
        let expected = FLD_HEADER_LEN + rows * cols * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                bytes.len().min(expected),
                format!("payload size mismatch: expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows * cols {
            let off = FLD_HEADER_LEN + i * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(path, off, format!("non-finite value {v}")));
            }
            data.push(v as f64);
        }
        ScalarField::new(rows, cols, data)
    }
}

/// Corner-aligned source position for output index `i`: returns the two
/// neighbor indices and the interpolation weight of the upper one.
#[inline]
pub(crate) fn lerp_pos(i: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let pos = if dst_len == 1 {
        (src_len - 1) as f64 / 2.0
    } else {
        i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    };
    let i0 = pos.floor() as usize;
    let i0 = i0.min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

pub(crate) fn quantile_of(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = p.floor() as usize;
    let hi = p.ceil() as usize;
    let t = p - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_resize_preserves_value() {
        let f = ScalarField::constant(4, 4, 0.37).unwrap();
        let up = f.resize_bilinear(17, 9).unwrap();
        for &v in up.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_midpoint_weights() {
        // 2x2 [[0,1],[0,1]] widened to 2x3: the middle column sits exactly
        // between the two source columns, so it must read 0.5.
        let f = ScalarField::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = f.resize_bilinear(2, 3).unwrap();
        assert_eq!(up.get(0, 0), 0.0);
        assert!((up.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(up.get(0, 2), 1.0);
        assert!((up.get(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let f = ScalarField::from_fn(7, 11, |_, _| rng.gen::<f64>()).unwrap();
        let same = f.resize_bilinear(7, 11).unwrap();
        assert_eq!(f.data(), same.data());
    }

    #[test]
    fn resize_stays_within_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let f = ScalarField::from_fn(5, 5, |_, _| rng.gen_range(-2.0..3.0)).unwrap();
        let up = f.resize_bilinear(33, 21).unwrap();
        let (lo, hi) = (f.min(), f.max());
        for &v in up.data() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn transpose_matches_forward_as_linear_map() {
        // <A x, y> == <x, A^T y> for the resize operator A.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = ScalarField::from_fn(6, 9, |_, _| rng.gen::<f64>()).unwrap();
        let y = ScalarField::from_fn(13, 4, |_, _| rng.gen::<f64>()).unwrap();
        let ax = x.resize_bilinear(13, 4).unwrap();
        let aty = ScalarField::resize_bilinear_transpose(&y, 6, 9).unwrap();
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn quantile_order_statistics() {
        let f = ScalarField::new(1, 5, vec![4.0, 0.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(f.quantile(0.0), 0.0);
        assert_eq!(f.quantile(1.0), 4.0);
        assert_eq!(f.quantile(0.5), 2.0);
        assert!((f.quantile(0.7) - 2.8).abs() < 1e-12);
    }

    #[test]
    fn fld_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fld");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // Values picked on the f32 grid so the f64->f32 cast is exact.
        let f = ScalarField::from_fn(32, 32, |_, _| rng.gen::<f32>() as f64).unwrap();
        f.save(&path).unwrap();
        let g = ScalarField::load(&path).unwrap();
        assert_eq!(f.height(), g.height());
        assert_eq!(f.width(), g.width());
        for (a, b) in f.data().iter().zip(g.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fld_rejects_zero_dims_and_bad_payload() {
        assert!(ScalarField::new(0, 4, vec![]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fld");

        // rows=4, cols=4 header but only 15 floats of payload.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FLD_MAGIC);
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        bytes.extend_from_slice(&[0u8; 15 * 4]);
        std::fs::write(&path, &bytes).unwrap();
        match ScalarField::load(&path) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }

        let path2 = dir.path().join("magic.fld");
        std::fs::write(&path2, b"XXXX____________").unwrap();
        match ScalarField::load(&path2) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected magic error, got {other:?}"),
        }
    }
}

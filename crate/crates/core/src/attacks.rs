//! Deterministic image transforms for robustness evaluation.
//!
//! The suite: brightness scaling, center crop, an internal baseline-JPEG
//! lossy round trip (block DCT quantization without entropy coding, which
//! is lossless anyway), rotation with bilinear resampling, and bilinear
//! rescaling. Every transform is a pure function of its inputs.

use crate::codec::{self, ExtractorModel, Message};
use crate::dct::{dct2, idct2, CosTable};
use crate::error::{Error, Result};
use crate::image::ImageBuf;

/// ITU T.81 Annex K.1 luminance quantization table, row-major.
const ANNEX_K_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSpec {
    None,
    /// Multiply intensities by the factor, clamped to [0,1].
    Brightness(f64),
    /// Keep the central fraction of each dimension; output is smaller.
    CenterCrop(f64),
    /// Lossy round trip at the given quality (1..=100).
    Jpeg(u8),
    /// Rotate about the image center by degrees; same dimensions, zero fill.
    Rotate(f64),
    /// Bilinear scale to (round(h*s), round(w*s)).
    Resize(f64),
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSpec::None => Ok(()),
            AttackSpec::Brightness(f) if f > 0.0 && f.is_finite() => Ok(()),
            AttackSpec::Brightness(f) => {
                Err(Error::Argument(format!("brightness factor must be positive, got {f}")))
            }
            AttackSpec::CenterCrop(k) if k > 0.0 && k <= 1.0 => Ok(()),
            AttackSpec::CenterCrop(k) => {
                Err(Error::Argument(format!("crop keep fraction must be in (0,1], got {k}")))
            }
            AttackSpec::Jpeg(q) if (1..=100).contains(&q) => Ok(()),
            AttackSpec::Jpeg(q) => {
                Err(Error::Argument(format!("jpeg quality must be in 1..=100, got {q}")))
            }
            AttackSpec::Rotate(d) if d.is_finite() => Ok(()),
            AttackSpec::Rotate(d) => Err(Error::Argument(format!("rotation angle must be finite, got {d}"))),
            AttackSpec::Resize(s) if s > 0.0 && s <= 1.0 => Ok(()),
            AttackSpec::Resize(s) => {
                Err(Error::Argument(format!("resize scale must be in (0,1], got {s}")))
            }
        }
    }

    /// Canonical short name used as a report column key.
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Brightness(_) => "brt",
            AttackSpec::CenterCrop(_) => "crp",
            AttackSpec::Jpeg(_) => "jpg",
            AttackSpec::Rotate(_) => "rot",
            AttackSpec::Resize(_) => "res",
        }
    }

    /// `name:param` label, e.g. `jpg:50`.
    pub fn label(&self) -> String {
        match *self {
            AttackSpec::None => "none".into(),
            AttackSpec::Brightness(f) => format!("brt:{f}"),
            AttackSpec::CenterCrop(k) => format!("crp:{k}"),
            AttackSpec::Jpeg(q) => format!("jpg:{q}"),
            AttackSpec::Rotate(d) => format!("rot:{d}"),
            AttackSpec::Resize(s) => format!("res:{s}"),
        }
    }

    /// Parses the `name:param` mini-grammar (`brt:2.0`, `crp:0.5`, `jpg:50`,
    /// `rot:25`, `res:0.7`, `none`).
    pub fn parse(s: &str) -> Result<AttackSpec> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        fn need<'a>(name: &str, p: Option<&'a str>) -> Result<&'a str> {
            p.ok_or_else(|| Error::Argument(format!("attack {name:?} needs a parameter")))
        }
        let spec = match name {
            "none" => AttackSpec::None,
            "brt" => AttackSpec::Brightness(parse_f64(need(name, param)?)?),
            "crp" => AttackSpec::CenterCrop(parse_f64(need(name, param)?)?),
            "jpg" => {
                let q: u8 = need(name, param)?
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad jpeg quality {param:?}")))?;
                AttackSpec::Jpeg(q)
            }
            "rot" => AttackSpec::Rotate(parse_f64(need(name, param)?)?),
            "res" => AttackSpec::Resize(parse_f64(need(name, param)?)?),
            _ => return Err(Error::Argument(format!("unknown attack {name:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The evaluation battery at its standard parameters.
    pub fn standard_suite() -> Vec<AttackSpec> {
        vec![
            AttackSpec::None,
            AttackSpec::Brightness(2.0),
            AttackSpec::CenterCrop(0.5),
            AttackSpec::Jpeg(50),
            AttackSpec::Rotate(25.0),
            AttackSpec::Resize(0.7),
        ]
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Argument(format!("bad numeric parameter {s:?}")))
}

/// Applies an attack. Pure: identical inputs give bit-identical outputs.
pub fn apply(img: &ImageBuf, spec: &AttackSpec) -> Result<ImageBuf> {
    spec.validate()?;
    match *spec {
        AttackSpec::None => Ok(img.clone()),
        AttackSpec::Brightness(factor) => {
            let data = img.data().iter().map(|v| v * factor).collect();
            ImageBuf::from_clamped(img.height(), img.width(), img.channels(), data)
        }
        AttackSpec::CenterCrop(keep) => center_crop(img, keep),
        AttackSpec::Jpeg(quality) => jpeg_round_trip(img, quality),
        AttackSpec::Rotate(degrees) => rotate(img, degrees),
        AttackSpec::Resize(scale) => {
            let h = (img.height() as f64 * scale).round() as usize;
            let w = (img.width() as f64 * scale).round() as usize;
            if h < 8 || w < 8 {
                return Err(Error::Argument(format!(
                    "resize output {h}x{w} below the 8x8 minimum"
                )));
            }
            img.resize_bilinear(h, w)
        }
    }
}

fn center_crop(img: &ImageBuf, keep: f64) -> Result<ImageBuf> {
    let out_h = (img.height() as f64 * keep).floor() as usize;
    let out_w = (img.width() as f64 * keep).floor() as usize;
    if out_h < 8 || out_w < 8 {
        return Err(Error::Argument(format!(
            "crop output {out_h}x{out_w} below the 8x8 minimum"
        )));
    }
    // Integer halving biases the window toward the top-left on odd remainders.
    let y0 = (img.height() - out_h) / 2;
    let x0 = (img.width() - out_w) / 2;
    let c = img.channels();
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        for x in 0..out_w {
            for ch in 0..c {
                data.push(img.get(y0 + y, x0 + x, ch));
            }
        }
    }
    ImageBuf::new(out_h, out_w, c, data)
}

fn rotate(img: &ImageBuf, degrees: f64) -> Result<ImageBuf> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            // Inverse map: rotate the output position back into the source.
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for ch in 0..c {
                data[(y * w + x) * c + ch] = sample_zero_fill(img, sy, sx, ch);
            }
        }
    }
    ImageBuf::from_clamped(h, w, c, data)
}

/// Bilinear sample with out-of-bounds neighbors treated as 0.
fn sample_zero_fill(img: &ImageBuf, sy: f64, sx: f64, ch: usize) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let y0 = sy.floor() as isize;
    let x0 = sx.floor() as isize;
    let ty = sy - y0 as f64;
    let tx = sx - x0 as f64;
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0 && yy < h && xx >= 0 && xx < w {
                acc += wy * wx * img.get(yy as usize, xx as usize, ch);
            }
        }
    }
    acc
}

/// Annex-K luminance table scaled by the standard quality rule:
/// S = 5000/q below 50 else 200 - 2q; entry = clamp((base*S + 50)/100, 1, 255).
pub fn jpeg_quant_table(quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Argument(format!("jpeg quality must be in 1..=100, got {quality}")));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut table = [0u16; 64];
    for (i, &base) in ANNEX_K_LUMA.iter().enumerate() {
        table[i] = ((base as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(table)
}

/// Baseline-JPEG pixel pipeline without entropy coding: per 8x8 block,
/// shift by -0.5, orthonormal 2D DCT, quantize/dequantize with the scaled
/// table (steps normalized to [0,1] intensities), inverse DCT, shift back.
/// Edge blocks are padded by replication; channels are independent.
fn jpeg_round_trip(img: &ImageBuf, quality: u8) -> Result<ImageBuf> {
    let table = jpeg_quant_table(quality)?;
    let steps: Vec<f64> = table.iter().map(|&t| t as f64 / 255.0).collect();
    let cos = CosTable::new(8);
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;

    let mut out = vec![0.0; h * w * c];
    let mut padded = vec![0.0; ph * pw];
    let mut block = [0.0f64; 64];
    for ch in 0..c {
        for y in 0..ph {
            let sy = y.min(h - 1);
            for x in 0..pw {
                let sx = x.min(w - 1);
                padded[y * pw + x] = img.get(sy, sx, ch) - 0.5;
            }
        }
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                for i in 0..8 {
                    block[i * 8..i * 8 + 8]
                        .copy_from_slice(&padded[(by + i) * pw + bx..(by + i) * pw + bx + 8]);
                }
                let mut coeffs = dct2(&cos, &block);
                for (co, &step) in coeffs.iter_mut().zip(&steps) {
                    *co = (*co / step).round() * step;
                }
                let rec = idct2(&cos, &coeffs);
                for i in 0..8 {
                    let y = by + i;
                    if y >= h {
                        break;
                    }
                    for j in 0..8 {
                        let x = bx + j;
                        if x >= w {
                            break;
                        }
                        out[(y * w + x) * c + ch] = rec[i * 8 + j] + 0.5;
                    }
                }
            }
        }
    }
    ImageBuf::from_clamped(h, w, c, out)
}

/// Attack followed by message decoding; crop and resize dimension changes
/// are absorbed by the decoder's canonical-size feature resize.
pub fn attack_then_decode(img: &ImageBuf, spec: &AttackSpec, model: &ExtractorModel) -> Result<Message> {
    let attacked = apply(img, spec)?;
    Ok(codec::decode_bits(&codec::decode_logits(model, &attacked)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::test_support::{smooth_corpus, smooth_image};
    use crate::codec::FeatureSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &ImageBuf, b: &ImageBuf) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn mse(a: &ImageBuf, b: &ImageBuf) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.data().len() as f64
    }

    #[test]
    fn identity_parameters_are_identity() {
        let img = smooth_image(64, 1);
        assert_eq!(max_abs_diff(&apply(&img, &AttackSpec::Brightness(1.0)).unwrap(), &img), 0.0);
        assert_eq!(max_abs_diff(&apply(&img, &AttackSpec::CenterCrop(1.0)).unwrap(), &img), 0.0);
        assert!(max_abs_diff(&apply(&img, &AttackSpec::Rotate(0.0)).unwrap(), &img) <= 1e-6);
        assert!(max_abs_diff(&apply(&img, &AttackSpec::Resize(1.0)).unwrap(), &img) <= 1e-6);
    }

    #[test]
    fn brightness_clamps_at_one() {
        let img = ImageBuf::constant(8, 8, 1, 0.6).unwrap();
        let out = apply(&img, &AttackSpec::Brightness(2.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn crop_and_resize_have_exact_dimensions() {
        let img = smooth_image(128, 2);
        let cropped = apply(&img, &AttackSpec::CenterCrop(0.5)).unwrap();
        assert_eq!((cropped.height(), cropped.width()), (64, 64));
        let resized = apply(&img, &AttackSpec::Resize(0.7)).unwrap();
        assert_eq!((resized.height(), resized.width()), (90, 90));

        // Odd remainder: 65% of 128 is 83.2, floor 83, start (128-83)/2 = 22.
        let odd = apply(&img, &AttackSpec::CenterCrop(0.65)).unwrap();
        assert_eq!(odd.height(), 83);
        assert_eq!(odd.get(0, 0, 0), img.get(22, 22, 0));
    }

    #[test]
    fn quality_50_reproduces_base_table() {
        // Annex K.1 luminance values, re-entered independently here.
        let base: [u16; 64] = [
            16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40,
            57, 69, 56, 14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35,
            55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112,
            100, 103, 99,
        ];
        assert_eq!(jpeg_quant_table(50).unwrap(), base);
    }

    #[test]
    fn quality_100_floors_every_step_to_one() {
        let table = jpeg_quant_table(100).unwrap();
        assert!(table.iter().all(|&t| t == 1));
    }

    #[test]
    fn quality_100_round_trip_error_is_tiny() {
        for seed in 0..4 {
            let img = smooth_image(64, 100 + seed);
            let out = apply(&img, &AttackSpec::Jpeg(100)).unwrap();
            assert!(max_abs_diff(&img, &out) <= 2.0 / 255.0);
        }
    }

    #[test]
    fn jpeg_error_grows_as_quality_drops() {
        for seed in 0..10 {
            let img = smooth_image(64, 200 + seed);
            let errs: Vec<f64> = [90u8, 70, 50, 30]
                .iter()
                .map(|&q| mse(&img, &apply(&img, &AttackSpec::Jpeg(q)).unwrap()))
                .collect();
            for pair in errs.windows(2) {
                assert!(pair[0] <= pair[1], "mse not monotone: {errs:?}");
            }
        }
    }

    #[test]
    fn full_turn_rotation_matches_identity() {
        let img = smooth_image(64, 5);
        let r0 = apply(&img, &AttackSpec::Rotate(0.0)).unwrap();
        let r360 = apply(&img, &AttackSpec::Rotate(360.0)).unwrap();
        assert!(max_abs_diff(&r0, &r360) <= 1e-6);
    }

    #[test]
    fn apply_is_deterministic() {
        let img = smooth_image(48, 6);
        for spec in AttackSpec::standard_suite() {
            let a = apply(&img, &spec).unwrap();
            let b = apply(&img, &spec).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn parse_round_trips_labels() {
        for s in ["none", "brt:2", "crp:0.5", "jpg:50", "rot:25", "res:0.7"] {
            let spec = AttackSpec::parse(s).unwrap();
            assert_eq!(AttackSpec::parse(&spec.label()).unwrap(), spec);
        }
        assert!(AttackSpec::parse("jpg:0").is_err());
        assert!(AttackSpec::parse("blur:3").is_err());
        assert!(AttackSpec::parse("brt").is_err());
    }

    #[test]
    fn no_attack_decode_equals_direct_decode() {
        let corpus = smooth_corpus(32, 32, 300);
        let model = crate::codec::train_extractor(&corpus, 8, &[], 50, 7).unwrap();
        let img = smooth_image(64, 77);
        let direct = crate::codec::decode_bits(&crate::codec::decode_logits(&model, &img));
        let attacked = attack_then_decode(&img, &AttackSpec::None, &model).unwrap();
        assert_eq!(direct, attacked);
    }

    #[test]
    fn brightness_gain_preserves_bits_with_zero_bias() {
        // With zero bias and no whitening, logits are linear in the mean
        // removed features; a gain that never clamps scales every logit by
        // the same positive factor and cannot flip a sign.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = FeatureSpec::default();
        let k = 12;
        let model = crate::codec::ExtractorModel {
            spec,
            k,
            projection: (0..k * spec.coeff_count).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: vec![0.0; k],
            whitening: None,
            version: 1,
            seed: 0,
            transforms: vec![],
        };
        for seed in 0..6 {
            let img = smooth_image(64, 400 + seed);
            // Scale down so the doubled image stays strictly below 1.
            let scaled = ImageBuf::new(64, 64, 1, img.data().iter().map(|v| v * 0.45).collect()).unwrap();
            let plain = crate::codec::decode_bits(&crate::codec::decode_logits(&model, &scaled));
            let bright = attack_then_decode(&scaled, &AttackSpec::Brightness(2.0), &model).unwrap();
            assert_eq!(plain, bright);
        }
    }
}

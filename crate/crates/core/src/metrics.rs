//! Image-quality and watermark metrics, plus evaluation report assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks::{attack_then_decode, AttackSpec};
use crate::codec::{bit_accuracy, ExtractorModel, Message};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::image::ImageBuf;

/// Peak signal-to-noise ratio in dB over [0,1] intensities. Identical
/// images return the +infinity sentinel.
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01; // (K1 * L)^2 with L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean local structural similarity with an 11x11 Gaussian window
/// (sigma 1.5) and symmetric boundary handling. RGB inputs are converted
/// to luma first.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_dims_hw(a, b)?;
    let la = a.to_luma();
    let lb = b.to_luma();
    let (h, w) = (la.height(), la.width());

    let mul = |x: &ScalarField, y: &ScalarField| {
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        ScalarField::new(h, w, data).expect("finite products")
    };
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mu_a = gauss_filter(&la, &kernel);
    let mu_b = gauss_filter(&lb, &kernel);
    let e_aa = gauss_filter(&mul(&la, &la), &kernel);
    let e_bb = gauss_filter(&mul(&lb, &lb), &kernel);
    let e_ab = gauss_filter(&mul(&la, &lb), &kernel);

    let mut total = 0.0;
    for i in 0..h * w {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = e_aa.data()[i] - ma * ma;
        let vb = e_bb.data()[i] - mb * mb;
        let cov = e_ab.data()[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / (h * w) as f64)
}

pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror index with the edge sample included (…, 1, 0 | 0, 1, …).
#[inline]
fn mirror(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if idx < 0 { -1 - idx } else if idx >= n { 2 * n - 1 - idx } else { idx };
    m.clamp(0, n - 1) as usize
}

/// Separable Gaussian convolution with symmetric boundary.
pub(crate) fn gauss_filter(field: &ScalarField, kernel: &[f64]) -> ScalarField {
    let (h, w) = (field.height(), field.width());
    let half = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let sx = mirror(x as isize + t as isize - half, w);
                acc += kv * field.get(y, sx);
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let sy = mirror(y as isize + t as isize - half, h);
                acc += kv * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    ScalarField::new(h, w, out).expect("finite filter output")
}

/// Pixelwise |difference| x 10, clamped to [0,1], for visual export.
pub fn diff_map(watermarked: &ImageBuf, original: &ImageBuf) -> Result<ImageBuf> {
    check_dims(watermarked, original)?;
    let data = watermarked
        .data()
        .iter()
        .zip(original.data())
        .map(|(a, b)| ((a - b).abs() * 10.0).min(1.0))
        .collect();
    ImageBuf::new(
        watermarked.height(),
        watermarked.width(),
        watermarked.channels(),
        data,
    )
}

const LEAKAGE_EPS: f64 = 1e-12;

/// In-mask perturbation energy density over whole-image energy density.
/// Below 1 means the watermark avoids the masked region.
pub fn mask_leakage(watermarked: &ImageBuf, original: &ImageBuf, mask: &ScalarField) -> Result<f64> {
    check_dims(watermarked, original)?;
    if mask.height() != watermarked.height() || mask.width() != watermarked.width() {
        return Err(Error::Argument(format!(
            "mask dimensions {}x{} do not match image {}x{}",
            mask.height(),
            mask.width(),
            watermarked.height(),
            watermarked.width()
        )));
    }
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument("mask must be binary 0/1".into()));
    }
    let in_pixels = mask.data().iter().filter(|&&v| v == 1.0).count();
    if in_pixels == 0 {
        return Err(Error::UndefinedMetric("mask is empty; leakage undefined".into()));
    }
    let c = watermarked.channels();
    let n_pixels = mask.data().len();
    let mut in_energy = 0.0;
    let mut total_energy = 0.0;
    for (p, &m) in mask.data().iter().enumerate() {
        let mut e = 0.0;
        for ch in 0..c {
            let d = watermarked.data()[p * c + ch] - original.data()[p * c + ch];
            e += d * d;
        }
        total_energy += e;
        if m == 1.0 {
            in_energy += e;
        }
    }
    let in_density = in_energy / in_pixels as f64;
    let total_density = total_energy / n_pixels as f64;
    Ok(in_density / (total_density + LEAKAGE_EPS))
}

/// One evaluation item: original, watermarked, ground-truth mask, message.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub original: ImageBuf,
    pub watermarked: ImageBuf,
    pub mask: ScalarField,
    pub message: Message,
}

/// Aggregate quality and robustness over a corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    /// Mean PSNR over pairs with finite PSNR; absent if none are finite.
    pub psnr: Option<f64>,
    /// Number of pairs whose PSNR was the +inf sentinel (identical images).
    pub psnr_inf_count: usize,
    pub ssim: f64,
    /// Per-attack mean bit accuracy keyed by attack name.
    pub bit_acc: BTreeMap<String, f64>,
    /// Mean of the per-attack accuracies.
    pub avg_bit_acc: f64,
    pub mask_leakage: f64,
    pub n_images: usize,
}

/// Evaluates every pair under every attack. Deterministic: pairs and
/// attacks are processed in their given order.
pub fn evaluate(pairs: &[EvalPair], model: &ExtractorModel, attacks: &[AttackSpec]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("evaluate needs at least one pair".into()));
    }
    if attacks.is_empty() {
        return Err(Error::Argument("evaluate needs at least one attack".into()));
    }
    let mut psnr_sum = 0.0;
    let mut psnr_n = 0usize;
    let mut psnr_inf = 0usize;
    let mut ssim_sum = 0.0;
    let mut leak_sum = 0.0;
    let mut acc_sums: Vec<f64> = vec![0.0; attacks.len()];

    for pair in pairs {
        let p = psnr(&pair.watermarked, &pair.original)?;
        if p.is_finite() {
            psnr_sum += p;
            psnr_n += 1;
        } else {
            psnr_inf += 1;
        }
        ssim_sum += ssim(&pair.watermarked, &pair.original)?;
        leak_sum += mask_leakage(&pair.watermarked, &pair.original, &pair.mask)?;
        for (ai, attack) in attacks.iter().enumerate() {
            let decoded = attack_then_decode(&pair.watermarked, attack, model)?;
            acc_sums[ai] += bit_accuracy(&decoded, &pair.message)?;
        }
    }

    let n = pairs.len() as f64;
    let mut bit_acc = BTreeMap::new();
    for (ai, attack) in attacks.iter().enumerate() {
        let key = if bit_acc.contains_key(attack.name()) {
            attack.label()
        } else {
            attack.name().to_string()
        };
        bit_acc.insert(key, acc_sums[ai] / n);
    }
    let avg_bit_acc = bit_acc.values().sum::<f64>() / bit_acc.len() as f64;

    Ok(EvalReport {
        psnr: (psnr_n > 0).then(|| psnr_sum / psnr_n as f64),
        psnr_inf_count: psnr_inf,
        ssim: ssim_sum / n,
        bit_acc,
        avg_bit_acc,
        mask_leakage: leak_sum / n,
        n_images: pairs.len(),
    })
}

fn check_dims(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::Argument(format!(
            "image dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

fn check_dims_hw(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Argument(format!(
            "image dimension mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

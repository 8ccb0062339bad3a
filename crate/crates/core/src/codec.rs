//! Watermark message extraction.
//!
//! The extractor is a fixed feature pipeline (luma, bilinear resize to a
//! canonical grid, mean removal, orthonormal 2D DCT, low-frequency zigzag
//! coefficients) followed by a trained linear bit projection and an optional
//! PCA-whitening affine layer. Training embeds random messages with fixed
//! pseudo-random carrier patterns, pushes them through a random transform,
//! and minimizes binary cross-entropy with Adam. Whitening is fit afterwards
//! on non-watermarked images so extractor outputs are zero-mean and
//! decorrelated on the reference corpus.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackSpec};
use crate::dct::{dct2, idct2, zigzag_order, CosTable};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::image::{ImageBuf, LUMA_WEIGHTS};
use crate::{mix_seed, sigmoid};

/// Amplitude of the per-bit carrier patterns used only during training.
const CARRIER_AMPLITUDE: f64 = 0.02;
/// Eigenvalues below this are clamped before inversion in whitening.
const EIGENVALUE_FLOOR: f64 = 1e-10;
/// Adam hyperparameters for extractor training.
const TRAIN_LR: f64 = 5e-4;
const TRAIN_BETA1: f64 = 0.9;
const TRAIN_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const MODEL_MAGIC: &[u8; 4] = b"WMK1";

/// A k-bit watermark payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    bits: Vec<u8>,
}

impl Message {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Argument("message must have at least one bit".into()));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Argument("message bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn random(k: usize, rng: &mut impl Rng) -> Self {
        Self {
            bits: (0..k).map(|_| rng.gen_range(0..=1u8)).collect(),
        }
    }

    /// Parses `ceil(k/4)` hex characters, bits most-significant first.
    /// Padding bits beyond `k` must be zero.
    pub fn from_hex(s: &str, k: usize) -> Result<Self> {
        let expected = k.div_ceil(4);
        if s.len() != expected {
            return Err(Error::Argument(format!(
                "message hex must be {expected} chars for {k} bits, got {}",
                s.len()
            )));
        }
        let mut bits = Vec::with_capacity(expected * 4);
        for c in s.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::Argument(format!("invalid hex character {c:?}")))?;
            for shift in (0..4).rev() {
                bits.push(((v >> shift) & 1) as u8);
            }
        }
        if bits[k..].iter().any(|&b| b != 0) {
            return Err(Error::Argument("padding bits beyond message length must be zero".into()));
        }
        bits.truncate(k);
        Message::new(bits)
    }

    pub fn to_hex(&self) -> String {
        let mut out = String::new();
        for chunk in self.bits.chunks(4) {
            let mut v = 0u32;
            for (i, &b) in chunk.iter().enumerate() {
                v |= (b as u32) << (3 - i);
            }
            out.push(char::from_digit(v, 16).unwrap());
        }
        out
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Fixed feature pipeline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Side of the square grid images are resized to before the DCT.
    pub canonical_size: usize,
    /// Number of AC coefficients kept, in zigzag order, DC excluded.
    pub coeff_count: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            canonical_size: 32,
            coeff_count: 256,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.canonical_size < 2 {
            return Err(Error::Argument("canonical_size must be at least 2".into()));
        }
        if self.coeff_count == 0 || self.coeff_count > self.canonical_size * self.canonical_size - 1 {
            return Err(Error::Argument(format!(
                "coeff_count must be in 1..={}",
                self.canonical_size * self.canonical_size - 1
            )));
        }
        Ok(())
    }
}

/// Whitening affine layer appended after the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    /// k x k row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The watermark extractor: feature spec, linear projection, optional
/// whitening layer, and provenance (seed, training transforms).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorModel {
    pub spec: FeatureSpec,
    pub k: usize,
    /// k x d row-major.
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
    pub whitening: Option<Whitening>,
    pub version: u32,
    pub seed: u64,
    /// Labels of the transforms sampled during training.
    pub transforms: Vec<String>,
}

/// Luma, resize, mean removal, DCT, zigzag AC selection.
pub fn extract_features(img: &ImageBuf, spec: &FeatureSpec) -> Vec<f64> {
    let n = spec.canonical_size;
    let resized = img
        .to_luma()
        .resize_bilinear(n, n)
        .expect("canonical size is positive");
    let mean = resized.mean();
    let grid: Vec<f64> = resized.data().iter().map(|v| v - mean).collect();
    let table = CosTable::new(n);
    let coeffs = dct2(&table, &grid);
    let order = zigzag_order(n);
    order[1..=spec.coeff_count].iter().map(|&i| coeffs[i]).collect()
}

/// Transpose of [`extract_features`] as a linear map: scatters a feature
/// cotangent back to an image-shaped gradient (same data layout as `img`).
pub fn extract_features_backward(img: &ImageBuf, spec: &FeatureSpec, dfeat: &[f64]) -> Vec<f64> {
    let n = spec.canonical_size;
    assert_eq!(dfeat.len(), spec.coeff_count);
    let order = zigzag_order(n);
    let mut coeff_grad = vec![0.0; n * n];
    for (j, &idx) in order[1..=spec.coeff_count].iter().enumerate() {
        coeff_grad[idx] = dfeat[j];
    }
    let table = CosTable::new(n);
    // Orthonormal transform: transpose equals inverse.
    let mut grid_grad = idct2(&table, &coeff_grad);
    // Transpose of mean subtraction is mean subtraction.
    let gm = grid_grad.iter().sum::<f64>() / grid_grad.len() as f64;
    for g in &mut grid_grad {
        *g -= gm;
    }
    let grid_field = ScalarField::new(n, n, grid_grad).expect("finite gradient");
    let luma_grad = ScalarField::resize_bilinear_transpose(&grid_field, img.height(), img.width())
        .expect("source dims are positive");
    let c = img.channels();
    if c == 1 {
        return luma_grad.into_data();
    }
    let mut out = vec![0.0; img.height() * img.width() * 3];
    for (p, &g) in luma_grad.data().iter().enumerate() {
        for ch in 0..3 {
            out[p * 3 + ch] = g * LUMA_WEIGHTS[ch];
        }
    }
    out
}

/// Projection (and whitening, when present) applied to a feature vector.
pub fn logits_from_features(model: &ExtractorModel, features: &[f64]) -> Vec<f64> {
    let d = model.spec.coeff_count;
    assert_eq!(features.len(), d);
    let mut logits = vec![0.0; model.k];
    for i in 0..model.k {
        let row = &model.projection[i * d..(i + 1) * d];
        logits[i] = model.bias[i] + row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
    }
    match &model.whitening {
        Some(w) => affine(&w.weight, &w.bias, &logits),
        None => logits,
    }
}

/// Transpose of [`logits_from_features`]: cotangent on logits back to a
/// cotangent on features.
pub fn logits_backward_to_features(model: &ExtractorModel, dlogits: &[f64]) -> Vec<f64> {
    let k = model.k;
    let d = model.spec.coeff_count;
    assert_eq!(dlogits.len(), k);
    let pre = match &model.whitening {
        Some(w) => {
            let mut g = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    g[j] += w.weight[i * k + j] * dlogits[i];
                }
            }
            g
        }
        None => dlogits.to_vec(),
    };
    let mut dfeat = vec![0.0; d];
    for i in 0..k {
        let row = &model.projection[i * d..(i + 1) * d];
        for j in 0..d {
            dfeat[j] += row[j] * pre[i];
        }
    }
    dfeat
}

fn affine(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut out = vec![0.0; k];
    for i in 0..k {
        let row = &weight[i * k..(i + 1) * k];
        out[i] = bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
    out
}

/// Pre-sigmoid message scores for an image.
pub fn decode_logits(model: &ExtractorModel, img: &ImageBuf) -> Vec<f64> {
    let features = extract_features(img, &model.spec);
    logits_from_features(model, &features)
}

/// Hard decision: bit i is 1 iff logit i is strictly positive.
pub fn decode_bits(logits: &[f64]) -> Message {
    Message::new(logits.iter().map(|&l| u8::from(l > 0.0)).collect())
        .expect("logit vector is non-empty")
}

/// Binary cross-entropy over sigmoid readouts, with its gradient in logits.
/// Uses the log-sum-exp form, so it is stable for large |logit|.
pub fn msg_loss(logits: &[f64], message: &Message) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), message.len(), "logits/message length mismatch");
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, (&x, &m)) in logits.iter().zip(message.bits()).enumerate() {
        let m = m as f64;
        // -[m log s(x) + (1-m) log(1-s(x))] = max(x,0) - m*x + log(1+exp(-|x|))
        value += x.max(0.0) - m * x + (-x.abs()).exp().ln_1p();
        grad[i] = sigmoid(x) - m;
    }
    (value, grad)
}

/// Fraction of matching bits.
pub fn bit_accuracy(a: &Message, b: &Message) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "bit_accuracy length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let matching = a.bits().iter().zip(b.bits()).filter(|(x, y)| x == y).count();
    Ok(matching as f64 / a.len() as f64)
}

/// Deterministic per-bit carrier: a pseudo-random +/-1 field derived from
/// the model seed, the bit index, and the image dimensions. The field is
/// the sign of band-limited noise spanning exactly the coefficient window
/// the extractor reads, so the 48 carriers stay near-orthogonal where the
/// features live while surviving the canonical resize and the geometric
/// transforms.
fn carrier_field(spec: &FeatureSpec, seed: u64, bit: usize, height: usize, width: usize) -> Vec<f64> {
    let dims = ((height as u64) << 32) | width as u64;
    let sub = mix_seed(mix_seed(seed, 0xCA11, dims), 0xB17, bit as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(sub);
    let n = spec.canonical_size;
    let order = zigzag_order(n);
    let mut coeffs = vec![0.0; n * n];
    for &idx in &order[1..=spec.coeff_count] {
        coeffs[idx] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    let table = CosTable::new(n);
    let noise = idct2(&table, &coeffs);
    let grid = ScalarField::new(n, n, noise).expect("finite idct");
    let up = grid
        .resize_bilinear(height, width)
        .expect("image dims positive");
    up.data().iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect()
}

/// Adds the message-signed carrier stack to an image and clamps to [0,1].
fn embed_carriers(img: &ImageBuf, message: &Message, carriers: &[Vec<f64>]) -> ImageBuf {
    let c = img.channels();
    let mut data = img.data().to_vec();
    for (i, &bit) in message.bits().iter().enumerate() {
        let sign = if bit == 1 { 1.0 } else { -1.0 };
        let carrier = &carriers[i];
        for (p, &cv) in carrier.iter().enumerate() {
            let delta = CARRIER_AMPLITUDE * sign * cv;
            for ch in 0..c {
                data[p * c + ch] += delta;
            }
        }
    }
    ImageBuf::from_clamped(img.height(), img.width(), c, data).expect("finite carrier sum")
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], t: usize, lr: f64, b1: f64, b2: f64) {
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Seeded random initialization of the projection (scaled uniform) with
/// zero bias and no whitening.
fn init_model(k: usize, seed: u64, transforms: &[AttackSpec]) -> ExtractorModel {
    let spec = FeatureSpec::default();
    let d = spec.coeff_count;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1117, 0));
    let bound = (6.0 / (k + d) as f64).sqrt();
    let projection = (0..k * d).map(|_| rng.gen_range(-bound..bound)).collect();
    ExtractorModel {
        spec,
        k,
        projection,
        bias: vec![0.0; k],
        whitening: None,
        version: 1,
        seed,
        transforms: transforms.iter().map(|t| t.label()).collect(),
    }
}

/// Trains the projection and bias with BCE on carrier-embedded, transformed
/// images. Deterministic given (corpus, k, transforms, steps, seed).
pub fn train_extractor(
    corpus: &[ImageBuf],
    k: usize,
    transforms: &[AttackSpec],
    steps: usize,
    seed: u64,
) -> Result<ExtractorModel> {
    if corpus.len() < 32 {
        return Err(Error::Argument(format!(
            "training corpus must have at least 32 images, got {}",
            corpus.len()
        )));
    }
    if k == 0 {
        return Err(Error::Argument("message length k must be positive".into()));
    }
    for t in transforms {
        t.validate()?;
    }

    let mut model = init_model(k, seed, transforms);
    let d = model.spec.coeff_count;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7EA1, 0));
    let mut adam_w = Adam::new(k * d);
    let mut adam_b = Adam::new(k);
    let mut grad_w = vec![0.0; k * d];

    // Carrier stacks are fixed per image size; cache them.
    let mut carriers: std::collections::HashMap<(usize, usize), Vec<Vec<f64>>> =
        std::collections::HashMap::new();

    for step in 0..steps {
        let img = &corpus[rng.gen_range(0..corpus.len())];
        let message = Message::random(k, &mut rng);
        let stack = carriers
            .entry((img.height(), img.width()))
            .or_insert_with(|| {
                (0..k)
                    .map(|bit| carrier_field(&model.spec, seed, bit, img.height(), img.width()))
                    .collect()
            });
        let marked = embed_carriers(img, &message, stack);

        let choice = rng.gen_range(0..=transforms.len());
        let transformed = if choice < transforms.len() {
            attacks::apply(&marked, &transforms[choice])?
        } else {
            marked
        };

        let features = extract_features(&transformed, &model.spec);
        let logits = logits_from_features(&model, &features);
        let (_, glogits) = msg_loss(&logits, &message);

        for i in 0..k {
            let g = glogits[i];
            let row = &mut grad_w[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = g * features[j];
            }
        }
        adam_w.step(&mut model.projection, &grad_w, step + 1, TRAIN_LR, TRAIN_BETA1, TRAIN_BETA2);
        adam_b.step(&mut model.bias, &glogits, step + 1, TRAIN_LR, TRAIN_BETA1, TRAIN_BETA2);
    }
    Ok(model)
}

/// Fits the PCA-whitening layer on non-watermarked images: centers logits
/// with the corpus mean and decorrelates with the inverse square root of
/// the population covariance.
pub fn whiten_fit(model: &ExtractorModel, corpus: &[ImageBuf]) -> Result<ExtractorModel> {
    let k = model.k;
    if corpus.len() < 10 * k {
        return Err(Error::Argument(format!(
            "whitening corpus must have at least {} images, got {}",
            10 * k,
            corpus.len()
        )));
    }

    let unwhitened = ExtractorModel {
        whitening: None,
        ..model.clone()
    };
    let logits: Vec<Vec<f64>> = corpus.iter().map(|img| decode_logits(&unwhitened, img)).collect();
    let n = logits.len() as f64;

    let mut mu = vec![0.0; k];
    for l in &logits {
        for i in 0..k {
            mu[i] += l[i];
        }
    }
    for m in &mut mu {
        *m /= n;
    }

    let mut cov = DMatrix::<f64>::zeros(k, k);
    for l in &logits {
        for i in 0..k {
            let di = l[i] - mu[i];
            for j in 0..k {
                cov[(i, j)] += di * (l[j] - mu[j]);
            }
        }
    }
    cov /= n;

    let eig = cov.symmetric_eigen();
    let mut inv_sqrt = DVector::<f64>::zeros(k);
    for i in 0..k {
        inv_sqrt[i] = 1.0 / eig.eigenvalues[i].max(EIGENVALUE_FLOOR).sqrt();
    }
    // weight = Lambda^{-1/2} U^T
    let mut weight = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            weight[i * k + j] = inv_sqrt[i] * eig.eigenvectors[(j, i)];
        }
    }
    let mut bias = vec![0.0; k];
    for i in 0..k {
        bias[i] = -(0..k).map(|j| weight[i * k + j] * mu[j]).sum::<f64>();
    }

    let mut out = model.clone();
    out.whitening = Some(Whitening { weight, bias });
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    k: usize,
    canonical_size: usize,
    coeff_count: usize,
    seed: u64,
    has_whitening: bool,
    transforms: Vec<String>,
}

/// Serializes the model: magic, length-prefixed JSON header, then the f64
/// little-endian payload (projection, bias, whitening weight and bias).
pub fn model_to_bytes(model: &ExtractorModel) -> Vec<u8> {
    let header = ModelHeader {
        version: model.version,
        k: model.k,
        canonical_size: model.spec.canonical_size,
        coeff_count: model.spec.coeff_count,
        seed: model.seed,
        has_whitening: model.whitening.is_some(),
        transforms: model.transforms.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    let mut push = |vals: &[f64]| {
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    push(&model.projection);
    push(&model.bias);
    if let Some(w) = &model.whitening {
        push(&w.weight);
        push(&w.bias);
    }
    bytes
}

pub fn save_model(model: &ExtractorModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ExtractorModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != MODEL_MAGIC {
        return Err(Error::format(path, 0, "bad model magic, expected WMK1"));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if 8 + json_len > bytes.len() {
        return Err(Error::format(path, 8, "truncated model header"));
    }
    let header: ModelHeader = serde_json::from_slice(&bytes[8..8 + json_len])
        .map_err(|e| Error::format(path, 8, format!("model header: {e}")))?;
    let spec = FeatureSpec {
        canonical_size: header.canonical_size,
        coeff_count: header.coeff_count,
    };
    spec.validate()?;
    let k = header.k;
    let d = spec.coeff_count;
    let mut expected = k * d + k;
    if header.has_whitening {
        expected += k * k + k;
    }
    let payload = &bytes[8 + json_len..];
    if payload.len() != expected * 8 {
        return Err(Error::format(
            path,
            8 + json_len,
            format!("model payload: expected {} floats, got {}", expected, payload.len() / 8),
        ));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let projection = take(k * d);
    let bias = take(k);
    let whitening = if header.has_whitening {
        Some(Whitening {
            weight: take(k * k),
            bias: take(k),
        })
    } else {
        None
    };
    if projection.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(Error::format(path, 8 + json_len, "non-finite model weights"));
    }
    Ok(ExtractorModel {
        spec,
        k,
        projection,
        bias,
        whitening,
        version: header.version,
        seed: header.seed,
        transforms: header.transforms,
    })
}

//! Pathology localization from cross-attention bundles.
//!
//! The pipeline: upsample per-token attention slices to image resolution,
//! aggregate them, pick the token whose attention support forms the fewest
//! density clusters (compact maps localize better than diffuse ones), and
//! rescale the winner into a soft localization map via z-score, sigmoid and
//! min-max normalization with a quantile threshold.

use crate::bundle::AttentionBundle;
use crate::dbscan::dbscan;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::sigmoid;

/// Parameters of clustering-driven attention selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasParams {
    /// Pixels above this quantile of the per-token map form the point set
    /// handed to the clusterer.
    pub support_quantile: f64,
    /// DBSCAN radius in pixels; 1.5 makes diagonal neighbors reachable.
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for CasParams {
    fn default() -> Self {
        Self {
            support_quantile: 0.90,
            eps: 1.5,
            min_pts: 5,
        }
    }
}

impl CasParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.support_quantile > 0.0 && self.support_quantile < 1.0) {
            return Err(Error::Argument(format!(
                "support_quantile must be in (0,1), got {}",
                self.support_quantile
            )));
        }
        if self.eps <= 0.0 {
            return Err(Error::Argument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts < 1 {
            return Err(Error::Argument("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters of adaptive attention scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AasParams {
    /// Quantile of the scaled map that becomes the threshold tau.
    pub tau_quantile: f64,
    /// Sigmoid slope applied to (scaled - tau); 1.0 reproduces the plain
    /// sigmoid, larger values sharpen the localization boundary.
    pub gain: f64,
}

impl Default for AasParams {
    fn default() -> Self {
        Self {
            tau_quantile: 0.7,
            gain: 10.0,
        }
    }
}

impl AasParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_quantile > 0.0 && self.tau_quantile < 1.0) {
            return Err(Error::Argument(format!(
                "tau_quantile must be in (0,1), got {}",
                self.tau_quantile
            )));
        }
        if self.gain <= 0.0 {
            return Err(Error::Argument(format!("gain must be positive, got {}", self.gain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizeMode {
    /// Cluster-based token selection followed by adaptive scaling.
    Full,
    /// Adaptive scaling of the token-averaged map; selection bypassed.
    NoCas,
    /// Selected map min-max normalized and hard-thresholded at tau.
    NoAas,
}

impl LocalizeMode {
    pub fn name(&self) -> &'static str {
        match self {
            LocalizeMode::Full => "full",
            LocalizeMode::NoCas => "no_cas",
            LocalizeMode::NoAas => "no_aas",
        }
    }
}

/// Output of localization for one word.
#[derive(Debug, Clone)]
pub struct LocalizationResult {
    pub word: String,
    /// Global token index of the selected token.
    pub selected_token: usize,
    /// Per-token cluster counts in word order; `None` marks a token whose
    /// support clustered entirely to noise (treated as +inf by selection)
    /// or a token not examined in the chosen mode.
    pub cluster_counts: Vec<Option<usize>>,
    pub tau: f64,
    pub field: ScalarField,
}

/// Bilinear upsampling to image resolution with corner-aligned samples.
pub fn upsample_bilinear(field: &ScalarField, height: usize, width: usize) -> Result<ScalarField> {
    if height == 0 || width == 0 {
        return Err(Error::Argument("upsample target must be positive".into()));
    }
    field.resize_bilinear(height, width)
}

/// Sum of a token's upsampled slices over (layer, head, timestep), in
/// canonical slice order with double-precision accumulation.
fn token_map(bundle: &AttentionBundle, token_index: usize) -> Result<ScalarField> {
    let token = &bundle.tokens[token_index];
    if token.slices.is_empty() {
        return Err(Error::Validation(format!(
            "token {token_index} ({:?}) has no attention slices",
            token.text
        )));
    }
    let (h, w) = (bundle.target_height, bundle.target_width);
    let mut order: Vec<usize> = (0..token.slices.len()).collect();
    order.sort_by_key(|&i| {
        let s = &token.slices[i];
        (s.layer, s.head, s.timestep)
    });
    let mut acc = vec![0.0f64; h * w];
    for i in order {
        let up = upsample_bilinear(&token.slices[i].map, h, w)?;
        for (a, v) in acc.iter_mut().zip(up.data()) {
            *a += v;
        }
    }
    ScalarField::new(h, w, acc)
}

/// Token-averaged aggregation: mean over the word's tokens of each token's
/// (layer, head, timestep)-summed upsampled map.
pub fn aggregate_word(bundle: &AttentionBundle, word_index: usize) -> Result<ScalarField> {
    let word = bundle
        .words
        .get(word_index)
        .ok_or_else(|| Error::Argument(format!("word index {word_index} out of range")))?;
    let n = word.token_indices.len() as f64;
    let (h, w) = (bundle.target_height, bundle.target_width);
    let mut acc = vec![0.0f64; h * w];
    for &ti in &word.token_indices {
        let map = token_map(bundle, ti)?;
        for (a, v) in acc.iter_mut().zip(map.data()) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    ScalarField::new(h, w, acc)
}

/// Clustering-driven selection: returns the global index of the token whose
/// attention support forms the fewest clusters, plus all per-token counts.
pub fn cas_select(
    bundle: &AttentionBundle,
    word_index: usize,
    params: &CasParams,
) -> Result<(usize, Vec<Option<usize>>)> {
    params.validate()?;
    let word = bundle
        .words
        .get(word_index)
        .ok_or_else(|| Error::Argument(format!("word index {word_index} out of range")))?;

    let mut counts = Vec::with_capacity(word.token_indices.len());
    for &ti in &word.token_indices {
        let map = token_map(bundle, ti)?;
        let threshold = map.quantile(params.support_quantile);
        let mut points = Vec::new();
        for y in 0..map.height() {
            for x in 0..map.width() {
                if map.get(y, x) > threshold {
                    points.push((y as f64, x as f64));
                }
            }
        }
        let k = dbscan(&points, params.eps, params.min_pts).cluster_count;
        counts.push(if k == 0 { None } else { Some(k) });
    }

    // argmin over counts; None sorts above any finite count; ties break to
    // the lowest position in the word.
    let best = counts
        .iter()
        .enumerate()
        .filter_map(|(pos, c)| c.map(|k| (pos, k)))
        .min_by_key(|&(pos, k)| (k, pos));
    match best {
        Some((pos, _)) => Ok((word.token_indices[pos], counts)),
        None => Err(Error::NoLocalizedToken),
    }
}

/// Adaptive attention scaling: z-score, sigmoid, global min-max, then a
/// sigmoid threshold at the tau quantile of the scaled map. Returns the
/// threshold and the localization field with values strictly in (0, 1).
pub fn aas(selected_map: &ScalarField, params: &AasParams) -> Result<(f64, ScalarField)> {
    params.validate()?;
    let scaled = scale_map(selected_map)?;
    let tau = scaled.quantile(params.tau_quantile);
    let data = scaled
        .data()
        .iter()
        .map(|&v| sigmoid(params.gain * (v - tau)))
        .collect();
    Ok((tau, ScalarField::new(scaled.height(), scaled.width(), data)?))
}

/// Steps 1-3 of adaptive scaling: z-score normalize (population std),
/// elementwise sigmoid, min-max to [0, 1].
fn scale_map(map: &ScalarField) -> Result<ScalarField> {
    if map.max() == map.min() {
        return Err(Error::DegenerateMap(
            "constant map: z-score normalization undefined".into(),
        ));
    }
    let n = map.data().len() as f64;
    let mean = map.mean();
    let var = map.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let sig: Vec<f64> = map.data().iter().map(|&v| sigmoid((v - mean) / std)).collect();
    let lo = sig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data = sig.iter().map(|&v| (v - lo) / range).collect();
    ScalarField::new(map.height(), map.width(), data)
}

/// Epsilon used to map a hard 0/1 threshold mask into the open interval.
const HARD_MASK_EPS: f64 = 1e-3;

/// End-to-end localization for one word.
pub fn localize(
    bundle: &AttentionBundle,
    word_index: usize,
    cas: &CasParams,
    aas_params: &AasParams,
    mode: LocalizeMode,
) -> Result<LocalizationResult> {
    bundle.validate()?;
    let word = bundle
        .words
        .get(word_index)
        .ok_or_else(|| Error::Argument(format!("word index {word_index} out of range")))?;
    let word_text = word.text.clone();
    let n_tokens = word.token_indices.len();

    match mode {
        LocalizeMode::Full => {
            let (selected, counts) = cas_select(bundle, word_index, cas)?;
            let map = token_map(bundle, selected)?;
            let (tau, field) = aas(&map, aas_params)?;
            Ok(LocalizationResult {
                word: word_text,
                selected_token: selected,
                cluster_counts: counts,
                tau,
                field,
            })
        }
        LocalizeMode::NoCas => {
            let map = aggregate_word(bundle, word_index)?;
            let (tau, field) = aas(&map, aas_params)?;
            Ok(LocalizationResult {
                word: word_text,
                selected_token: word.token_indices[0],
                cluster_counts: vec![None; n_tokens],
                tau,
                field,
            })
        }
        LocalizeMode::NoAas => {
            let (selected, counts) = cas_select(bundle, word_index, cas)?;
            let map = token_map(bundle, selected)?;
            let (lo, hi) = (map.min(), map.max());
            if hi == lo {
                return Err(Error::DegenerateMap("constant map: min-max undefined".into()));
            }
            let scaled: Vec<f64> = map.data().iter().map(|&v| (v - lo) / (hi - lo)).collect();
            let tau = crate::field::quantile_of(&scaled, aas_params.tau_quantile);
            let data = scaled
                .iter()
                .map(|&v| if v > tau { 1.0 - HARD_MASK_EPS } else { HARD_MASK_EPS })
                .collect();
            Ok(LocalizationResult {
                word: word_text,
                selected_token: selected,
                cluster_counts: counts,
                tau,
                field: ScalarField::new(map.height(), map.width(), data)?,
            })
        }
    }
}

/// Pixelwise maximum across per-word maps: the union of suppressed regions.
pub fn combine_words(results: &[&ScalarField]) -> Result<ScalarField> {
    let first = results
        .first()
        .ok_or_else(|| Error::Argument("combine_words needs at least one map".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut acc = first.data().to_vec();
    for field in &results[1..] {
        if field.height() != h || field.width() != w {
            return Err(Error::Argument(format!(
                "combine_words dimension mismatch: {h}x{w} vs {}x{}",
                field.height(),
                field.width()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(field.data()) {
            *a = a.max(v);
        }
    }
    ScalarField::new(h, w, acc)
}

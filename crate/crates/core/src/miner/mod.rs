//! Pattern mining head.
//!
//! Pooled final-layer responses are binarized against per-filter thresholds,
//! a fully connected layer with sigmoid outputs is trained on the frozen
//! binary profiles (cross-entropy plus an L1 penalty), and each output
//! neuron's `k` heaviest positive weights name a visual pattern.

mod bank;

pub use bank::{BankError, PatternBank, PatternStats, BANK_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("cannot fit thresholds on an empty set")]
    EmptySet,
    #[error("need at least {needed} images to fit thresholds, got {found}")]
    TooFewImages { needed: usize, found: usize },
    #[error("quantile {0} outside (0, 1)")]
    Quantile(f64),
    #[error("length mismatch: expected {expected}, found {found}")]
    Length { expected: usize, found: usize },
    #[error("training needs both positive and negative images")]
    SingleClass,
    #[error("loss diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid mining configuration: {0}")]
    Config(String),
}

/// Which images the per-filter percentile is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitSet {
    Positive,
    Reference,
    All,
}

impl FitSet {
    pub fn as_str(self) -> &'static str {
        match self {
            FitSet::Positive => "positive",
            FitSet::Reference => "reference",
            FitSet::All => "all",
        }
    }
}

impl fmt::Display for FitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(FitSet::Positive),
            "reference" => Ok(FitSet::Reference),
            "all" => Ok(FitSet::All),
            _ => Err(format!(
                "unknown threshold fit set {s:?} (positive|reference|all)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub quantile: f64,
    pub fit_set: FitSet,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            quantile: 0.9,
            fit_set: FitSet::Reference,
        }
    }
}

/// One activation threshold per final-layer filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    pub values: Vec<f32>,
    pub policy: ThresholdPolicy,
}

impl ThresholdVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `q`-quantile with linear interpolation between order statistics: the
/// value at fractional rank `q * (n - 1)` of the sorted sample.
pub fn percentile(values: &[f32], q: f64) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    let v = sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac;
    Some(v as f32)
}

/// Per-filter `q`-quantile of the pooled responses in `pooled` (one vector
/// per image). The caller picks the images; `fit_set` is only recorded.
pub fn fit_thresholds(
    pooled: &[&[f32]],
    policy: ThresholdPolicy,
) -> Result<ThresholdVector, MinerError> {
    if pooled.is_empty() {
        return Err(MinerError::EmptySet);
    }
    if pooled.len() < 2 {
        return Err(MinerError::TooFewImages {
            needed: 2,
            found: pooled.len(),
        });
    }
    if !(policy.quantile > 0.0 && policy.quantile < 1.0) {
        return Err(MinerError::Quantile(policy.quantile));
    }
    let n_c = pooled[0].len();
    if let Some(bad) = pooled.iter().find(|p| p.len() != n_c) {
        return Err(MinerError::Length {
            expected: n_c,
            found: bad.len(),
        });
    }
    let values = (0..n_c)
        .map(|k| {
            let column: Vec<f32> = pooled.iter().map(|p| p[k]).collect();
            percentile(&column, policy.quantile).expect("non-empty column")
        })
        .collect();
    Ok(ThresholdVector { values, policy })
}

/// Binary activation status of every filter for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub image_id: String,
    pub pooled: Vec<f32>,
    pub active: Vec<bool>,
}

impl ActivationProfile {
    pub fn as_features(&self) -> Vec<f64> {
        self.active
            .iter()
            .map(|&a| if a { 1.0 } else { 0.0 })
            .collect()
    }
}

/// `active[k]` is true iff `pooled[k] > thresholds[k]`.
pub fn binarize(
    image_id: impl Into<String>,
    pooled: &[f32],
    thresholds: &ThresholdVector,
) -> Result<ActivationProfile, MinerError> {
    if pooled.len() != thresholds.len() {
        return Err(MinerError::Length {
            expected: thresholds.len(),
            found: pooled.len(),
        });
    }
    Ok(ActivationProfile {
        image_id: image_id.into(),
        pooled: pooled.to_vec(),
        active: pooled
            .iter()
            .zip(&thresholds.values)
            .map(|(v, t)| v > t)
            .collect(),
    })
}

/// Indices of positive (`y = 1`) and negative (`y = 0`) images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSet {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl LabeledSet {
    pub fn new(positives: Vec<usize>, negatives: Vec<usize>) -> Result<Self, MinerError> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(MinerError::SingleClass);
        }
        if positives.iter().any(|p| negatives.contains(p)) {
            return Err(MinerError::Config(
                "positive and negative sets overlap".into(),
            ));
        }
        Ok(LabeledSet {
            positives,
            negatives,
        })
    }

    /// Builds the set from per-image labels.
    pub fn from_labels(labels: &[bool]) -> Result<Self, MinerError> {
        let positives = (0..labels.len()).filter(|&i| labels[i]).collect();
        let negatives = (0..labels.len()).filter(|&i| !labels[i]).collect();
        LabeledSet::new(positives, negatives)
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    /// Number of output neurons, the expected pattern count.
    pub neurons: usize,
    pub l1: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Stop once the full-set objective has not improved by more than this
    /// over `plateau_window` iterations.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            neurons: 8,
            l1: 1e-3,
            learning_rate: 0.05,
            batch_size: 32,
            max_iterations: 500,
            plateau_tol: 1e-5,
            plateau_window: 20,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), MinerError> {
        let bad = |m: &str| Err(MinerError::Config(m.into()));
        if self.neurons == 0 {
            return bad("need at least one neuron");
        }
        if self.batch_size < 2 {
            return bad("batch size below 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return bad("L1 weight must be non-negative");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init scale must be non-negative");
        }
        Ok(())
    }
}

/// Fully connected layer `W` (`neurons x filters`, row-major) and its
/// training record.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningHead {
    pub neurons: usize,
    pub filters: usize,
    pub weights: Vec<f64>,
    pub config: HeadConfig,
    /// Full-set cross-entropy before the first step and after each step.
    pub loss_history: Vec<f64>,
}

impl MiningHead {
    pub fn from_weights(
        neurons: usize,
        filters: usize,
        weights: Vec<f64>,
    ) -> Result<Self, MinerError> {
        if weights.len() != neurons * filters {
            return Err(MinerError::Length {
                expected: neurons * filters,
                found: weights.len(),
            });
        }
        if neurons == 0 || weights.iter().any(|w| !w.is_finite()) {
            return Err(MinerError::Config(
                "head needs at least one neuron and finite weights".into(),
            ));
        }
        Ok(MiningHead {
            neurons,
            filters,
            weights,
            config: HeadConfig {
                neurons,
                ..HeadConfig::default()
            },
            loss_history: Vec::new(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.filters..(i + 1) * self.filters]
    }

    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights[i * self.filters + k]
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_history.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    /// Iterations actually run.
    pub fn iterations(&self) -> usize {
        self.loss_history.len().saturating_sub(1)
    }
}

pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// Pre-activations `h` and probabilities `p` of every neuron for one input.
pub fn head_forward(head: &MiningHead, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h: Vec<f64> = (0..head.neurons)
        .map(|i| head.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
        .collect();
    let p = h.iter().map(|&v| sigmoid(v)).collect();
    (h, p)
}

/// Mean cross-entropy over neurons (rows of `p`) and batch entries.
pub fn loss(p: &[Vec<f64>], y: &[f64]) -> f64 {
    if p.is_empty() || y.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for row in p {
        let mut s = 0.0;
        for (&pij, &yj) in row.iter().zip(y) {
            let q = pij.clamp(EPS, 1.0 - EPS);
            s += (1.0 - yj) * (1.0 - q).ln() + yj * q.ln();
        }
        total += s / y.len() as f64;
    }
    -total / p.len() as f64
}

/// Cross-entropy of weights `w` (`neurons x filters`) on inputs `xs` with
/// targets `ys`, and its gradient with respect to `w`.
pub fn loss_and_gradient(w: &[f64], neurons: usize, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
    let filters = w.len() / neurons;
    let b = xs.len() as f64;
    let scale = 1.0 / (neurons as f64 * b);
    let mut grad = vec![0.0; w.len()];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        for i in 0..neurons {
            let row = &w[i * filters..(i + 1) * filters];
            let h: f64 = row.iter().zip(x.iter()).map(|(a, v)| a * v).sum();
            let p = sigmoid(h);
            let q = p.clamp(EPS, 1.0 - EPS);
            total += (1.0 - y) * (1.0 - q).ln() + y * q.ln();
            let d = (p - y) * scale;
            for (g, v) in grad[i * filters..(i + 1) * filters]
                .iter_mut()
                .zip(x.iter())
            {
                *g += d * v;
            }
        }
    }
    (-total * scale, grad)
}

fn soft_threshold(w: f64, t: f64) -> f64 {
    if w > t {
        w - t
    } else if w < -t {
        w + t
    } else {
        0.0
    }
}

/// Trains the head on precomputed binary profiles. Batches hold half
/// positives and half negatives drawn with replacement; each step is a
/// gradient step on the cross-entropy followed by the L1 proximal step.
pub fn train_head(
    profiles: &[ActivationProfile],
    labels: &LabeledSet,
    config: &HeadConfig,
) -> Result<MiningHead, MinerError> {
    config.validate()?;
    if labels.positives.is_empty() || labels.negatives.is_empty() {
        return Err(MinerError::SingleClass);
    }
    let filters = profiles
        .first()
        .map(|p| p.active.len())
        .ok_or(MinerError::EmptySet)?;
    if let Some(&bad) = labels
        .positives
        .iter()
        .chain(&labels.negatives)
        .find(|&&i| i >= profiles.len())
    {
        return Err(MinerError::Config(format!(
            "profile index {bad} out of range"
        )));
    }
    if let Some(bad) = profiles.iter().find(|p| p.active.len() != filters) {
        return Err(MinerError::Length {
            expected: filters,
            found: bad.active.len(),
        });
    }
    let features: Vec<Vec<f64>> = profiles.iter().map(|p| p.as_features()).collect();
    let all: Vec<usize> = labels
        .positives
        .iter()
        .chain(&labels.negatives)
        .copied()
        .collect();
    let all_x: Vec<&[f64]> = all.iter().map(|&i| features[i].as_slice()).collect();
    let all_y: Vec<f64> = (0..all.len())
        .map(|j| if j < labels.positives.len() { 1.0 } else { 0.0 })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.neurons;
    let mut w: Vec<f64> = (0..n * filters)
        .map(|_| rng.gen_range(-config.init_scale..=config.init_scale))
        .collect();
    let objective = |w: &[f64]| loss_and_gradient(w, n, &all_x, &all_y).0;
    let penalty = |w: &[f64]| config.l1 * w.iter().map(|v| v.abs()).sum::<f64>();

    let mut history = vec![objective(&w)];
    let mut best = history[0] + penalty(&w);
    let mut best_at = 0;
    let half = config.batch_size / 2;
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<f64> = Vec::with_capacity(config.batch_size);
    for it in 1..=config.max_iterations {
        batch_x.clear();
        batch_y.clear();
        for j in 0..config.batch_size {
            let (pool, y) = if j < half {
                (&labels.positives, 1.0)
            } else {
                (&labels.negatives, 0.0)
            };
            batch_x.push(&features[pool[rng.gen_range(0..pool.len())]]);
            batch_y.push(y);
        }
        let (_, grad) = loss_and_gradient(&w, n, &batch_x, &batch_y);
        let shrink = config.learning_rate * config.l1;
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi = soft_threshold(*wi - config.learning_rate * g, shrink);
        }
        let l = objective(&w);
        if !l.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(MinerError::Diverged { iteration: it });
        }
        history.push(l);
        let total = l + penalty(&w);
        if total < best - config.plateau_tol {
            best = total;
            best_at = it;
        } else if it - best_at >= config.plateau_window {
            break;
        }
    }
    Ok(MiningHead {
        neurons: n,
        filters,
        weights: w,
        config: config.clone(),
        loss_history: history,
    })
}

/// A set of filters that fire together, read off one neuron's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPattern {
    pub neuron: usize,
    /// Ascending filter indices.
    pub filters: Vec<usize>,
    /// Weight of each filter in `filters`, same order.
    pub weights: Vec<f64>,
}

impl VisualPattern {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Top-`k` filters of every neuron row. Rows whose `k`-th largest weight is
/// not positive yield nothing, and identical filter sets keep only the row
/// with the largest weight sum. Output is ordered by neuron.
pub fn extract_patterns(head: &MiningHead, k: usize) -> Result<Vec<VisualPattern>, MinerError> {
    if k == 0 || k > head.filters {
        return Err(MinerError::Config(format!(
            "pattern size {k} outside 1..={}",
            head.filters
        )));
    }
    let mut out: Vec<VisualPattern> = Vec::new();
    for i in 0..head.neurons {
        let row = head.row(i);
        let mut order: Vec<usize> = (0..row.len()).collect();
        // stable sort keeps lower indices first among equal weights
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let top = &order[..k];
        if row[top[k - 1]] <= 0.0 {
            continue;
        }
        let mut filters = top.to_vec();
        filters.sort_unstable();
        let weights = filters.iter().map(|&f| row[f]).collect();
        let pattern = VisualPattern {
            neuron: i,
            filters,
            weights,
        };
        match out.iter_mut().find(|p| p.filters == pattern.filters) {
            Some(existing) => {
                if pattern.weight_sum() > existing.weight_sum() {
                    *existing = pattern;
                }
            }
            None => out.push(pattern),
        }
    }
    out.sort_by_key(|p| p.neuron);
    Ok(out)
}

/// Whether every filter of `pattern` is active in `profile`.
pub fn detect(pattern: &VisualPattern, profile: &ActivationProfile) -> bool {
    pattern
        .filters
        .iter()
        .all(|&f| profile.active.get(f).copied().unwrap_or(false))
}

/// Fraction of `profiles[indices]` in which `pattern` is detected.
pub fn detection_rate(
    pattern: &VisualPattern,
    profiles: &[ActivationProfile],
    indices: &[usize],
) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let hits = indices
        .iter()
        .filter(|&&i| detect(pattern, &profiles[i]))
        .count();
    hits as f64 / indices.len() as f64
}

/// Everything one mining run produces.
#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub thresholds: ThresholdVector,
    pub profiles: Vec<ActivationProfile>,
    pub head: MiningHead,
    pub patterns: Vec<(VisualPattern, PatternStats)>,
}

/// Fits thresholds on the set named by `policy`, binarizes every image,
/// trains the head, and extracts patterns with their training-set
/// detection rates.
pub fn mine(
    ids: &[String],
    pooled: &[Vec<f32>],
    labels: &LabeledSet,
    policy: ThresholdPolicy,
    config: &HeadConfig,
    k: usize,
) -> Result<MiningOutcome, MinerError> {
    if ids.len() != pooled.len() {
        return Err(MinerError::Length {
            expected: pooled.len(),
            found: ids.len(),
        });
    }
    let fit: Vec<usize> = match policy.fit_set {
        FitSet::Positive => labels.positives.clone(),
        FitSet::Reference => labels.negatives.clone(),
        FitSet::All => labels
            .positives
            .iter()
            .chain(&labels.negatives)
            .copied()
            .collect(),
    };
    if let Some(&bad) = fit.iter().find(|&&i| i >= pooled.len()) {
        return Err(MinerError::Config(format!(
            "image index {bad} out of range"
        )));
    }
    let fit_rows: Vec<&[f32]> = fit.iter().map(|&i| pooled[i].as_slice()).collect();
    let thresholds = fit_thresholds(&fit_rows, policy)?;
    let profiles = ids
        .iter()
        .zip(pooled)
        .map(|(id, p)| binarize(id.clone(), p, &thresholds))
        .collect::<Result<Vec<_>, _>>()?;
    let head = train_head(&profiles, labels, config)?;
    let patterns = extract_patterns(&head, k)?
        .into_iter()
        .map(|p| {
            let stats = PatternStats {
                positive_rate: detection_rate(&p, &profiles, &labels.positives),
                negative_rate: detection_rate(&p, &profiles, &labels.negatives),
            };
            (p, stats)
        })
        .collect();
    Ok(MiningOutcome {
        thresholds,
        profiles,
        head,
        patterns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn thresholds(values: Vec<f32>) -> ThresholdVector {
        ThresholdVector {
            values,
            policy: ThresholdPolicy::default(),
        }
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[4.0, 0.0, 3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(percentile(&[0.0, 1.0], 0.25), Some(0.25));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn constant_column_never_fires_on_its_fit_set() {
        let rows = [[0.7f32, 1.0], [0.7, 2.0], [0.7, 3.0]];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = fit_thresholds(&refs, ThresholdPolicy::default()).unwrap();
        assert_eq!(t.values[0], 0.7);
        for r in &rows {
            assert!(!binarize("x", r, &t).unwrap().active[0]);
        }
    }

    #[test]
    fn threshold_fit_errors() {
        assert!(matches!(
            fit_thresholds(&[], ThresholdPolicy::default()),
            Err(MinerError::EmptySet)
        ));
        let one: [&[f32]; 1] = [&[1.0]];
        assert!(matches!(
            fit_thresholds(&one, ThresholdPolicy::default()),
            Err(MinerError::TooFewImages { .. })
        ));
        let two: [&[f32]; 2] = [&[1.0], &[2.0]];
        let bad = ThresholdPolicy {
            quantile: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            fit_thresholds(&two, bad),
            Err(MinerError::Quantile(_))
        ));
    }

    #[test]
    fn binarize_is_strict() {
        let t = thresholds(vec![0.5, 0.5]);
        assert_eq!(
            binarize("a", &[0.2, 0.9], &t).unwrap().active,
            vec![false, true]
        );
        assert_eq!(
            binarize("a", &[0.5, 0.5], &t).unwrap().active,
            vec![false, false]
        );
        assert!(binarize("a", &[0.5], &t).is_err());
    }

    #[test]
    fn unit_row_forward() {
        let head = MiningHead::from_weights(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let (h, p) = head_forward(&head, &[1.0, 1.0, 0.0]);
        assert_eq!(h, vec![1.0]);
        assert!((p[0] - sigmoid(1.0)).abs() < 1e-15);
        let (_, p) = head_forward(&head, &[1.0, 0.0, 1.0]);
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn loss_examples() {
        let y = [1.0, 0.0, 1.0];
        let half = vec![vec![0.5; 3]; 2];
        assert!((loss(&half, &y) - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = vec![y.to_vec(); 2];
        assert!(loss(&perfect, &y) <= 2.0 * 3.0 * -(1.0 - EPS).ln());
    }

    #[test]
    fn separable_toy_learns_signed_weights() {
        let prof = |a: bool| ActivationProfile {
            image_id: String::new(),
            pooled: vec![],
            active: vec![a, !a],
        };
        let profiles: Vec<_> = (0..10).map(|i| prof(i < 5)).collect();
        let labels = LabeledSet::new((0..5).collect(), (5..10).collect()).unwrap();
        let cfg = HeadConfig {
            neurons: 1,
            ..Default::default()
        };
        let head = train_head(&profiles, &labels, &cfg).unwrap();
        assert!(head.weight(0, 0) > 0.0 && head.weight(0, 1) < 0.0);
        for (i, p) in profiles.iter().enumerate() {
            let (_, prob) = head_forward(&head, &p.as_features());
            assert_eq!(prob[0] > 0.5, i < 5);
        }
    }

    #[test]
    fn huge_l1_zeroes_weights() {
        let profiles: Vec<_> = (0..8)
            .map(|i| ActivationProfile {
                image_id: String::new(),
                pooled: vec![],
                active: vec![i % 2 == 0, i % 3 == 0, true],
            })
            .collect();
        let labels =
            LabeledSet::from_labels(&[true, false, true, false, true, false, true, false]).unwrap();
        let cfg = HeadConfig {
            l1: 10.0,
            neurons: 4,
            ..Default::default()
        };
        let head = train_head(&profiles, &labels, &cfg).unwrap();
        assert!(head.weights.iter().all(|w| w.abs() < 1e-3));
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            LabeledSet::from_labels(&[true, true]),
            Err(MinerError::SingleClass)
        ));
    }

    #[test]
    fn top_three_by_inspection() {
        let head = MiningHead::from_weights(1, 4, vec![0.9, 0.05, 0.8, 0.7]).unwrap();
        let p = extract_patterns(&head, 3).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].filters, vec![0, 2, 3]);
        assert_eq!(p[0].weights, vec![0.9, 0.8, 0.7]);
    }

    #[test]
    fn duplicate_sets_keep_heaviest_row() {
        let head = MiningHead::from_weights(
            3,
            4,
            vec![
                0.9, 0.0, 0.8, 0.7, //
                1.9, 0.0, 1.8, 1.7, //
                0.5, -0.1, -0.2, 0.4,
            ],
        )
        .unwrap();
        let p = extract_patterns(&head, 3).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].neuron, 1);
    }

    #[test]
    fn detect_requires_all_members() {
        let pattern = VisualPattern {
            neuron: 0,
            filters: vec![1, 4],
            weights: vec![1.0, 1.0],
        };
        let mut prof = ActivationProfile {
            image_id: String::new(),
            pooled: vec![],
            active: vec![false, true, false, false, true],
        };
        assert!(detect(&pattern, &prof));
        prof.active[4] = false;
        assert!(!detect(&pattern, &prof));
    }

    fn sort_oracle(row: &[f64], k: usize) -> Option<Vec<usize>> {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        // selection by repeated scan: largest weight, lowest index on ties
        let mut chosen = Vec::new();
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for &i in &idx {
                if best.is_none_or(|b| row[i] > row[b]) {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            chosen.push(b);
            idx.retain(|&i| i != b);
        }
        if row[*chosen.last().unwrap()] <= 0.0 {
            return None;
        }
        chosen.sort_unstable();
        Some(chosen)
    }

    proptest! {
        #[test]
        fn binarize_matches_elementwise(values in proptest::collection::vec(-2.0f32..2.0, 1..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = thresholds(values.iter().map(|_| rng.gen_range(-2.0f32..2.0)).collect());
            let prof = binarize("x", &values, &t).unwrap();
            for (k, v) in values.iter().enumerate() {
                prop_assert_eq!(prof.active[k], *v > t.values[k]);
            }
        }

        #[test]
        fn forward_matches_dot_product(n in 1usize..5, c in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x: Vec<f64> = (0..c).map(|_| rng.gen_range(0..2) as f64).collect();
            let head = MiningHead::from_weights(n, c, w.clone()).unwrap();
            let (h, p) = head_forward(&head, &x);
            for i in 0..n {
                let mut dot = 0.0;
                for k in 0..c {
                    dot += w[i * c + k] * x[k];
                }
                prop_assert!((h[i] - dot).abs() <= 1e-6 * dot.abs().max(1.0));
                let s = 1.0 / (1.0 + (-dot).exp());
                prop_assert!((p[i] - s).abs() <= 1e-6 * s);
            }
        }

        #[test]
        fn loss_matches_scalar_loop(n in 1usize..4, b in 1usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<Vec<f64>> = (0..n).map(|_| (0..b).map(|_| rng.gen_range(0.001..0.999)).collect()).collect();
            let y: Vec<f64> = (0..b).map(|_| rng.gen_range(0..2) as f64).collect();
            let mut acc = 0.0;
            for row in &p {
                let mut s = 0.0;
                for j in 0..b {
                    s += if y[j] == 1.0 { row[j].ln() } else { (1.0 - row[j]).ln() };
                }
                acc += s / b as f64;
            }
            let expected = -acc / n as f64;
            prop_assert!((loss(&p, &y) - expected).abs() < 1e-9);
        }

        #[test]
        fn extract_matches_sort_oracle(n in 1usize..6, c in 3usize..10, k in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse grid so ties happen
            let w: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-4..5) as f64 * 0.25).collect();
            let head = MiningHead::from_weights(n, c, w).unwrap();
            let patterns = extract_patterns(&head, k).unwrap();
            let mut expected: Vec<(usize, Vec<usize>)> = Vec::new();
            for i in 0..n {
                if let Some(set) = sort_oracle(head.row(i), k) {
                    let sum: f64 = set.iter().map(|&f| head.weight(i, f)).sum();
                    match expected.iter_mut().find(|(_, s)| *s == set) {
                        Some(e) => {
                            let old: f64 = e.1.iter().map(|&f| head.weight(e.0, f)).sum();
                            if sum > old { e.0 = i; }
                        }
                        None => expected.push((i, set)),
                    }
                }
            }
            expected.sort();
            let got: Vec<(usize, Vec<usize>)> = patterns.iter().map(|p| (p.neuron, p.filters.clone())).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn extract_ignores_positive_row_scaling(c in 3usize..10, seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = extract_patterns(&MiningHead::from_weights(1, c, w.clone()).unwrap(), 3).unwrap();
            let scaled = w.iter().map(|v| v * scale).collect();
            let b = extract_patterns(&MiningHead::from_weights(1, c, scaled).unwrap(), 3).unwrap();
            prop_assert_eq!(a.len(), b.len());
            if let (Some(a), Some(b)) = (a.first(), b.first()) {
                prop_assert_eq!(&a.filters, &b.filters);
            }
        }
    }
}

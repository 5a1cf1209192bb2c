//! Proposal metrics (IoU, ABO, MABO, recall at an IoU threshold) and the
//! classification proxy: a frozen pattern-detection layer feeding a
//! softmax classifier.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bbox::BBox;
use crate::localizer::Proposal;
use crate::miner::{HeadConfig, PatternBank, ThresholdVector, VisualPattern};
use crate::synthdata::{DatasetManifest, Split};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class {0:?} has no ground-truth boxes")]
    EmptyClass(String),
    #[error("no classes to average")]
    NoClasses,
    #[error("classification needs at least two classes")]
    SingleClass,
    #[error("no pattern banks")]
    NoBanks,
    #[error("length mismatch: expected {expected}, found {found}")]
    Length { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("classifier training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
}

/// Intersection over union of the pixel sets of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Proposals grouped by image, keeping their source pattern ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProposalSet {
    by_image: BTreeMap<String, Vec<(String, BBox)>>,
}

impl ProposalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_proposals(proposals: &[Proposal]) -> Self {
        let mut set = Self::new();
        for p in proposals {
            set.add(&p.image, &p.pattern, p.bbox);
        }
        set
    }

    pub fn add(&mut self, image: &str, pattern: &str, bbox: BBox) {
        self.by_image
            .entry(image.to_string())
            .or_default()
            .push((pattern.to_string(), bbox));
    }

    pub fn boxes(&self, image: &str) -> &[(String, BBox)] {
        self.by_image.get(image).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ground-truth boxes per class, each tagged with its image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub per_class: BTreeMap<String, Vec<(String, BBox)>>,
}

impl GroundTruth {
    /// Boxes of the images in `split`, or of every image when `None`.
    pub fn from_manifest(manifest: &DatasetManifest, split: Option<Split>) -> Self {
        let mut per_class: BTreeMap<String, Vec<(String, BBox)>> = BTreeMap::new();
        for rec in &manifest.images {
            if split.is_some_and(|s| s != rec.split) {
                continue;
            }
            for b in &rec.boxes {
                per_class
                    .entry(b.label.clone())
                    .or_default()
                    .push((rec.id.clone(), b.bbox));
            }
        }
        GroundTruth { per_class }
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.per_class.keys().map(String::as_str)
    }

    pub fn box_count(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }
}

/// Best IoU of `gt` against the proposals of its own image, 0 if none.
pub fn best_overlap(image: &str, gt: &BBox, proposals: &ProposalSet) -> f64 {
    proposals
        .boxes(image)
        .iter()
        .map(|(_, b)| iou(gt, b))
        .fold(0.0, f64::max)
}

/// Average best overlap of one class's ground truth.
pub fn abo(gts: &[(String, BBox)], proposals: &ProposalSet) -> Result<f64, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::EmptyClass(String::new()));
    }
    let sum: f64 = gts
        .iter()
        .map(|(img, g)| best_overlap(img, g, proposals))
        .sum();
    Ok(sum / gts.len() as f64)
}

/// Unweighted mean of per-class ABOs.
pub fn mabo(abos: &[f64]) -> Result<f64, EvalError> {
    if abos.is_empty() {
        return Err(EvalError::NoClasses);
    }
    Ok(abos.iter().sum::<f64>() / abos.len() as f64)
}

/// Fraction of ground-truth boxes matched by a same-image proposal with
/// IoU at least `threshold`.
pub fn recall_at(
    gts: &[(String, BBox)],
    proposals: &ProposalSet,
    threshold: f64,
) -> Result<f64, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::EmptyClass(String::new()));
    }
    let hits = gts
        .iter()
        .filter(|(img, g)| {
            proposals
                .boxes(img)
                .iter()
                .any(|(_, b)| iou(g, b) >= threshold)
        })
        .count();
    Ok(hits as f64 / gts.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub boxes: usize,
    pub abo: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub iou_threshold: f64,
    pub images: usize,
    pub proposals: usize,
    pub classes: Vec<ClassMetrics>,
    pub mabo: f64,
    /// Recall over all ground-truth boxes pooled across classes.
    pub recall: f64,
}

impl MetricsReport {
    pub fn mean_proposals(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.proposals as f64 / self.images as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "patternnet-metrics 1");
        let _ = writeln!(out, "fingerprint {}", self.fingerprint);
        let _ = writeln!(out, "iou-threshold {}", self.iou_threshold);
        let _ = writeln!(out, "images {}", self.images);
        let _ = writeln!(out, "proposals {}", self.proposals);
        let _ = writeln!(out, "mean-proposals {:.4}", self.mean_proposals());
        for c in &self.classes {
            let _ = writeln!(
                out,
                "class {} boxes {} abo {:.6} recall {:.6}",
                c.class, c.boxes, c.abo, c.recall
            );
        }
        let _ = writeln!(out, "mabo {:.6}", self.mabo);
        let _ = writeln!(out, "recall {:.6}", self.recall);
        out
    }
}

/// Scores `proposals` against `gt`. `images` is the number of evaluated
/// images, used for the proposals-per-image figure.
pub fn evaluate(
    gt: &GroundTruth,
    proposals: &ProposalSet,
    images: usize,
    iou_threshold: f64,
    fingerprint: &str,
) -> Result<MetricsReport, EvalError> {
    if gt.per_class.is_empty() {
        return Err(EvalError::NoClasses);
    }
    let classes = gt
        .per_class
        .par_iter()
        .map(|(class, boxes)| {
            let named = |e: EvalError| match e {
                EvalError::EmptyClass(_) => EvalError::EmptyClass(class.clone()),
                e => e,
            };
            Ok(ClassMetrics {
                class: class.clone(),
                boxes: boxes.len(),
                abo: abo(boxes, proposals).map_err(named)?,
                recall: recall_at(boxes, proposals, iou_threshold).map_err(named)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let abos: Vec<f64> = classes.iter().map(|c| c.abo).collect();
    let total = gt.box_count();
    let hits: f64 = classes.iter().map(|c| c.recall * c.boxes as f64).sum();
    Ok(MetricsReport {
        fingerprint: fingerprint.to_string(),
        iou_threshold,
        images,
        proposals: proposals.len(),
        mabo: mabo(&abos)?,
        recall: hits / total as f64,
        classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// 1 when the pattern is detected, else 0.
    #[default]
    Binary,
    /// Smallest normalised threshold margin over the pattern's filters,
    /// clamped to `[0, 1]`.
    Margin,
}

impl std::str::FromStr for FeatureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "binary" => Ok(FeatureMode::Binary),
            "margin" => Ok(FeatureMode::Margin),
            _ => Err(format!("unknown feature mode {s:?} (binary|margin)")),
        }
    }
}

/// The frozen layer turning pooled filter responses into one value per
/// mined pattern. Patterns from several banks are concatenated in bank
/// order, each judged against its own bank's thresholds.
#[derive(Debug, Clone)]
pub struct FeatureLayer {
    pub mode: FeatureMode,
    thresholds: Vec<ThresholdVector>,
    patterns: Vec<(usize, VisualPattern)>,
    /// Per-bank, per-filter `max_pooled - T` over the scaling images.
    spans: Vec<Vec<f32>>,
}

impl FeatureLayer {
    /// `scale_rows` are the pooled responses the margin mode normalises
    /// against (typically the training images); unused in binary mode.
    pub fn new(
        banks: &[PatternBank],
        mode: FeatureMode,
        scale_rows: &[Vec<f32>],
    ) -> Result<Self, EvalError> {
        if banks.is_empty() {
            return Err(EvalError::NoBanks);
        }
        let filters = banks[0].filter_count();
        let mut patterns = Vec::new();
        for (b, bank) in banks.iter().enumerate() {
            if bank.filter_count() != filters {
                return Err(EvalError::Length {
                    expected: filters,
                    found: bank.filter_count(),
                });
            }
            for (p, _) in &bank.patterns {
                patterns.push((b, p.clone()));
            }
        }
        if let Some(r) = scale_rows.iter().find(|r| r.len() != filters) {
            return Err(EvalError::Length {
                expected: filters,
                found: r.len(),
            });
        }
        let mut max = vec![f32::NEG_INFINITY; filters];
        for row in scale_rows {
            for (m, &v) in max.iter_mut().zip(row) {
                *m = m.max(v);
            }
        }
        let spans = banks
            .iter()
            .map(|bank| {
                bank.thresholds
                    .values
                    .iter()
                    .zip(&max)
                    .map(|(&t, &m)| m - t)
                    .collect()
            })
            .collect();
        Ok(FeatureLayer {
            mode,
            thresholds: banks.iter().map(|b| b.thresholds.clone()).collect(),
            patterns,
            spans,
        })
    }

    pub fn dim(&self) -> usize {
        self.patterns.len()
    }

    pub fn features(&self, pooled: &[f32]) -> Result<Vec<f64>, EvalError> {
        let filters = self.thresholds[0].len();
        if pooled.len() != filters {
            return Err(EvalError::Length {
                expected: filters,
                found: pooled.len(),
            });
        }
        Ok(self
            .patterns
            .iter()
            .map(|(b, p)| {
                let t = &self.thresholds[*b].values;
                let detected = p.filters.iter().all(|&f| pooled[f] > t[f]);
                match self.mode {
                    FeatureMode::Binary => f64::from(u8::from(detected)),
                    FeatureMode::Margin => p
                        .filters
                        .iter()
                        .map(|&f| {
                            let span = self.spans[*b][f];
                            let m = if span > 0.0 {
                                (pooled[f] - t[f]) / span
                            } else if pooled[f] > t[f] {
                                1.0
                            } else {
                                0.0
                            };
                            f64::from(m.clamp(0.0, 1.0))
                        })
                        .fold(1.0, f64::min),
                }
            })
            .collect())
    }
}

/// Multinomial logistic regression over pattern features, `classes` rows
/// of `dim` weights plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    pub classes: Vec<String>,
    pub dim: usize,
    /// Row-major `classes x (dim + 1)`, bias last in each row.
    pub weights: Vec<f64>,
    pub loss_history: Vec<f64>,
}

fn logits(w: &[f64], classes: usize, x: &[f64]) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..classes)
        .map(|c| {
            let row = &w[c * stride..(c + 1) * stride];
            row[..x.len()]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + row[x.len()]
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of the softmax model and its gradient with respect
/// to `w`.
pub fn softmax_loss_and_gradient(
    w: &[f64],
    classes: usize,
    xs: &[&[f64]],
    ys: &[usize],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.len()];
    if xs.is_empty() {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let p = softmax(&logits(w, classes, x));
        total -= p[y].max(1e-300).ln();
        let stride = x.len() + 1;
        for (c, pc) in p.iter().enumerate() {
            let d = pc - if c == y { 1.0 } else { 0.0 };
            let row = &mut grad[c * stride..(c + 1) * stride];
            for (g, xi) in row.iter_mut().zip(x.iter()) {
                *g += d * xi;
            }
            row[x.len()] += d;
        }
    }
    let n = xs.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

/// Trains on `features` with labels indexing `classes`, using the
/// miner's optimiser settings: uniform minibatches drawn with replacement,
/// a gradient step, then an L1 proximal step on the non-bias weights.
pub fn train_softmax(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: Vec<String>,
    config: &HeadConfig,
) -> Result<SoftmaxClassifier, EvalError> {
    config
        .validate()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let c = classes.len();
    if c < 2 {
        return Err(EvalError::SingleClass);
    }
    if features.len() != labels.len() {
        return Err(EvalError::Length {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(EvalError::Config("no training samples".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(EvalError::Label { label, classes: c });
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(EvalError::Length {
            expected: dim,
            found: bad.len(),
        });
    }
    let stride = dim + 1;
    let all_x: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w: Vec<f64> = (0..c * stride)
        .map(|_| rng.gen_range(-config.init_scale..=config.init_scale))
        .collect();
    let objective = |w: &[f64]| softmax_loss_and_gradient(w, c, &all_x, labels).0;
    let penalty = |w: &[f64]| {
        config.l1
            * w.iter()
                .enumerate()
                .filter(|(i, _)| i % stride != dim)
                .map(|(_, v)| v.abs())
                .sum::<f64>()
    };
    let mut history = vec![objective(&w)];
    let mut best = history[0] + penalty(&w);
    let mut best_at = 0;
    let shrink = config.learning_rate * config.l1;
    let mut bx: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut by: Vec<usize> = Vec::with_capacity(config.batch_size);
    for it in 1..=config.max_iterations {
        bx.clear();
        by.clear();
        for _ in 0..config.batch_size {
            let i = rng.gen_range(0..features.len());
            bx.push(&features[i]);
            by.push(labels[i]);
        }
        let (_, grad) = softmax_loss_and_gradient(&w, c, &bx, &by);
        for (i, (wi, g)) in w.iter_mut().zip(&grad).enumerate() {
            let v = *wi - config.learning_rate * g;
            *wi = if i % stride == dim {
                v
            } else {
                v.signum() * (v.abs() - shrink).max(0.0)
            };
        }
        let l = objective(&w);
        if !l.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::Diverged { iteration: it });
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
    Ok(SoftmaxClassifier {
        classes,
        dim,
        weights: w,
        loss_history: history,
    })
}

impl SoftmaxClassifier {
    /// Most probable class, ties going to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, EvalError> {
        if x.len() != self.dim {
            return Err(EvalError::Length {
                expected: self.dim,
                found: x.len(),
            });
        }
        let z = logits(&self.weights, self.classes.len(), x);
        let mut best = 0;
        for (i, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn classify(&self, features: &[Vec<f64>]) -> Result<Vec<usize>, EvalError> {
        features.iter().map(|x| self.predict(x)).collect()
    }
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::Length {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(
        classes: Vec<String>,
        predicted: &[usize],
        truth: &[usize],
    ) -> Result<Self, EvalError> {
        let c = classes.len();
        if predicted.len() != truth.len() {
            return Err(EvalError::Length {
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let mut counts = vec![vec![0; c]; c];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= c || t >= c {
                return Err(EvalError::Label {
                    label: p.max(t),
                    classes: c,
                });
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub fingerprint: String,
    pub feature_dim: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl ClassificationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "patternnet-classification 1");
        let _ = writeln!(out, "fingerprint {}", self.fingerprint);
        let _ = writeln!(out, "classes {}", self.confusion.classes.join(" "));
        let _ = writeln!(out, "feature-dim {}", self.feature_dim);
        let _ = writeln!(out, "train-accuracy {:.6}", self.train_accuracy);
        let _ = writeln!(out, "test-accuracy {:.6}", self.test_accuracy);
        let _ = writeln!(out, "# confusion: rows true class, columns predicted");
        for (name, row) in self.confusion.classes.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "confusion {} {}", name, cells.join(" "));
        }
        out
    }
}

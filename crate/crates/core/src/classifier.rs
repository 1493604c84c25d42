//! N-gram TF-IDF features and an L2-regularized logistic regression that
//! separates self-reported posts (S) from everything else (NR).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{read_records, LineError};
use crate::matcher::normalize;
use crate::metrics::Prf;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training data has a single class")]
    SingleClass,
    #[error("{samples} samples cannot be split into {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("prediction and gold post ids differ: {0}")]
    IdMismatch(String),
    #[error("model does not fit its vocabulary: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    S,
    #[serde(rename = "NR")]
    Nr,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::S => "S",
            Label::Nr => "NR",
        }
    }

    fn target(self) -> f64 {
        match self {
            Label::S => 1.0,
            Label::Nr => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" => Ok(Label::S),
            "NR" => Ok(Label::Nr),
            other => Err(format!("label must be S or NR, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPost {
    pub post_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl LabeledPost {
    pub fn new(post_id: &str, label: Label) -> Self {
        Self {
            post_id: post_id.to_string(),
            label,
            score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub use_tfidf: bool,
    pub use_length: bool,
    pub vocab_min_df: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            ngram_min: 1,
            ngram_max: 3,
            use_tfidf: true,
            use_length: true,
            vocab_min_df: 2,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(ClassifierError::Config(format!(
                "ngram range ({}, {}) must satisfy 1 <= min <= max",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.vocab_min_df < 1 {
            return Err(ClassifierError::Config("vocab_min_df must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse vector as `(index, value)` pairs with strictly increasing indices.
pub type SparseVec = Vec<(usize, f64)>;

/// Raw n-gram counts of a text in the configured range.
pub fn ngram_counts(text: &str, cfg: &FeatureConfig) -> BTreeMap<String, usize> {
    let tokens = normalize(text).tokens;
    let mut counts = BTreeMap::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        for w in tokens.windows(n) {
            *counts.entry(w.join(" ")).or_default() += 1;
        }
    }
    counts
}

/// Fitted vocabulary and idf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeatureConfig,
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Featurizer {
    pub fn fit<S: AsRef<str>>(texts: &[S], config: &FeatureConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for gram in ngram_counts(t.as_ref(), config).into_keys() {
                *df.entry(gram).or_default() += 1;
            }
        }
        let n = texts.len() as f64;
        let (vocabulary, idf): (Vec<String>, Vec<f64>) = df
            .into_iter()
            .filter(|(_, d)| *d >= config.vocab_min_df)
            .map(|(g, d)| (g, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .unzip();
        Ok(Self::from_parts(config.clone(), vocabulary, idf))
    }

    pub fn from_parts(config: FeatureConfig, vocabulary: Vec<String>, idf: Vec<f64>) -> Self {
        let index = vocabulary.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        Self {
            config,
            vocabulary,
            idf,
            index,
        }
    }

    fn rebuild_index(&mut self) {
        self.index = self.vocabulary.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
    }

    /// Feature count: vocabulary plus the optional length feature.
    pub fn dim(&self) -> usize {
        self.vocabulary.len() + usize::from(self.config.use_length)
    }

    pub fn idf_of(&self, gram: &str) -> Option<f64> {
        self.index.get(gram).map(|&i| self.idf[i])
    }

    /// Unseen n-grams are dropped. The length feature, when enabled, is
    /// `ln(1 + token count)` in the last slot.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut out: SparseVec = ngram_counts(text, &self.config)
            .into_iter()
            .filter_map(|(g, c)| {
                let &i = self.index.get(&g)?;
                let w = if self.config.use_tfidf { self.idf[i] } else { 1.0 };
                Some((i, c as f64 * w))
            })
            .collect();
        out.sort_unstable_by_key(|&(i, _)| i);
        if self.config.use_length {
            let n = normalize(text).len();
            if n > 0 {
                out.push((self.vocabulary.len(), (1.0 + n as f64).ln()));
            }
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(i, v)| w[i] * v).sum()
}

/// Mean log loss plus `l2/2·‖w‖²` (bias unpenalized), with its gradient
/// with respect to `w` and `b`.
pub fn loss_and_gradient(rows: &[SparseVec], y: &[f64], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = rows.len().max(1) as f64;
    let mut grad = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (x, &t) in rows.iter().zip(y) {
        let z = dot(w, x) + b;
        // log(1 + e^z) - t·z, computed stably.
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid(z) - t;
        for &(i, v) in x {
            grad[i] += r * v;
        }
        grad_b += r;
    }
    loss /= n;
    grad_b /= n;
    for (g, wi) in grad.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad, grad_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Optimizer {
    pub max_iter: usize,
    /// Stop once the largest gradient component falls below this.
    pub tolerance: f64,
}

impl Default for Optimizer {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tolerance: 1e-6,
        }
    }
}

/// Full-batch gradient descent with step `1/L`, where `L` bounds the
/// Lipschitz constant of the gradient.
pub fn fit_logistic(rows: &[SparseVec], y: &[f64], dim: usize, l2: f64, opt: Optimizer) -> (Vec<f64>, f64, usize) {
    let max_sq = rows
        .iter()
        .map(|x| 1.0 + x.iter().map(|(_, v)| v * v).sum::<f64>())
        .fold(1.0_f64, f64::max);
    let step = 1.0 / (0.25 * max_sq + l2);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for iter in 0..opt.max_iter {
        let (_, g, gb) = loss_and_gradient(rows, y, &w, b, l2);
        let gmax = g.iter().fold(gb.abs(), |m, v| m.max(v.abs()));
        if gmax < opt.tolerance {
            return (w, b, iter);
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        b -= step * gb;
    }
    (w, b, opt.max_iter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub featurizer: Featurizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

impl LinearModel {
    pub fn fit<S: AsRef<str>>(
        texts: &[S],
        labels: &[Label],
        features: &FeatureConfig,
        l2: f64,
        opt: Optimizer,
    ) -> Result<Self, ClassifierError> {
        if !(l2 > 0.0 && l2.is_finite()) {
            return Err(ClassifierError::Config(format!("l2 penalty must be positive, got {l2}")));
        }
        check_classes(labels)?;
        let featurizer = Featurizer::fit(texts, features)?;
        let rows: Vec<SparseVec> = texts.iter().map(|t| featurizer.transform(t.as_ref())).collect();
        let y: Vec<f64> = labels.iter().map(|l| l.target()).collect();
        let (weights, bias, _) = fit_logistic(&rows, &y, featurizer.dim(), l2, opt);
        Ok(Self {
            featurizer,
            weights,
            bias,
            l2,
        })
    }

    pub fn score(&self, text: &str) -> f64 {
        sigmoid(dot(&self.weights, &self.featurizer.transform(text)) + self.bias)
    }

    /// Label S iff the score is at least 0.5.
    pub fn predict(&self, text: &str) -> (Label, f64) {
        let s = self.score(text);
        (if s >= 0.5 { Label::S } else { Label::Nr }, s)
    }

    /// Weight of each named feature, for inspection.
    pub fn named_weights(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = self
            .featurizer
            .vocabulary
            .iter()
            .cloned()
            .zip(self.weights.iter().copied())
            .collect();
        if self.featurizer.config.use_length {
            out.insert("<length>".into(), self.weights[self.featurizer.vocabulary.len()]);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifierError> {
        let mut m: LinearModel = serde_json::from_str(s).map_err(|e| ClassifierError::Model(e.to_string()))?;
        m.featurizer.rebuild_index();
        if m.featurizer.idf.len() != m.featurizer.vocabulary.len() {
            return Err(ClassifierError::Model("idf and vocabulary lengths differ".into()));
        }
        if m.weights.len() != m.featurizer.dim() {
            return Err(ClassifierError::Model(format!(
                "{} weights for {} features",
                m.weights.len(),
                m.featurizer.dim()
            )));
        }
        if m.featurizer.idf.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(ClassifierError::Model("negative idf".into()));
        }
        Ok(m)
    }
}

fn check_classes(labels: &[Label]) -> Result<(), ClassifierError> {
    let s = labels.iter().filter(|l| **l == Label::S).count();
    if s == 0 || s == labels.len() {
        return Err(ClassifierError::SingleClass);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub l2_penalties: Vec<f64>,
    pub ngram_ranges: Vec<(usize, usize)>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Everything except the n-gram range, which the grid sets.
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub optimizer: Optimizer,
}

fn default_folds() -> usize {
    5
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        Self {
            l2_penalties: vec![1e-4, 1e-3, 1e-2, 1e-1],
            ngram_ranges: vec![(1, 1), (1, 2), (1, 3)],
            folds: 5,
            seed: 0,
            features: FeatureConfig::default(),
            optimizer: Optimizer::default(),
        }
    }
}

impl GridSearchSpec {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.folds < 2 {
            return Err(ClassifierError::Config("folds must be at least 2".into()));
        }
        if self.l2_penalties.is_empty() || self.ngram_ranges.is_empty() {
            return Err(ClassifierError::Config("grid lists must be nonempty".into()));
        }
        if let Some(l) = self.l2_penalties.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(ClassifierError::Config(format!("l2 penalty must be positive, got {l}")));
        }
        for &(lo, hi) in &self.ngram_ranges {
            FeatureConfig {
                ngram_min: lo,
                ngram_max: hi,
                ..self.features.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Grid points in evaluation order: n-gram range outer, penalty inner.
    pub fn points(&self) -> Vec<(usize, usize, f64)> {
        self.ngram_ranges
            .iter()
            .flat_map(|&(lo, hi)| self.l2_penalties.iter().map(move |&l| (lo, hi, l)))
            .collect()
    }
}

/// Fold index per sample. Each class is shuffled with the seed and dealt
/// round-robin, continuing where the previous class stopped.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for class in [Label::S, Label::Nr] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub l2: f64,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the selected combination.
    pub best: usize,
}

/// Grid search with stratified k-fold CV on S-class F1, then a refit of the
/// winning combination on all data. Ties go to the earliest grid point.
pub fn train<S: AsRef<str> + Sync>(
    texts: &[S],
    labels: &[Label],
    spec: &GridSearchSpec,
) -> Result<(LinearModel, CvReport), ClassifierError> {
    spec.validate()?;
    if texts.len() != labels.len() {
        return Err(ClassifierError::Config(format!(
            "{} texts but {} labels",
            texts.len(),
            labels.len()
        )));
    }
    check_classes(labels)?;
    if texts.len() < spec.folds {
        return Err(ClassifierError::TooFewSamples {
            samples: texts.len(),
            folds: spec.folds,
        });
    }
    let assignment = stratified_folds(labels, spec.folds, spec.seed);
    let rows: Vec<GridRow> = spec
        .points()
        .into_par_iter()
        .map(|(lo, hi, l2)| {
            let features = FeatureConfig {
                ngram_min: lo,
                ngram_max: hi,
                ..spec.features.clone()
            };
            let fold_f1: Vec<f64> = (0..spec.folds)
                .map(|k| cv_fold(texts, labels, &assignment, k, &features, l2, spec.optimizer))
                .collect();
            let mean = fold_f1.iter().sum::<f64>() / fold_f1.len() as f64;
            let var = fold_f1.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / fold_f1.len() as f64;
            GridRow {
                ngram_min: lo,
                ngram_max: hi,
                l2,
                fold_f1,
                mean_f1: mean,
                std_f1: var.sqrt(),
            }
        })
        .collect();
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_f1 > rows[best].mean_f1 {
            best = i;
        }
    }
    let winner = &rows[best];
    let features = FeatureConfig {
        ngram_min: winner.ngram_min,
        ngram_max: winner.ngram_max,
        ..spec.features.clone()
    };
    let model = LinearModel::fit(texts, labels, &features, winner.l2, spec.optimizer)?;
    Ok((
        model,
        CvReport {
            folds: spec.folds,
            seed: spec.seed,
            rows,
            best,
        },
    ))
}

fn cv_fold<S: AsRef<str>>(
    texts: &[S],
    labels: &[Label],
    assignment: &[usize],
    fold: usize,
    features: &FeatureConfig,
    l2: f64,
    opt: Optimizer,
) -> f64 {
    let (mut tr_x, mut tr_y, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..texts.len() {
        if assignment[i] == fold {
            te.push(i);
        } else {
            tr_x.push(texts[i].as_ref());
            tr_y.push(labels[i]);
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let predict: Box<dyn Fn(&str) -> Label> = match LinearModel::fit(&tr_x, &tr_y, features, l2, opt) {
        Ok(m) => Box::new(move |t| m.predict(t).0),
        // A training split with one class predicts that class.
        Err(_) => {
            let only = tr_y.first().copied().unwrap_or(Label::Nr);
            Box::new(move |_| only)
        }
    };
    for i in te {
        match (predict(texts[i].as_ref()), labels[i]) {
            (Label::S, Label::S) => tp += 1,
            (Label::S, Label::Nr) => fp += 1,
            (Label::Nr, Label::S) => fn_ += 1,
            _ => {}
        }
    }
    Prf::from_counts(tp, fp, fn_).f1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Accuracy and S-class precision / recall / F1. Both lists must cover the
/// same post ids.
pub fn evaluate(predictions: &[LabeledPost], gold: &[LabeledPost]) -> Result<Metrics, ClassifierError> {
    let pred: BTreeMap<&str, Label> = predictions.iter().map(|p| (p.post_id.as_str(), p.label)).collect();
    let truth: BTreeMap<&str, Label> = gold.iter().map(|p| (p.post_id.as_str(), p.label)).collect();
    if pred.len() != predictions.len() || truth.len() != gold.len() {
        return Err(ClassifierError::IdMismatch("duplicate post id".into()));
    }
    if let Some(id) = pred.keys().find(|k| !truth.contains_key(*k)) {
        return Err(ClassifierError::IdMismatch(format!("{id} has no gold label")));
    }
    if let Some(id) = truth.keys().find(|k| !pred.contains_key(*k)) {
        return Err(ClassifierError::IdMismatch(format!("{id} has no prediction")));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (id, t) in &truth {
        match (pred[id], t) {
            (Label::S, Label::S) => c.tp += 1,
            (Label::S, Label::Nr) => c.fp += 1,
            (Label::Nr, Label::S) => c.fn_ += 1,
            (Label::Nr, Label::Nr) => c.tn += 1,
        }
    }
    let prf = Prf::from_counts(c.tp, c.fp, c.fn_);
    let n = truth.len();
    Ok(Metrics {
        accuracy: if n == 0 { 0.0 } else { (c.tp + c.tn) as f64 / n as f64 },
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        confusion: c,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalLabels {
    /// In first-seen order; a repeated id keeps its position and takes the
    /// later label.
    pub labels: Vec<LabeledPost>,
    pub rejected: Vec<LineError>,
    /// Ids seen more than once.
    pub duplicates: Vec<String>,
    /// Ids absent from `known_ids`.
    pub unknown: Vec<String>,
}

#[derive(Deserialize)]
struct RawLabel {
    post_id: String,
    label: String,
    #[serde(default)]
    score: Option<f64>,
}

/// Reads `{post_id, label, score?}` lines produced by an external model.
pub fn import_external_labels<R: BufRead>(
    reader: R,
    known_ids: Option<&BTreeSet<String>>,
) -> Result<ExternalLabels, ClassifierError> {
    let (records, mut rejected) = read_records::<RawLabel, _>(reader)?;
    let mut out = ExternalLabels::default();
    let mut position: HashMap<String, usize> = HashMap::new();
    for (line, raw) in records {
        let label = match raw.label.parse::<Label>() {
            Ok(l) => l,
            Err(reason) => {
                rejected.push(LineError { line, reason });
                continue;
            }
        };
        if let Some(s) = raw.score {
            if !(0.0..=1.0).contains(&s) {
                rejected.push(LineError {
                    line,
                    reason: format!("score {s} outside [0, 1]"),
                });
                continue;
            }
        }
        let post = LabeledPost {
            post_id: raw.post_id,
            label,
            score: raw.score,
        };
        match position.get(&post.post_id) {
            Some(&i) => {
                log::warn!("post {} labeled more than once; keeping the last label", post.post_id);
                if !out.duplicates.contains(&post.post_id) {
                    out.duplicates.push(post.post_id.clone());
                }
                out.labels[i] = post;
            }
            None => {
                position.insert(post.post_id.clone(), out.labels.len());
                out.labels.push(post);
            }
        }
    }
    rejected.sort_by_key(|e| e.line);
    out.rejected = rejected;
    if let Some(known) = known_ids {
        out.unknown = out
            .labels
            .iter()
            .filter(|p| !known.contains(&p.post_id))
            .map(|p| p.post_id.clone())
            .collect();
    }
    Ok(out)
}

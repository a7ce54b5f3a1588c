//! Dataset metrics (quadratic kappa, macro recall, ROC-AUC), the Fréchet
//! embedding distance, and transfer-gain summaries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Registered metric identifiers.
pub const METRIC_IDS: [&str; 4] = ["qkappa", "recall_macro", "auc", "accuracy"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<usize>,
    pub hard_preds: Vec<usize>,
    /// Row-major `[n, class_count]` scores (probabilities or any monotone score).
    pub scores: Vec<f64>,
    pub class_count: usize,
}

impl PredictionSet {
    pub fn new(labels: Vec<usize>, hard_preds: Vec<usize>, scores: Vec<f64>, class_count: usize) -> Result<Self> {
        let s = Self { labels, hard_preds, scores, class_count };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if !self.hard_preds.is_empty() && self.hard_preds.len() != n {
            return Err(Error::Shape(format!("{} predictions for {n} labels", self.hard_preds.len())));
        }
        if !self.scores.is_empty() && self.scores.len() != n * self.class_count {
            return Err(Error::Shape(format!("{} scores for {n}x{} matrix", self.scores.len(), self.class_count)));
        }
        if let Some(bad) = self.labels.iter().chain(&self.hard_preds).find(|l| **l >= self.class_count) {
            return Err(Error::Data(format!("class id {bad} outside 0..{}", self.class_count)));
        }
        if self.scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite score".into()));
        }
        Ok(())
    }

    fn score(&self, i: usize, c: usize) -> f64 {
        self.scores[i * self.class_count + c]
    }
}

fn need_hard(p: &PredictionSet) -> Result<()> {
    p.validate()?;
    if p.hard_preds.is_empty() || p.labels.is_empty() {
        return Err(Error::UndefinedMetric("hard predictions required".into()));
    }
    Ok(())
}

/// Cohen's kappa with quadratic weights `(i-j)^2 / (C-1)^2`.
pub fn quadratic_kappa(p: &PredictionSet) -> Result<f64> {
    need_hard(p)?;
    let c = p.class_count;
    if c < 2 {
        return Err(Error::UndefinedMetric("kappa needs at least two classes".into()));
    }
    let mut observed = vec![0.0f64; c * c];
    let mut row = vec![0.0f64; c];
    let mut col = vec![0.0f64; c];
    for (&l, &q) in p.labels.iter().zip(&p.hard_preds) {
        observed[l * c + q] += 1.0;
        row[l] += 1.0;
        col[q] += 1.0;
    }
    let n = p.labels.len() as f64;
    let denom_w = ((c - 1) * (c - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64).powi(2)) / denom_w;
            num += w * observed[i * c + j];
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("kappa undefined: a single class observed".into()));
    }
    Ok(1.0 - num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallOutcome {
    pub value: f64,
    /// Classes with zero support, excluded from the mean.
    pub skipped_classes: Vec<usize>,
}

pub fn macro_recall_detailed(p: &PredictionSet) -> Result<RecallOutcome> {
    need_hard(p)?;
    let c = p.class_count;
    let mut hit = vec![0usize; c];
    let mut support = vec![0usize; c];
    for (&l, &q) in p.labels.iter().zip(&p.hard_preds) {
        support[l] += 1;
        if l == q {
            hit[l] += 1;
        }
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for k in 0..c {
        if support[k] == 0 {
            skipped.push(k);
        } else {
            total += hit[k] as f64 / support[k] as f64;
            used += 1;
        }
    }
    Ok(RecallOutcome { value: total / used as f64, skipped_classes: skipped })
}

/// Mean per-class recall; zero-support classes are skipped with a warning.
pub fn macro_recall(p: &PredictionSet) -> Result<f64> {
    let out = macro_recall_detailed(p)?;
    if !out.skipped_classes.is_empty() {
        log::warn!("macro recall skipped zero-support classes {:?}", out.skipped_classes);
    }
    Ok(out.value)
}

pub fn accuracy(p: &PredictionSet) -> Result<f64> {
    need_hard(p)?;
    let hits = p.labels.iter().zip(&p.hard_preds).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / p.labels.len() as f64)
}

/// Probability that a random positive outranks a random negative, ties counted half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative samples".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // Mid-ranks over tie groups (Mann-Whitney U).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Binary AUC on the positive-class column; for more classes, the mean of
/// one-vs-rest AUCs over classes with both outcomes present.
pub fn roc_auc(p: &PredictionSet) -> Result<f64> {
    p.validate()?;
    if p.scores.is_empty() {
        return Err(Error::UndefinedMetric("AUC needs scores".into()));
    }
    let n = p.labels.len();
    if p.class_count == 2 {
        let s: Vec<f64> = (0..n).map(|i| p.score(i, 1)).collect();
        let pos: Vec<bool> = p.labels.iter().map(|l| *l == 1).collect();
        return binary_auc(&s, &pos);
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..p.class_count {
        let pos: Vec<bool> = p.labels.iter().map(|l| *l == c).collect();
        if pos.iter().all(|v| *v) || !pos.iter().any(|v| *v) {
            continue;
        }
        let s: Vec<f64> = (0..n).map(|i| p.score(i, c)).collect();
        total += binary_auc(&s, &pos)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("AUC undefined: a single class observed".into()));
    }
    Ok(total / used as f64)
}

/// Macro AUC over labels of a multi-label problem; labels lacking either outcome are skipped.
pub fn multilabel_auc(scores: &[Vec<f64>], targets: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::Shape("scores and targets must be non-empty and equally long".into()));
    }
    let labels = targets[0].len();
    let mut total = 0.0;
    let mut used = 0;
    for l in 0..labels {
        let s: Vec<f64> = scores.iter().map(|r| r[l]).collect();
        let t: Vec<bool> = targets.iter().map(|r| r[l]).collect();
        if t.iter().all(|v| *v) || !t.iter().any(|v| *v) {
            continue;
        }
        total += binary_auc(&s, &t)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("no label has both outcomes".into()));
    }
    Ok(total / used as f64)
}

/// Dispatches a registered metric id.
pub fn compute(metric_id: &str, p: &PredictionSet) -> Result<f64> {
    match metric_id {
        "qkappa" => quadratic_kappa(p),
        "recall_macro" => macro_recall(p),
        "auc" => roc_auc(p),
        "accuracy" => accuracy(p),
        other => Err(Error::Config(format!("unknown metric `{other}`"))),
    }
}

pub fn check_metric_id(metric_id: &str) -> Result<()> {
    if METRIC_IDS.contains(&metric_id) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown metric `{metric_id}`")))
    }
}

// ---------------------------------------------------------------------------
// Fréchet distance

/// Eigenvalue floor used when taking matrix square roots.
pub const FID_EIG_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FidOutcome {
    pub value: f64,
    /// Set when either set has no more samples than dimensions.
    pub underdetermined: bool,
}

fn mean_cov(x: &[f64], n: usize, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let m = DMatrix::from_row_slice(n, d, x);
    let mu = DVector::from_iterator(d, (0..d).map(|j| m.column(j).sum() / n as f64));
    let mut centered = m;
    for j in 0..d {
        let mj = mu[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= mj);
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(FID_EIG_EPS).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, computing the trace of the
/// product root as `Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})` via symmetric eigendecompositions.
/// Inputs are row-major `n×d` and `m×d`.
pub fn fid(a: &[f64], n: usize, b: &[f64], m: usize, d: usize) -> Result<FidOutcome> {
    if d == 0 || a.len() != n * d || b.len() != m * d {
        return Err(Error::Shape(format!("embeddings do not match {n}x{d} and {m}x{d}")));
    }
    if n < 2 || m < 2 {
        return Err(Error::Data("FID needs at least two samples per set".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite embedding".into()));
    }
    let underdetermined = n <= d || m <= d;
    if underdetermined {
        log::warn!("FID with n={n}, m={m} not exceeding d={d}; covariance is rank-deficient");
    }
    let (mu_a, cov_a) = mean_cov(a, n, d);
    let (mu_b, cov_b) = mean_cov(b, m, d);
    let diff = (&mu_a - &mu_b).norm_squared();
    let sa = sym_sqrt(&cov_a);
    let inner = &sa * &cov_b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_root: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let value = diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_root;
    if !value.is_finite() {
        return Err(Error::Numerical("FID is not finite".into()));
    }
    Ok(FidOutcome { value: value.max(0.0), underdetermined })
}

// ---------------------------------------------------------------------------
// Gain summaries

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub wt: f64,
    pub st: f64,
    pub ri: f64,
    /// `wt / ri`.
    pub gain_ratio: f64,
    /// `(wt − st) / wt`.
    pub reuse_share: f64,
    /// Reuse share min-max normalized across a set of settings.
    pub reuse_share_normalized: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn gain_summary(wt: &[f64], st: &[f64], ri: &[f64]) -> Result<GainSummary> {
    if wt.is_empty() || st.is_empty() || ri.is_empty() {
        return Err(Error::Data("gain summary needs scores for WT, ST and RI".into()));
    }
    let (w, s, r) = (mean(wt), mean(st), mean(ri));
    if r <= 0.0 || w <= 0.0 {
        return Err(Error::UndefinedMetric(format!("ratios undefined for wt={w}, ri={r}")));
    }
    Ok(GainSummary { wt: w, st: s, ri: r, gain_ratio: w / r, reuse_share: (w - s) / w, reuse_share_normalized: 0.0 })
}

/// Min-max normalizes `reuse_share` across the given settings (all 0 if constant).
pub fn normalize_shares(summaries: &[GainSummary]) -> Vec<GainSummary> {
    let lo = summaries.iter().map(|s| s.reuse_share).fold(f64::INFINITY, f64::min);
    let hi = summaries.iter().map(|s| s.reuse_share).fold(f64::NEG_INFINITY, f64::max);
    summaries
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.reuse_share_normalized = if hi > lo { (s.reuse_share - lo) / (hi - lo) } else { 0.0 };
            s
        })
        .collect()
}

//! Cosine k-nearest-neighbor evaluation of tapped representations.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::metrics::{self, PredictionSet};
use crate::netlab::{capture_activations, ActivationBatch, Layout, ModulePartition, ProbeableNetwork};

use super::{LayerSeries, SeriesKind, SeriesPoint};

pub const DEFAULT_K: usize = 200;

/// Row-major embeddings with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Embeddings {
    pub fn new(dim: usize, values: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || values.len() != dim * labels.len() {
            return Err(Error::Shape(format!("{} values for {} rows of dim {dim}", values.len(), labels.len())));
        }
        Ok(Self { dim, values, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnOutcome {
    pub score: f64,
    pub predictions: Vec<usize>,
    /// Vote fractions per class, row-major `[test, classes]`.
    pub vote_shares: Vec<f64>,
}

fn norms(e: &Embeddings) -> Result<Vec<f64>> {
    (0..e.len())
        .map(|i| {
            let r = e.row(i);
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite embedding at row {i}")));
            }
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                Err(Error::Normalization(format!("zero-norm embedding at row {i}")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// `dot(a, b) / (‖a‖ ‖b‖)`.
pub fn cosine(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb) + 0.0
}

/// Majority vote among the `min(k, train)` most similar training points.
/// Neighbor ties go to the lower training index; vote ties to the larger summed
/// similarity, then the lower class index.
pub fn knn_predict(train: &Embeddings, test: &Embeddings, k: usize, class_count: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if train.dim != test.dim {
        return Err(Error::Shape(format!("train dim {} vs test dim {}", train.dim, test.dim)));
    }
    if train.is_empty() {
        return Err(Error::Data("empty training embeddings".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if let Some(l) = train.labels.iter().chain(&test.labels).find(|l| **l >= class_count) {
        return Err(Error::Data(format!("label {l} outside 0..{class_count}")));
    }
    let k = k.min(train.len());
    let tn = norms(train)?;
    let qn = norms(test)?;
    let mut preds = Vec::with_capacity(test.len());
    let mut shares = Vec::with_capacity(test.len() * class_count);
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for q in 0..test.len() {
        sims.clear();
        let qr = test.row(q);
        sims.extend((0..train.len()).map(|i| (cosine(qr, qn[q], train.row(i), tn[i]), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, cmp);
        }
        sims[..k].sort_by(cmp);
        let mut votes = vec![0usize; class_count];
        let mut mass = vec![0.0f64; class_count];
        for &(s, i) in &sims[..k] {
            votes[train.labels[i]] += 1;
            mass[train.labels[i]] += s;
        }
        let mut best = 0;
        for c in 1..class_count {
            let better = votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]);
            if better {
                best = c;
            }
        }
        preds.push(best);
        shares.extend(votes.iter().map(|v| *v as f64 / k as f64));
    }
    Ok((preds, shares))
}

/// k-NN predictions scored with the dataset metric.
pub fn knn_probe(train: &Embeddings, test: &Embeddings, k: usize, class_count: usize, metric_id: &str) -> Result<KnnOutcome> {
    metrics::check_metric_id(metric_id)?;
    let (predictions, vote_shares) = knn_predict(train, test, k, class_count)?;
    let set = PredictionSet::new(test.labels.clone(), predictions.clone(), vote_shares.clone(), class_count)?;
    Ok(KnnOutcome { score: metrics::compute(metric_id, &set)?, predictions, vote_shares })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// Global average pool over `h, w` (spatial-map taps).
    Gap,
    /// The cls token (token taps).
    Cls,
    /// Mean over the spatial tokens.
    Spatial,
    ClsPlusSpatial,
}

impl EmbedMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(Self::Gap),
            "cls" => Ok(Self::Cls),
            "spatial" => Ok(Self::Spatial),
            "cls_plus_spatial" => Ok(Self::ClsPlusSpatial),
            other => Err(Error::Config(format!("unknown embed mode `{other}`"))),
        }
    }
}

/// Reduces one tapped batch to per-sample embeddings.
pub fn embed(act: &ActivationBatch, mode: EmbedMode) -> Result<(usize, Vec<f64>)> {
    let mismatch = || Error::Config(format!("mode {mode:?} does not apply to the layout of tap `{}`", act.tap_id));
    let mut out = Vec::new();
    let dim = match (act.layout, mode) {
        (Layout::SpatialMap { c, h, w }, EmbedMode::Gap) => {
            let hw = h * w;
            for i in 0..act.batch() {
                let s = act.sample(i);
                out.extend((0..c).map(|ch| s[ch * hw..(ch + 1) * hw].iter().map(|v| *v as f64).sum::<f64>() / hw as f64));
            }
            c
        }
        (Layout::TokenSeq { tokens, dim, cls_index }, m) if m != EmbedMode::Gap => {
            let need_cls = matches!(m, EmbedMode::Cls | EmbedMode::ClsPlusSpatial);
            if need_cls && cls_index.is_none() {
                return Err(mismatch());
            }
            let spatial: Vec<usize> = (0..tokens).filter(|t| Some(*t) != cls_index).collect();
            for i in 0..act.batch() {
                let s = act.sample(i);
                if need_cls {
                    let c = cls_index.unwrap();
                    out.extend(s[c * dim..(c + 1) * dim].iter().map(|v| *v as f64));
                }
                if matches!(m, EmbedMode::Spatial | EmbedMode::ClsPlusSpatial) {
                    let mut mean = vec![0.0f64; dim];
                    for &t in &spatial {
                        mean.iter_mut().zip(&s[t * dim..(t + 1) * dim]).for_each(|(a, v)| *a += *v as f64);
                    }
                    out.extend(mean.into_iter().map(|v| v / spatial.len() as f64));
                }
            }
            match m {
                EmbedMode::ClsPlusSpatial => 2 * dim,
                _ => dim,
            }
        }
        _ => return Err(mismatch()),
    };
    Ok((dim, out))
}

/// Embeds a labeled set at several taps, capturing in chunks of `chunk` samples.
pub fn collect_embeddings(
    network: &ProbeableNetwork,
    set: &LabeledSet,
    taps: &[&str],
    mode: EmbedMode,
    chunk: usize,
) -> Result<Vec<Embeddings>> {
    let mut dims = vec![0usize; taps.len()];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); taps.len()];
    for (s, e) in set.chunks(chunk) {
        let acts = capture_activations(network, &set.batch(s, e), taps)?;
        for (t, tap) in taps.iter().enumerate() {
            let act = acts.iter().find(|a| a.tap_id == *tap).ok_or_else(|| Error::Lookup(format!("tap `{tap}`")))?;
            let (d, v) = embed(act, mode)?;
            dims[t] = d;
            values[t].extend(v);
        }
    }
    taps.iter()
        .enumerate()
        .map(|(t, _)| Embeddings::new(dims[t], std::mem::take(&mut values[t]), set.labels.clone()))
        .collect()
}

/// One k-NN score per partition tap, in forward order.
pub fn layerwise_knn(
    network: &ProbeableNetwork,
    train: &LabeledSet,
    test: &LabeledSet,
    partition: &ModulePartition,
    mode: EmbedMode,
    k: usize,
    metric_id: &str,
) -> Result<LayerSeries> {
    let taps = partition.tap_ids();
    let tr = collect_embeddings(network, train, &taps, mode, 128)?;
    let te = collect_embeddings(network, test, &taps, mode, 128)?;
    let mut points = Vec::with_capacity(taps.len());
    for (i, tap) in taps.iter().enumerate() {
        let score = knn_probe(&tr[i], &te[i], k, train.class_count, metric_id)?.score;
        points.push(SeriesPoint { id: tap.to_string(), value: score, stderr: 0.0 });
    }
    let mut series = LayerSeries::new(SeriesKind::KnnScore, points);
    series.notes.push(format!("k={k}; mode={mode:?}; vote=majority, tie-break summed similarity then class index"));
    Ok(series)
}

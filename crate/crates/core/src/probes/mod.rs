//! Representation and weight probes: CKA maps, layer-wise k-NN, re-init
//! robustness, ℓ2 drift and mean attended distance.

pub mod attdist;
pub mod cka;
pub mod knn;
pub mod resilience;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attdist::{mean_attended_distance, mean_attended_distance_layer};
pub use cka::{cka_map, hsic_unbiased, linear_cka, minibatch_cka, CkaMatrix, Features, MinibatchCka};
pub use knn::{knn_predict, knn_probe, layerwise_knn, EmbedMode, Embeddings, KnnOutcome};
pub use resilience::{l2_drift, reinit_robustness};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    KnnScore,
    Robustness,
    L2Drift,
    AttDistance,
}

impl SeriesKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::KnnScore => "knn_score",
            SeriesKind::Robustness => "robustness",
            SeriesKind::L2Drift => "l2_drift",
            SeriesKind::AttDistance => "att_distance",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Tap or group id.
    pub id: String,
    pub value: f64,
    pub stderr: f64,
}

/// Per-layer values in partition forward order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSeries {
    pub kind: SeriesKind,
    pub points: Vec<SeriesPoint>,
    /// Unmodified score for robustness series.
    pub baseline: Option<f64>,
    pub init: Option<String>,
    pub dataset: Option<String>,
    pub notes: Vec<String>,
}

impl LayerSeries {
    pub fn new(kind: SeriesKind, points: Vec<SeriesPoint>) -> Self {
        Self { kind, points, baseline: None, init: None, dataset: None, notes: Vec::new() }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.points.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn with_context(mut self, init: impl Into<String>, dataset: impl Into<String>) -> Self {
        self.init = Some(init.into());
        self.dataset = Some(dataset.into());
        self
    }
}

/// Point-wise mean over repeats with the standard error of the mean
/// (sample standard deviation / √repeats; 0 for a single repeat).
pub fn average_series(series: &[LayerSeries]) -> Result<LayerSeries> {
    let first = series.first().ok_or_else(|| Error::Data("no series to average".into()))?;
    for s in series {
        if s.kind != first.kind || s.ids() != first.ids() {
            return Err(Error::Shape("series disagree on kind or layer ids".into()));
        }
    }
    let r = series.len() as f64;
    let avg = |vals: Vec<f64>| {
        let m = vals.iter().sum::<f64>() / r;
        let se = if series.len() > 1 {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r - 1.0)).sqrt() / r.sqrt()
        } else {
            0.0
        };
        (m, se)
    };
    let points = (0..first.points.len())
        .map(|i| {
            let (value, stderr) = avg(series.iter().map(|s| s.points[i].value).collect());
            SeriesPoint { id: first.points[i].id.clone(), value, stderr }
        })
        .collect();
    let baseline = if series.iter().all(|s| s.baseline.is_some()) {
        Some(avg(series.iter().map(|s| s.baseline.unwrap()).collect()).0)
    } else {
        None
    };
    let mut notes = first.notes.clone();
    notes.push(format!("averaged over {} repeats", series.len()));
    Ok(LayerSeries { kind: first.kind, points, baseline, init: first.init.clone(), dataset: first.dataset.clone(), notes })
}

/// One row of the columnar probe results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub run_id: String,
    pub probe_kind: String,
    pub position_index: usize,
    pub tap_id: String,
    pub value: f64,
    pub stderr: f64,
}

pub fn series_rows(run_id: &str, s: &LayerSeries) -> Vec<ProbeRow> {
    let mut rows: Vec<ProbeRow> = s
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| ProbeRow {
            run_id: run_id.into(),
            probe_kind: s.kind.as_str().into(),
            position_index: i,
            tap_id: p.id.clone(),
            value: p.value,
            stderr: p.stderr,
        })
        .collect();
    if let Some(b) = s.baseline {
        rows.push(ProbeRow {
            run_id: run_id.into(),
            probe_kind: format!("{}_baseline", s.kind.as_str()),
            position_index: 0,
            tap_id: "baseline".into(),
            value: b,
            stderr: 0.0,
        });
    }
    rows
}

/// CKA cells as rows with `tap_id = "row|col"` and row-major position.
pub fn cka_rows(run_id: &str, m: &CkaMatrix) -> Vec<ProbeRow> {
    let mut rows = Vec::with_capacity(m.values.len());
    for (r, rid) in m.rows.iter().enumerate() {
        for (c, cid) in m.cols.iter().enumerate() {
            rows.push(ProbeRow {
                run_id: run_id.into(),
                probe_kind: "cka".into(),
                position_index: r * m.cols.len() + c,
                tap_id: format!("{rid}|{cid}"),
                value: m.get(r, c),
                stderr: 0.0,
            });
        }
    }
    rows
}

pub fn write_rows(path: &Path, rows: &[ProbeRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_rows(path: &Path) -> Result<Vec<ProbeRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

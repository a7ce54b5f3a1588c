//! Mean attended distance over the patch grid.

use crate::error::{Error, Result};
use crate::netlab::AttentionMap;

use super::{LayerSeries, SeriesKind, SeriesPoint};

pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Mean over batch, heads and spatial queries of `Σ_j A[q, j] · d(q, j)`,
/// `d` the Euclidean distance between grid positions in patch units.
/// The cls token is dropped from queries and keys; rows are not renormalized.
pub fn mean_attended_distance_layer(map: &AttentionMap, grid: (usize, usize)) -> Result<f64> {
    let t = map.tokens;
    let (gh, gw) = grid;
    let spatial: Vec<usize> = (0..t).filter(|i| Some(*i) != map.cls_index).collect();
    if spatial.len() != gh * gw || spatial.is_empty() {
        return Err(Error::Shape(format!("{} spatial tokens for a {gh}x{gw} grid", spatial.len())));
    }
    if map.values.len() != map.batch * map.heads * t * t {
        return Err(Error::Shape(format!("attention values do not match [{}, {}, {t}, {t}]", map.batch, map.heads)));
    }
    let pos: Vec<(f64, f64)> = (0..spatial.len()).map(|k| ((k / gw) as f64, (k % gw) as f64)).collect();
    let mut dist = vec![0.0f64; spatial.len() * spatial.len()];
    for (a, &(ya, xa)) in pos.iter().enumerate() {
        for (b, &(yb, xb)) in pos.iter().enumerate() {
            dist[a * spatial.len() + b] = ((ya - yb).powi(2) + (xa - xb).powi(2)).sqrt();
        }
    }
    let mut total = 0.0f64;
    for bh in 0..map.batch * map.heads {
        let m = &map.values[bh * t * t..(bh + 1) * t * t];
        for row in m.chunks(t) {
            let s: f64 = row.iter().map(|v| *v as f64).sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Normalization(format!("attention row sums to {s}")));
            }
        }
        for (qa, &q) in spatial.iter().enumerate() {
            let row = &m[q * t..(q + 1) * t];
            total += spatial.iter().enumerate().map(|(ka, &k)| row[k] as f64 * dist[qa * spatial.len() + ka]).sum::<f64>();
        }
    }
    Ok(total / (map.batch * map.heads * spatial.len()) as f64)
}

pub fn mean_attended_distance(maps: &[AttentionMap], grid: (usize, usize)) -> Result<LayerSeries> {
    let points = maps
        .iter()
        .map(|m| Ok(SeriesPoint { id: m.layer_id.clone(), value: mean_attended_distance_layer(m, grid)?, stderr: 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    let mut s = LayerSeries::new(SeriesKind::AttDistance, points);
    s.notes.push("queries averaged uniformly; cls token excluded without renormalization; units = patch widths".into());
    Ok(s)
}

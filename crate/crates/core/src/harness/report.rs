//! Tables, figure data and figures from a results directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::initkit::InitKind;
use crate::metrics::{gain_summary, mean, normalize_shares, std_pop, GainSummary};
use crate::probes::{read_rows, ProbeRow};
use crate::trainbench::{RunMeta, RUN_MANIFEST};

use super::matrix::{read_json, slug, Cell, CellFailure, CELLS_FILE, CELL_FILE, FAILURES_FILE, PROBES_CSV};
use super::plot::{dot_plot, heatmap, line_chart, Dot, Line};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Reuse shares min-max normalized across the whole matrix.
    #[default]
    Global,
    /// Normalized within each model panel.
    PerPanel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub normalization: Normalization,
    /// Write SVG figures next to the CSVs.
    pub figures: bool,
}

impl ReportSpec {
    pub fn with_figures() -> Self {
        Self { normalization: Normalization::Global, figures: true }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    /// Run ids of configured cells with no completed record.
    pub missing: Vec<String>,
    pub failed: Vec<CellFailure>,
}

pub const TABLE_CSV: &str = "table1.csv";
pub const GAINS_CSV: &str = "gains.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const PROBE_SUMMARY_CSV: &str = "probe_series.csv";
pub const CKA_CSV: &str = "cka.csv";
pub const GAPS_FILE: &str = "gaps.json";

/// A completed run as the report sees it.
#[derive(Clone, Debug)]
pub struct RunEntry {
    pub cell: Cell,
    pub score: f64,
    pub best_iter: usize,
    pub probes: Vec<ProbeRow>,
}

/// Reads every completed run under `results/runs`, ordered by run id. When
/// `cells.json` is present only runs of that matrix are returned.
pub fn load_runs(results: &Path) -> Result<Vec<RunEntry>> {
    let runs = results.join("runs");
    let mut out = Vec::new();
    let Ok(listing) = fs::read_dir(&runs) else { return Ok(out) };
    // Run directories left over from an earlier matrix in the same output dir are ignored.
    let current: Option<std::collections::HashSet<String>> = if results.join(CELLS_FILE).is_file() {
        let cells: Vec<Cell> = read_json(&results.join(CELLS_FILE))?;
        Some(cells.into_iter().map(|c| c.run_id).collect())
    } else {
        None
    };
    let mut dirs: Vec<PathBuf> = listing.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        if !dir.join(RUN_MANIFEST).is_file() || !dir.join(CELL_FILE).is_file() {
            continue;
        }
        let cell: Cell = read_json(&dir.join(CELL_FILE))?;
        if current.as_ref().is_some_and(|ids| !ids.contains(&cell.run_id)) {
            continue;
        }
        let meta: RunMeta = read_json(&dir.join(RUN_MANIFEST))?;
        let probes = if dir.join(PROBES_CSV).is_file() { read_rows(&dir.join(PROBES_CSV))? } else { Vec::new() };
        out.push(RunEntry { cell, score: meta.final_test_score, best_iter: meta.best_iteration, probes });
    }
    Ok(out)
}

fn init_order(c: &Cell) -> (u8, usize) {
    match c.scheme.kind {
        InitKind::Ri => (0, 0),
        InitKind::St => (1, 0),
        InitKind::WtSt => (2, c.depth),
        InitKind::Wt => (3, 0),
    }
}

/// `mean ± std` with three decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub fid_to_source: Option<f64>,
    pub model: String,
    pub init: String,
    pub n_seeds: usize,
    pub mean: f64,
    pub std_pop: f64,
    #[serde(rename = "mean ± std (population)")]
    pub cell: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub model: String,
    pub dataset: String,
    pub wt: f64,
    pub st: f64,
    pub ri: f64,
    pub gain_ratio: f64,
    pub reuse_share: f64,
    pub reuse_share_normalized: f64,
    pub normalization: Normalization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub dataset: String,
    pub depth: usize,
    pub groups: usize,
    pub wt_fraction: f64,
    pub n_seeds: usize,
    pub score_mean: f64,
    pub score_std_pop: f64,
    /// `(score − score at depth 0) / score at depth 0`.
    pub relative_gain: f64,
    pub convergence_iters_mean: f64,
    /// Depth-0 convergence over this depth's, on seed means.
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub probe_kind: String,
    pub model: String,
    pub dataset: String,
    pub init: String,
    pub position_index: usize,
    pub tap_id: String,
    pub mean: f64,
    /// Standard error of the mean over seeds.
    pub stderr: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaRow {
    pub model: String,
    pub dataset: String,
    pub init: String,
    pub row: String,
    pub col: String,
    pub value: f64,
    pub n_seeds: usize,
}

#[derive(Serialize)]
struct Gaps<'a> {
    missing: Vec<&'a Cell>,
    failed: &'a [CellFailure],
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn sem(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

type CellKey = (String, String, (u8, usize), String);

/// Groups runs by (dataset, model, init) in report order.
fn by_setting(runs: &[RunEntry]) -> BTreeMap<CellKey, Vec<&RunEntry>> {
    let mut m: BTreeMap<CellKey, Vec<&RunEntry>> = BTreeMap::new();
    for r in runs {
        let c = &r.cell;
        m.entry((c.dataset.clone(), c.model.clone(), init_order(c), c.init_label.clone())).or_default().push(r);
    }
    for v in m.values_mut() {
        v.sort_by_key(|r| r.cell.seed);
    }
    m
}

pub fn table_rows(runs: &[RunEntry], fids: &BTreeMap<String, f64>) -> Vec<TableRow> {
    by_setting(runs)
        .into_iter()
        .map(|((dataset, model, _, init), rs)| {
            let scores: Vec<f64> = rs.iter().map(|r| r.score).collect();
            let (m, s) = (mean(&scores), std_pop(&scores));
            TableRow { fid_to_source: fids.get(&dataset).copied(), dataset, model, init, n_seeds: scores.len(), mean: m, std_pop: s, cell: format_cell(m, s) }
        })
        .collect()
}

fn scores_of(runs: &[RunEntry], model: &str, dataset: &str, kind: InitKind) -> Vec<f64> {
    let mut rs: Vec<&RunEntry> =
        runs.iter().filter(|r| r.cell.model == model && r.cell.dataset == dataset && r.cell.scheme.kind == kind).collect();
    rs.sort_by_key(|r| r.cell.seed);
    rs.iter().map(|r| r.score).collect()
}

pub fn gain_rows(runs: &[RunEntry], normalization: Normalization) -> Result<Vec<GainRow>> {
    let mut settings: Vec<(String, String)> = runs.iter().map(|r| (r.cell.model.clone(), r.cell.dataset.clone())).collect();
    settings.sort();
    settings.dedup();
    let mut found: Vec<((String, String), GainSummary)> = Vec::new();
    for (model, dataset) in settings {
        let wt = scores_of(runs, &model, &dataset, InitKind::Wt);
        let st = scores_of(runs, &model, &dataset, InitKind::St);
        let ri = scores_of(runs, &model, &dataset, InitKind::Ri);
        if wt.is_empty() || st.is_empty() || ri.is_empty() {
            continue;
        }
        found.push(((model, dataset), gain_summary(&wt, &st, &ri)?));
    }
    let normalized: Vec<GainSummary> = match normalization {
        Normalization::Global => normalize_shares(&found.iter().map(|f| f.1.clone()).collect::<Vec<_>>()),
        Normalization::PerPanel => {
            let mut out = vec![None; found.len()];
            let mut models: Vec<&String> = found.iter().map(|f| &f.0 .0).collect();
            models.sort();
            models.dedup();
            for m in models {
                let idx: Vec<usize> = (0..found.len()).filter(|i| &found[*i].0 .0 == m).collect();
                let sums: Vec<GainSummary> = idx.iter().map(|i| found[*i].1.clone()).collect();
                for (i, s) in idx.into_iter().zip(normalize_shares(&sums)) {
                    out[i] = Some(s);
                }
            }
            out.into_iter().map(|s| s.expect("every setting normalized")).collect()
        }
    };
    Ok(found
        .into_iter()
        .zip(normalized)
        .map(|(((model, dataset), _), s)| GainRow {
            model,
            dataset,
            wt: s.wt,
            st: s.st,
            ri: s.ri,
            gain_ratio: s.gain_ratio,
            reuse_share: s.reuse_share,
            reuse_share_normalized: s.reuse_share_normalized,
            normalization,
        })
        .collect())
}

/// Depth sweep summaries for every (model, dataset) with at least one WT-ST cell.
pub fn sweep_rows(runs: &[RunEntry]) -> Vec<SweepRow> {
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<&RunEntry>>> = BTreeMap::new();
    let mut swept: Vec<(String, String)> = Vec::new();
    for r in runs {
        let c = &r.cell;
        if c.scheme.kind == InitKind::Ri {
            continue;
        }
        if c.scheme.kind == InitKind::WtSt {
            swept.push((c.model.clone(), c.dataset.clone()));
        }
        groups.entry((c.model.clone(), c.dataset.clone())).or_default().entry(c.depth).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((model, dataset), depths) in groups {
        if !swept.contains(&(model.clone(), dataset.clone())) || depths.len() < 2 {
            continue;
        }
        let stats: Vec<(usize, usize, Vec<f64>, f64)> = depths
            .into_iter()
            .map(|(d, mut rs)| {
                rs.sort_by_key(|r| r.cell.seed);
                let g = rs[0].cell.groups;
                let conv: Vec<f64> = rs.iter().map(|r| r.best_iter as f64).collect();
                (d, g, rs.iter().map(|r| r.score).collect(), mean(&conv))
            })
            .collect();
        let base = stats.iter().find(|s| s.0 == 0);
        for (d, g, scores, conv) in &stats {
            let m = mean(scores);
            rows.push(SweepRow {
                model: model.clone(),
                dataset: dataset.clone(),
                depth: *d,
                groups: *g,
                wt_fraction: *d as f64 / *g as f64,
                n_seeds: scores.len(),
                score_mean: m,
                score_std_pop: std_pop(scores),
                relative_gain: base.map(|b| (m - mean(&b.2)) / mean(&b.2)).unwrap_or(f64::NAN),
                convergence_iters_mean: *conv,
                speedup: base.and_then(|b| if *conv > 0.0 { Some(b.3 / conv) } else { None }),
            });
        }
    }
    rows
}

/// Per-position means over seeds for every series-valued probe.
pub fn series_rows(runs: &[RunEntry]) -> Vec<SeriesRow> {
    type Key = (String, String, String, (u8, usize), String, usize);
    let mut acc: BTreeMap<Key, (String, Vec<(u64, f64)>)> = BTreeMap::new();
    for r in runs {
        for p in r.probes.iter().filter(|p| p.probe_kind != "cka") {
            let key = (
                p.probe_kind.clone(),
                r.cell.model.clone(),
                r.cell.dataset.clone(),
                init_order(&r.cell),
                r.cell.init_label.clone(),
                p.position_index,
            );
            acc.entry(key).or_insert_with(|| (p.tap_id.clone(), Vec::new())).1.push((r.cell.seed, p.value));
        }
    }
    acc.into_iter()
        .map(|((probe_kind, model, dataset, _, init, position_index), (tap_id, mut vals))| {
            vals.sort_by_key(|v| v.0);
            let xs: Vec<f64> = vals.iter().map(|v| v.1).collect();
            SeriesRow { probe_kind, model, dataset, init, position_index, tap_id, mean: mean(&xs), stderr: sem(&xs), n_seeds: xs.len() }
        })
        .collect()
}

pub fn cka_summary(runs: &[RunEntry]) -> Vec<CkaRow> {
    type Key = (String, String, (u8, usize), String, usize);
    let mut acc: BTreeMap<Key, (String, Vec<(u64, f64)>)> = BTreeMap::new();
    for r in runs {
        for p in r.probes.iter().filter(|p| p.probe_kind == "cka") {
            let key = (r.cell.model.clone(), r.cell.dataset.clone(), init_order(&r.cell), r.cell.init_label.clone(), p.position_index);
            acc.entry(key).or_insert_with(|| (p.tap_id.clone(), Vec::new())).1.push((r.cell.seed, p.value));
        }
    }
    acc.into_iter()
        .map(|((model, dataset, _, init, _), (tap, mut vals))| {
            vals.sort_by_key(|v| v.0);
            let xs: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (row, col) = tap.split_once('|').unwrap_or((tap.as_str(), ""));
            CkaRow { model, dataset, init, row: row.into(), col: col.into(), value: mean(&xs), n_seeds: xs.len() }
        })
        .collect()
}

fn dataset_fids(results: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let Ok(listing) = fs::read_dir(results.join("datasets")) else { return Ok(out) };
    for e in listing.filter_map(|e| e.ok()) {
        if e.path().extension().and_then(|x| x.to_str()) == Some("json") {
            let m = DatasetManifest::read(&e.path())?;
            if let Some(f) = m.fid_to_source {
                out.insert(m.id, f);
            }
        }
    }
    Ok(out)
}

/// Writes the table, gain, sweep, probe and CKA CSVs (plus SVG figures when
/// requested) and `gaps.json` listing configured cells without results.
/// An empty results directory is an error and leaves `out` untouched.
pub fn report(results: &Path, out: &Path, spec: &ReportSpec) -> Result<ReportOutcome> {
    let runs = load_runs(results)?;
    if runs.is_empty() {
        return Err(Error::Report(format!("no completed runs under {}", results.display())));
    }
    let expected: Vec<Cell> = if results.join(CELLS_FILE).is_file() { read_json(&results.join(CELLS_FILE))? } else { Vec::new() };
    let failed: Vec<CellFailure> =
        if results.join(FAILURES_FILE).is_file() { read_json(&results.join(FAILURES_FILE))? } else { Vec::new() };
    let fids = dataset_fids(results)?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut files = Vec::new();

    let table = table_rows(&runs, &fids);
    write_csv(&out.join(TABLE_CSV), &table, &mut files)?;

    let gains = gain_rows(&runs, spec.normalization)?;
    write_csv(&out.join(GAINS_CSV), &gains, &mut files)?;

    let sweep = sweep_rows(&runs);
    write_csv(&out.join(SWEEP_CSV), &sweep, &mut files)?;

    let series = series_rows(&runs);
    write_csv(&out.join(PROBE_SUMMARY_CSV), &series, &mut files)?;

    let cka = cka_summary(&runs);
    write_csv(&out.join(CKA_CSV), &cka, &mut files)?;

    let done: std::collections::HashSet<&str> = runs.iter().map(|r| r.cell.run_id.as_str()).collect();
    let failed_ids: std::collections::HashSet<&str> = failed.iter().map(|f| f.run_id.as_str()).collect();
    let missing: Vec<&Cell> =
        expected.iter().filter(|c| !done.contains(c.run_id.as_str()) && !failed_ids.contains(c.run_id.as_str())).collect();
    let gaps_path = out.join(GAPS_FILE);
    fs::write(&gaps_path, serde_json::to_string_pretty(&Gaps { missing: missing.clone(), failed: &failed })?)
        .map_err(Error::io(&gaps_path))?;
    files.push(gaps_path);

    if spec.figures {
        figures(out, &gains, &sweep, &series, &cka, &mut files)?;
    }
    Ok(ReportOutcome { files, missing: missing.iter().map(|c| c.run_id.clone()).collect(), failed })
}

fn figures(out: &Path, gains: &[GainRow], sweep: &[SweepRow], series: &[SeriesRow], cka: &[CkaRow], files: &mut Vec<PathBuf>) -> Result<()> {
    if !gains.is_empty() {
        let mut xs: Vec<String> = gains.iter().map(|g| g.dataset.clone()).collect();
        let mut ys: Vec<String> = gains.iter().map(|g| g.model.clone()).collect();
        xs.sort();
        xs.dedup();
        ys.sort();
        ys.dedup();
        let dots: Vec<Dot> = gains
            .iter()
            .map(|g| Dot {
                x: xs.iter().position(|d| *d == g.dataset).unwrap(),
                y: ys.iter().position(|m| *m == g.model).unwrap(),
                size: g.gain_ratio,
                color: g.reuse_share_normalized,
            })
            .collect();
        let p = out.join("gains.svg");
        dot_plot(&p, "WT / RI gain (size) and normalized reuse share (color)", &xs, &ys, &dots)?;
        files.push(p);
    }

    if !sweep.is_empty() {
        let mut settings: Vec<(String, String)> = sweep.iter().map(|s| (s.model.clone(), s.dataset.clone())).collect();
        settings.dedup();
        let lines = |f: &dyn Fn(&SweepRow) -> Option<f64>| -> Vec<Line> {
            settings
                .iter()
                .map(|(m, d)| Line {
                    name: format!("{m} {d}"),
                    points: sweep
                        .iter()
                        .filter(|s| &s.model == m && &s.dataset == d)
                        .filter_map(|s| f(s).map(|v| (s.wt_fraction, v)))
                        .collect(),
                    err: Vec::new(),
                })
                .collect()
        };
        let p = out.join("sweep.svg");
        line_chart(&p, "WT-ST depth sweep", "WT fraction", "relative gain over ST", &[], &lines(&|s| Some(s.relative_gain)))?;
        files.push(p);
        let p = out.join("convergence.svg");
        line_chart(&p, "Convergence speedup over ST", "WT fraction", "speedup", &[], &lines(&|s| s.speedup))?;
        files.push(p);
    }

    let mut panels: Vec<(String, String, String)> = series
        .iter()
        .filter(|s| !s.probe_kind.ends_with("_baseline"))
        .map(|s| (s.probe_kind.clone(), s.model.clone(), s.dataset.clone()))
        .collect();
    panels.sort();
    panels.dedup();
    for (kind, model, dataset) in panels {
        let rows: Vec<&SeriesRow> = series.iter().filter(|s| s.probe_kind == kind && s.model == model && s.dataset == dataset).collect();
        let mut ticks: Vec<(usize, String)> = rows.iter().map(|r| (r.position_index, r.tap_id.clone())).collect();
        ticks.sort();
        ticks.dedup();
        let mut inits: Vec<&str> = Vec::new();
        for r in &rows {
            if !inits.contains(&r.init.as_str()) {
                inits.push(&r.init);
            }
        }
        let lines: Vec<Line> = inits
            .iter()
            .map(|i| {
                let pts: Vec<&&SeriesRow> = rows.iter().filter(|r| r.init == *i).collect();
                Line {
                    name: i.to_string(),
                    points: pts.iter().map(|r| (r.position_index as f64, r.mean)).collect(),
                    err: pts.iter().map(|r| r.stderr).collect(),
                }
            })
            .collect();
        let p = out.join(format!("probe-{}-{}-{}.svg", slug(&kind), slug(&model), slug(&dataset)));
        line_chart(&p, &format!("{kind}: {model} on {dataset}"), "layer group", &kind, &ticks.into_iter().map(|t| t.1).collect::<Vec<_>>(), &lines)?;
        files.push(p);
    }

    let mut maps: Vec<(String, String, String)> = cka.iter().map(|c| (c.model.clone(), c.dataset.clone(), c.init.clone())).collect();
    maps.dedup();
    for (model, dataset, init) in maps {
        let cells: Vec<&CkaRow> = cka.iter().filter(|c| c.model == model && c.dataset == dataset && c.init == init).collect();
        let mut rows: Vec<String> = Vec::new();
        let mut cols: Vec<String> = Vec::new();
        for c in &cells {
            if !rows.contains(&c.row) {
                rows.push(c.row.clone());
            }
            if !cols.contains(&c.col) {
                cols.push(c.col.clone());
            }
        }
        let mut values = vec![0.0; rows.len() * cols.len()];
        for c in &cells {
            let r = rows.iter().position(|x| *x == c.row).unwrap();
            let k = cols.iter().position(|x| *x == c.col).unwrap();
            values[r * cols.len() + k] = c.value;
        }
        let p = out.join(format!("cka-{}-{}-{}.svg", slug(&model), slug(&dataset), slug(&init)));
        heatmap(&p, &format!("CKA initial vs fine-tuned: {model} {init} on {dataset}"), &rows, &cols, &values, "fine-tuned", "initial")?;
        files.push(p);
    }
    Ok(())
}

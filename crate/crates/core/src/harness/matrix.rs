//! Cell expansion, source pretraining, domain distances and the run matrix.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ingest_directory, ingest_synthetic, Dataset, DatasetManifest, DatasetSource, LabeledSet};
use crate::error::{Error, Result};
use crate::initkit::{apply_scheme, init_weight_transfer, InitKind, InitScheme};
use crate::metrics::{fid, FidOutcome};
use crate::netlab::{
    build_model, load_checkpoint, partition_of, restore_all, save_checkpoint, snapshot_weights, Capacity, Family,
    ProbeableNetwork, SnapshotTag, WeightSnapshot,
};
use crate::probes::{
    cka_map, cka_rows, knn::{collect_embeddings, DEFAULT_K}, l2_drift, layerwise_knn, mean_attended_distance,
    reinit_robustness, series_rows, write_rows, CkaMatrix, EmbedMode, Embeddings, LayerSeries, ProbeRow,
};
use crate::trainbench::{evaluate, fine_tune, pretrain_source, RunContext, RunRecord, RUN_MANIFEST};

use super::config::{merge_train, DatasetEntry, ExperimentConfig, ModelEntry, ProbeKind, ProbeSpec};

pub const CELLS_FILE: &str = "cells.json";
pub const RUNS_CSV: &str = "runs.csv";
pub const FAILURES_FILE: &str = "failures.json";
pub const DISTANCES_CSV: &str = "distances.csv";
pub const CELL_FILE: &str = "cell.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const PROBES_CSV: &str = "probes.csv";

pub fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// File-name friendly form of a model label or id.
pub fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '-' }).collect()
}

/// Content hash over tensor names, shapes and value bits.
pub fn snapshot_fingerprint(s: &WeightSnapshot) -> String {
    let mut h = Sha256::new();
    h.update(s.arch_id().as_bytes());
    for (name, t) in s.tensors() {
        h.update(name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &t.values {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// One (model, init, dataset, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub run_id: String,
    pub key: String,
    pub model: String,
    pub family: Family,
    pub capacity: Capacity,
    pub truncate: Option<usize>,
    pub init_label: String,
    pub scheme: InitScheme,
    /// Transfer depth in `0..=groups` (0 for RI and ST).
    pub depth: usize,
    pub groups: usize,
    pub dataset: String,
    pub seed: u64,
}

impl Cell {
    pub fn capacity_label(&self) -> String {
        match self.truncate {
            Some(t) => format!("{}-trunc{t}", self.capacity),
            None => self.capacity.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub run_id: String,
    pub model: String,
    pub init_label: String,
    pub dataset: String,
    pub seed: u64,
    pub cause: String,
}

/// One row of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub family: String,
    pub capacity: String,
    pub init_kind: String,
    pub n: usize,
    pub dataset: String,
    pub seed: u64,
    pub metric: String,
    pub score: f64,
    pub best_iter: usize,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MatrixOutcome {
    pub output_dir: PathBuf,
    pub cells: Vec<Cell>,
    /// Cells trained in this invocation.
    pub executed: Vec<String>,
    /// Cells found complete on disk.
    pub skipped: Vec<String>,
    pub failures: Vec<CellFailure>,
}

impl MatrixOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `f` over `items` on `workers` threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots poisoned").into_iter().map(|r| r.expect("every item processed")).collect()
}

// ---------------------------------------------------------------------------
// Datasets

pub fn materialize(entry: &DatasetEntry) -> Result<Dataset> {
    match (&entry.generator, &entry.path) {
        (Some(g), _) => ingest_synthetic(&entry.id, g, entry.split_seed, &entry.metric_id),
        (None, Some(p)) => ingest_directory(&entry.id, p, entry.image_size(), entry.split_seed, &entry.metric_id),
        (None, None) => Err(Error::Config(format!("dataset `{}` has no source", entry.id))),
    }
}

/// Rebuilds a dataset from its manifest and checks that the splits still match.
pub fn open_dataset(m: &DatasetManifest) -> Result<Dataset> {
    let mut ds = match &m.source {
        DatasetSource::Synthetic { spec } => ingest_synthetic(&m.id, spec, m.split_seed, &m.metric_id)?,
        DatasetSource::Directory { path } => ingest_directory(&m.id, path, m.image_size, m.split_seed, &m.metric_id)?,
    };
    if ds.manifest.content_hash() != m.content_hash() {
        return Err(Error::Data(format!("dataset `{}` no longer matches its manifest", m.id)));
    }
    ds.manifest.fid_to_source = m.fid_to_source;
    Ok(ds)
}

/// Accepts a dataset manifest file, an image directory, or a synthetic corpus
/// name (`shapes10`, `target5`, optionally `name:samples[:shift]`).
pub fn resolve_dataset_arg(arg: &str, image_size: usize) -> Result<Dataset> {
    let path = Path::new(arg);
    if path.is_file() {
        return open_dataset(&DatasetManifest::read(path)?);
    }
    if path.is_dir() {
        let m = path.join("manifest.json");
        if m.is_file() {
            return open_dataset(&DatasetManifest::read(&m)?);
        }
        let id = path.file_name().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
        return ingest_directory(&id, path, image_size, 0, "accuracy");
    }
    let mut parts = arg.split(':');
    let corpus = parts.next().unwrap_or_default();
    let num = |s: Option<&str>, what: &str| -> Result<Option<f64>> {
        s.map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("bad {what} `{v}` in `{arg}`")))).transpose()
    };
    let samples = num(parts.next(), "sample count")?.map(|v| v as usize);
    let shift = num(parts.next(), "shift")?.unwrap_or(0.0);
    let spec = match corpus {
        crate::data::SOURCE_CORPUS => crate::data::GeneratorSpec::source(samples.unwrap_or(20_000), image_size, 0),
        crate::data::TARGET_CORPUS => crate::data::GeneratorSpec::target(samples.unwrap_or(1000), image_size, shift, 1),
        _ => return Err(Error::Config(format!("`{arg}` is neither a dataset path nor a synthetic corpus"))),
    };
    ingest_synthetic(arg, &spec, 0, "accuracy")
}

// ---------------------------------------------------------------------------
// Sources and distances

/// A network carrying every non-head tensor of `snapshot`, for embedding.
pub fn network_from_snapshot(snapshot: &WeightSnapshot) -> Result<ProbeableNetwork> {
    let mut net = build_model(snapshot.arch())?;
    init_weight_transfer(&mut net, snapshot, snapshot.arch().seed)?;
    Ok(net)
}

/// Embeddings at the last partition tap: pooled feature map for CNNs, cls token for ViTs.
pub fn distance_embeddings(embedder: &ProbeableNetwork, sets: &[&LabeledSet]) -> Result<Embeddings> {
    let partition = partition_of(embedder)?;
    let tap = *partition.tap_ids().last().ok_or_else(|| Error::Lookup("embedder has no taps".into()))?;
    let mode = match embedder.family() {
        Family::MiniCnn => EmbedMode::Gap,
        Family::MiniVit => EmbedMode::Cls,
    };
    let mut dim = 0;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for set in sets {
        let e = collect_embeddings(embedder, set, &[tap], mode, 128)?.remove(0);
        dim = e.dim;
        values.extend(e.values);
        labels.extend(e.labels);
    }
    Embeddings::new(dim, values, labels)
}

/// FID between two datasets over all their samples.
pub fn domain_distance(embedder: &ProbeableNetwork, a: &Dataset, b: &Dataset) -> Result<FidOutcome> {
    let ea = distance_embeddings(embedder, &[&a.train, &a.val, &a.test])?;
    let eb = distance_embeddings(embedder, &[&b.train, &b.val, &b.test])?;
    if ea.dim != eb.dim {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    fid(&ea.values, ea.len(), &eb.values, eb.len(), ea.dim)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DistanceRow {
    dataset: String,
    reference: String,
    embedder: String,
    fid: f64,
    underdetermined: bool,
}

fn pretrain_dir(out: &Path, model: &ModelEntry, key: &str) -> PathBuf {
    out.join("pretrained").join(format!("{}-{}", slug(&model.source_label()), &key[..12]))
}

/// Loads or trains the source checkpoint of every model that needs one.
fn prepare_sources(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
    workers: usize,
) -> Result<HashMap<String, WeightSnapshot>> {
    let mut wanted: Vec<&ModelEntry> = Vec::new();
    for m in &cfg.models {
        let needs = cfg.init_schemes.iter().any(|s| s.kind != InitKind::Ri && (s.models.is_empty() || s.models.contains(&m.label())));
        if needs && !wanted.iter().any(|w| w.source_label() == m.source_label()) {
            wanted.push(m);
        }
    }
    let results = parallel_map(&wanted, workers, |m| -> Result<(String, WeightSnapshot)> {
        if let Some(p) = &m.source_checkpoint {
            return Ok((m.source_label(), load_checkpoint(p)?));
        }
        let stage = cfg.pretrain.as_ref().ok_or_else(|| Error::Config("no pretrain stage".into()))?;
        let src = &datasets[&stage.dataset];
        let mut source_model = (*m).clone();
        source_model.truncate = None;
        let arch = source_model.arch(src.manifest.image_size, src.manifest.class_count, stage.seed);
        let mut train = merge_train(&stage.train, m.pretrain.as_ref())?;
        train.seed = stage.seed;
        let key = sha_hex(serde_json::to_string(&(&arch, src.manifest.content_hash(), &train))?.as_bytes());
        let dir = pretrain_dir(&cfg.output_dir, m, &key);
        let ckpt = dir.join("source.json");
        if ckpt.is_file() {
            log::info!("reusing source checkpoint {}", ckpt.display());
            return Ok((m.source_label(), load_checkpoint(&ckpt)?));
        }
        log::info!("pretraining {} on {}", arch.arch_id(), stage.dataset);
        let (snap, record) = pretrain_source(&arch, src, &train)?;
        record.save(&dir.join("record"))?;
        save_checkpoint(&snap, &dir, "source")?;
        Ok((m.source_label(), snap))
    });
    results.into_iter().collect()
}

fn compute_distances(
    cfg: &ExperimentConfig,
    datasets: &mut BTreeMap<String, Dataset>,
    sources: &HashMap<String, WeightSnapshot>,
) -> Result<()> {
    let Some(stage) = &cfg.pretrain else { return Ok(()) };
    let embedder_label = match &cfg.distance_embedder {
        Some(l) => cfg.models.iter().find(|m| &m.label() == l).map(ModelEntry::source_label),
        None => cfg.models.iter().find(|m| m.family == Family::MiniCnn).map(ModelEntry::source_label),
    };
    let Some(snap) = embedder_label.as_ref().and_then(|l| sources.get(l)) else { return Ok(()) };
    let embedder = network_from_snapshot(snap)?;
    let src = datasets[&stage.dataset].clone();
    let mut rows = Vec::new();
    for (id, ds) in datasets.iter_mut() {
        if *id == stage.dataset || ds.manifest.image_size != src.manifest.image_size {
            continue;
        }
        let d = domain_distance(&embedder, &src, ds)?;
        ds.manifest.fid_to_source = Some(d.value);
        rows.push(DistanceRow {
            dataset: id.clone(),
            reference: stage.dataset.clone(),
            embedder: snap.arch_id().to_string(),
            fid: d.value,
            underdetermined: d.underdetermined,
        });
    }
    let path = cfg.output_dir.join(DISTANCES_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(&path))
}

// ---------------------------------------------------------------------------
// Cells

/// Expands the config into its deduplicated cell list, in config order.
pub fn expand_cells(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
    sources: &HashMap<String, WeightSnapshot>,
) -> Result<Vec<Cell>> {
    let fingerprints: HashMap<&String, String> = sources.iter().map(|(k, v)| (k, snapshot_fingerprint(v))).collect();
    let mut cells = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for model in &cfg.models {
        let label = model.label();
        let groups = model.groups()?;
        let train = model.resolve_train(&cfg.train)?;
        for entry in cfg.targets() {
            let ds = &datasets[&entry.id];
            for tpl in cfg.init_schemes.iter().filter(|t| t.applies(&label, &entry.id)) {
                for n in tpl.depths_for(groups)? {
                    for &seed in &cfg.seeds {
                        let scheme = InitScheme { kind: tpl.kind, n, source_checkpoint: None, seed }.canonical(groups);
                        let source = if scheme.needs_source() {
                            Some(fingerprints.get(&model.source_label()).ok_or_else(|| {
                                Error::Config(format!("no source checkpoint for {}", model.source_label()))
                            })?)
                        } else {
                            None
                        };
                        let arch = model.arch(ds.manifest.image_size, ds.manifest.class_count, seed);
                        let mut t = train.clone();
                        t.seed = seed;
                        t.deterministic = true;
                        let key = sha_hex(
                            serde_json::to_string(&(&arch, &scheme, ds.manifest.content_hash(), &t, seed, source))?.as_bytes(),
                        );
                        if !seen.insert(key.clone()) {
                            continue;
                        }
                        cells.push(Cell {
                            run_id: key[..16].to_string(),
                            key,
                            model: label.clone(),
                            family: model.family,
                            capacity: model.capacity,
                            truncate: model.truncate,
                            init_label: scheme.label(groups),
                            depth: scheme.depth(groups),
                            scheme,
                            groups,
                            dataset: entry.id.clone(),
                            seed,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// Probes

#[derive(Clone, Debug)]
pub enum ProbeResult {
    Series(LayerSeries),
    Cka(CkaMatrix),
    NotApplicable(String),
}

impl ProbeResult {
    pub fn rows(&self, run_id: &str) -> Vec<ProbeRow> {
        match self {
            ProbeResult::Series(s) => series_rows(run_id, s),
            ProbeResult::Cka(m) => cka_rows(run_id, m),
            ProbeResult::NotApplicable(_) => Vec::new(),
        }
    }
}

/// Runs one probe on a fine-tuned network against its initial weights.
/// `trained` is left in its trained state.
pub fn run_probe(spec: &ProbeSpec, trained: &mut ProbeableNetwork, initial: &WeightSnapshot, dataset: &Dataset) -> Result<ProbeResult> {
    let partition = partition_of(trained)?;
    let metric_id = dataset.manifest.metric_id.as_str();
    let eval_subset = |n: usize| dataset.test.subset(&(0..n.min(dataset.test.len())).collect::<Vec<_>>());
    Ok(match spec.kind {
        ProbeKind::Knn => {
            let mode = spec.mode.unwrap_or(match trained.family() {
                Family::MiniCnn => EmbedMode::Gap,
                Family::MiniVit => EmbedMode::Cls,
            });
            let k = spec.k.unwrap_or(DEFAULT_K);
            ProbeResult::Series(layerwise_knn(trained, &dataset.train, &dataset.test, &partition, mode, k, metric_id)?)
        }
        ProbeKind::Reinit => {
            let test = &dataset.test;
            ProbeResult::Series(reinit_robustness(trained, initial, &partition, |n| evaluate(n, test, metric_id))?)
        }
        ProbeKind::L2 => ProbeResult::Series(l2_drift(initial, &snapshot_weights(trained, SnapshotTag::Best), &partition)?),
        ProbeKind::Attdist => {
            let Some(grid) = trained.patch_grid() else {
                return Ok(ProbeResult::NotApplicable(format!("{} has no attention maps", trained.arch_id())));
            };
            let set = eval_subset(spec.samples.unwrap_or(64));
            ProbeResult::Series(mean_attended_distance(&trained.attention_maps(&set.images)?, grid)?)
        }
        ProbeKind::Cka => {
            let mut start = trained.clone();
            restore_all(&mut start, initial)?;
            let set = eval_subset(spec.samples.unwrap_or(512));
            let taps = partition.tap_ids();
            let batch = set.batch(0, set.len());
            ProbeResult::Cka(cka_map(&[(&start, &*trained)], &batch, &taps, &taps, spec.batch_size.unwrap_or(128))?)
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(Error::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn run_dir(output_dir: &Path, run_id: &str) -> PathBuf {
    output_dir.join("runs").join(run_id)
}

enum CellStatus {
    Executed,
    Skipped,
}

fn probe_applies(spec: &ProbeSpec, cell: &Cell) -> bool {
    spec.inits.is_empty() || spec.inits.iter().any(|i| *i == cell.init_label)
}

fn execute_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    dataset: &Dataset,
    sources: &HashMap<String, WeightSnapshot>,
) -> Result<CellStatus> {
    let dir = run_dir(&cfg.output_dir, &cell.run_id);
    let model = cfg.models.iter().find(|m| m.label() == cell.model).expect("cell model comes from the config");
    let probes: Vec<&ProbeSpec> = cfg.probes.iter().filter(|p| probe_applies(p, cell)).collect();
    let probes_path = dir.join(PROBES_CSV);
    let (status, mut net, initial) = if dir.join(RUN_MANIFEST).is_file() {
        if probes.is_empty() || probes_path.is_file() {
            return Ok(CellStatus::Skipped);
        }
        let rec = RunRecord::load(&dir)?;
        let mut net = build_model(&rec.meta.arch)?;
        restore_all(&mut net, &rec.best)?;
        (CellStatus::Skipped, net, rec.initial)
    } else {
        let arch = model.arch(dataset.manifest.image_size, dataset.manifest.class_count, cell.seed);
        let mut net = build_model(&arch)?;
        apply_scheme(&mut net, &cell.scheme, sources.get(&model.source_label()))?;
        let mut train = model.resolve_train(&cfg.train)?;
        train.seed = cell.seed;
        log::info!("cell {} {} {} {} seed {}", cell.run_id, cell.model, cell.init_label, cell.dataset, cell.seed);
        let rec = fine_tune(&mut net, dataset, &train, &RunContext { run_id: cell.run_id.clone(), init: cell.scheme.clone() })?;
        write_json(&dir.join(CELL_FILE), cell)?;
        write_json(&dir.join(DATASET_FILE), &dataset.manifest)?;
        rec.save(&dir)?;
        (CellStatus::Executed, net, rec.initial)
    };
    if !probes.is_empty() {
        let mut rows = Vec::new();
        for p in probes {
            let result = run_probe(p, &mut net, &initial, dataset)?;
            if let ProbeResult::NotApplicable(why) = &result {
                log::debug!("cell {}: {why}", cell.run_id);
            }
            rows.extend(result.rows(&cell.run_id));
        }
        write_rows(&probes_path, &rows)?;
    }
    Ok(status)
}

/// Executes every cell of `cfg`, skipping those already complete on disk, and
/// writes `cells.json`, `runs.csv`, `failures.json` and `distances.csv`.
/// Cell failures are recorded and do not stop the matrix.
pub fn run_matrix(cfg: &ExperimentConfig, opts: RunOptions) -> Result<MatrixOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?).map_err(Error::io(out))?;

    let entries: Vec<&DatasetEntry> = cfg.datasets.iter().collect();
    let mut datasets = BTreeMap::new();
    for (e, ds) in entries.iter().zip(parallel_map(&entries, opts.workers, |e| materialize(e))) {
        datasets.insert(e.id.clone(), ds?);
    }
    let sources = prepare_sources(cfg, &datasets, opts.workers)?;
    compute_distances(cfg, &mut datasets, &sources)?;
    for (id, ds) in &datasets {
        write_json(&out.join("datasets").join(format!("{}.json", slug(id))), &ds.manifest)?;
    }

    let cells = expand_cells(cfg, &datasets, &sources)?;
    write_json(&out.join(CELLS_FILE), &cells)?;
    let statuses = parallel_map(&cells, opts.workers, |c| execute_cell(cfg, c, &datasets[&c.dataset], &sources));

    let mut outcome = MatrixOutcome { output_dir: out.clone(), ..Default::default() };
    let mut rows = Vec::new();
    for (cell, status) in cells.iter().zip(statuses) {
        match status {
            Ok(s) => {
                match s {
                    CellStatus::Executed => outcome.executed.push(cell.run_id.clone()),
                    CellStatus::Skipped => outcome.skipped.push(cell.run_id.clone()),
                }
                let meta = RunRecord::load(&run_dir(out, &cell.run_id))?.meta;
                rows.push(RunRow {
                    run_id: cell.run_id.clone(),
                    family: cell.family.to_string(),
                    capacity: cell.capacity_label(),
                    init_kind: cell.init_label.clone(),
                    n: cell.depth,
                    dataset: cell.dataset.clone(),
                    seed: cell.seed,
                    metric: meta.metric_id,
                    score: meta.final_test_score,
                    best_iter: meta.best_iteration,
                    wall_time: meta.wall_time,
                });
            }
            Err(e) => {
                log::warn!("cell {} failed: {e}", cell.run_id);
                outcome.failures.push(CellFailure {
                    run_id: cell.run_id.clone(),
                    model: cell.model.clone(),
                    init_label: cell.init_label.clone(),
                    dataset: cell.dataset.clone(),
                    seed: cell.seed,
                    cause: e.to_string(),
                });
            }
        }
    }
    let path = out.join(RUNS_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(&path))?;
    write_json(&out.join(FAILURES_FILE), &outcome.failures)?;
    outcome.cells = cells;
    Ok(outcome)
}

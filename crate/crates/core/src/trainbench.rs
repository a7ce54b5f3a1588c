//! Fine-tuning and source pretraining: warmup plus plateau-decay schedule,
//! validation tracing, best-checkpoint selection and run persistence.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Augmentation, BatchSampler, Dataset, LabeledSet};
use crate::error::{Error, Result};
use crate::initkit::{InitKind, InitScheme};
use crate::metrics::{self, PredictionSet};
use crate::netlab::{
    build_model, load_checkpoint, restore_all, save_checkpoint, snapshot_weights, ArchSpec, Family, ProbeableNetwork,
    SnapshotTag, WeightSnapshot,
};
use crate::nn::layers::{softmax_cross_entropy, softmax_rows};
use crate::nn::{Adam, Grads, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Peak rate for randomly initialized runs.
    pub ri_lr: f64,
    pub warmup_iters: usize,
    pub plateau_factor: f64,
    /// Validations without improvement before the rate is decayed.
    pub plateau_patience: usize,
    /// Minimum gain over the best validation metric that counts as improvement.
    pub plateau_threshold: f64,
    pub val_every: usize,
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Family default when unset (adaptive_cnn for CNNs, adaptive_decoupled_wd for ViTs).
    pub optimizer_kind: Option<OptimizerKind>,
    pub weight_decay: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub augmentation: Augmentation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            ri_lr: 3e-4,
            warmup_iters: 1000,
            plateau_factor: 0.1,
            plateau_patience: 5,
            plateau_threshold: 1e-4,
            val_every: 100,
            min_lr: 1e-6,
            batch_size: 64,
            max_iters: 20_000,
            optimizer_kind: None,
            weight_decay: 0.0,
            seed: 0,
            deterministic: true,
            augmentation: Augmentation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr && self.min_lr <= self.ri_lr) {
            return bad("require 0 < min_lr <= base_lr, ri_lr");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.val_every == 0 {
            return bad("batch_size and val_every must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn optimizer_for(&self, family: Family) -> OptimizerKind {
        self.optimizer_kind.unwrap_or(match family {
            Family::MiniCnn => OptimizerKind::AdaptiveCnn,
            Family::MiniVit => OptimizerKind::AdaptiveDecoupledWd,
        })
    }

    pub fn peak_lr(&self, init: InitKind) -> f64 {
        if init == InitKind::Ri {
            self.ri_lr
        } else {
            self.base_lr
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleEvent {
    Hold,
    Decayed,
    Stop,
}

/// Linear warmup to the peak rate, then piecewise-constant decay on plateaus.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    peak: f64,
    current: f64,
    warmup: usize,
    factor: f64,
    patience: usize,
    threshold: f64,
    min_lr: f64,
    best: f64,
    bad: usize,
}

impl PlateauSchedule {
    pub fn new(peak: f64, cfg: &TrainConfig) -> Self {
        Self {
            peak,
            current: peak,
            warmup: cfg.warmup_iters,
            factor: cfg.plateau_factor,
            patience: cfg.plateau_patience.max(1),
            threshold: cfg.plateau_threshold,
            min_lr: cfg.min_lr,
            best: f64::NEG_INFINITY,
            bad: 0,
        }
    }

    /// Rate used for the update that produces iteration `it + 1`.
    pub fn lr(&self, it: usize) -> f64 {
        if it < self.warmup {
            self.peak * (it + 1) as f64 / self.warmup as f64
        } else {
            self.current
        }
    }

    /// Feeds the validation metric observed at `iteration`.
    pub fn observe(&mut self, iteration: usize, metric: f64) -> ScheduleEvent {
        if metric > self.best + self.threshold {
            self.best = metric;
            self.bad = 0;
            return ScheduleEvent::Hold;
        }
        if iteration < self.warmup {
            return ScheduleEvent::Hold;
        }
        self.bad += 1;
        if self.bad < self.patience {
            return ScheduleEvent::Hold;
        }
        self.bad = 0;
        let next = self.current * self.factor;
        if next < self.min_lr * (1.0 - 1e-12) {
            ScheduleEvent::Stop
        } else {
            self.current = next;
            ScheduleEvent::Decayed
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub metric: f64,
    /// Rate in effect for the next update.
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    LrFloor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub arch: ArchSpec,
    pub arch_id: String,
    pub init_scheme: InitScheme,
    pub init_label: String,
    pub dataset_id: String,
    pub metric_id: String,
    pub train_config: TrainConfig,
    pub optimizer: OptimizerKind,
    pub trace: Vec<TracePoint>,
    pub best_iteration: usize,
    pub best_val: f64,
    pub final_test_score: f64,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub wall_time: f64,
    pub notes: Vec<String>,
}

/// One fine-tuning run with its checkpoints.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub initial: WeightSnapshot,
    pub best: WeightSnapshot,
}

pub const RUN_MANIFEST: &str = "manifest.json";
pub const RUN_TRACE: &str = "trace.csv";

impl RunRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        save_checkpoint(&self.initial, dir, "initial")?;
        save_checkpoint(&self.best, dir, "best")?;
        let mut w = csv::Writer::from_path(dir.join(RUN_TRACE))?;
        for p in &self.meta.trace {
            w.serialize(p)?;
        }
        w.flush().map_err(Error::io(dir))?;
        let mut doc = serde_json::to_value(&self.meta)?;
        doc["initial_ckpt"] = "initial.json".into();
        doc["best_ckpt"] = "best.json".into();
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(Error::io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let mut doc: serde_json::Value = serde_json::from_str(&text)?;
        let initial_name = doc["initial_ckpt"].as_str().unwrap_or("initial.json").to_string();
        let best_name = doc["best_ckpt"].as_str().unwrap_or("best.json").to_string();
        if let Some(o) = doc.as_object_mut() {
            o.remove("initial_ckpt");
            o.remove("best_ckpt");
        }
        let meta: RunMeta = serde_json::from_value(doc)?;
        Ok(Self { meta, initial: load_checkpoint(&dir.join(initial_name))?, best: load_checkpoint(&dir.join(best_name))? })
    }

    /// Equality of everything except wall-clock fields and snapshot timestamps.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let mut a = self.meta.clone();
        let mut b = other.meta.clone();
        a.wall_time = 0.0;
        b.wall_time = 0.0;
        a == b && self.initial.same_values(&other.initial) && self.best.same_values(&other.best)
    }
}

/// Softmax predictions over a split, in chunks of `chunk` samples.
pub fn predict(network: &ProbeableNetwork, set: &LabeledSet, chunk: usize) -> Result<PredictionSet> {
    if set.is_empty() {
        return Err(Error::Data("empty split".into()));
    }
    let c = network.num_classes();
    if set.class_count != c {
        return Err(Error::Shape(format!("split has {} classes, network {c}", set.class_count)));
    }
    let mut scores = Vec::with_capacity(set.len() * c);
    let mut hard = Vec::with_capacity(set.len());
    for (s, e) in set.chunks(chunk) {
        let logits = network.forward(&set.batch(s, e).images)?;
        let probs = softmax_rows(&logits, c);
        for row in probs.chunks(c) {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            hard.push(best);
        }
        scores.extend(probs.iter().map(|v| *v as f64));
    }
    PredictionSet::new(set.labels.clone(), hard, scores, c)
}

pub fn evaluate(network: &ProbeableNetwork, set: &LabeledSet, metric_id: &str) -> Result<f64> {
    metrics::check_metric_id(metric_id)?;
    metrics::compute(metric_id, &predict(network, set, 256)?)
}

/// Identifies a run for records and logs.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub run_id: String,
    pub init: InitScheme,
}

/// Trains `network` on the dataset's train split, validating every
/// `val_every` iterations (and at iteration 0). The network ends holding the
/// best validation weights, which also produce `final_test_score`.
pub fn fine_tune(network: &mut ProbeableNetwork, dataset: &Dataset, cfg: &TrainConfig, ctx: &RunContext) -> Result<RunRecord> {
    cfg.validate()?;
    for (name, split) in [("train", &dataset.train), ("val", &dataset.val), ("test", &dataset.test)] {
        if split.is_empty() {
            return Err(Error::Data(format!("{name} split of `{}` is empty", dataset.manifest.id)));
        }
    }
    let metric_id = dataset.manifest.metric_id.as_str();
    metrics::check_metric_id(metric_id)?;
    let started = Instant::now();
    let partition_groups = crate::netlab::partition_of(network)?.len();
    let optimizer = cfg.optimizer_for(network.family());
    let initial = snapshot_weights(network, SnapshotTag::Initial);
    let mut best = initial.retagged(SnapshotTag::Best, false);
    let mut adam = Adam::new(optimizer, cfg.weight_decay as f32, network.params());
    let mut grads = Grads::zeros(network.params());
    let mut sched = PlateauSchedule::new(cfg.peak_lr(ctx.init.kind), cfg);
    let mut sampler = BatchSampler::new(dataset.train.len(), cfg.batch_size, cfg.seed, cfg.augmentation.clone());

    let mut trace = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_iteration = 0;
    let mut stop_reason = StopReason::MaxIters;
    let mut it = 0usize;
    loop {
        if it % cfg.val_every == 0 || it == cfg.max_iters {
            let metric = evaluate(network, &dataset.val, metric_id)?;
            if metric > best_val {
                best_val = metric;
                best_iteration = it;
                best = snapshot_weights(network, SnapshotTag::Best);
            }
            let event = sched.observe(it, metric);
            trace.push(TracePoint { iteration: it, metric, lr: sched.lr(it) });
            log::debug!("{} it {it} val {metric:.4} lr {:.2e}", ctx.run_id, sched.lr(it));
            if event == ScheduleEvent::Stop {
                stop_reason = StopReason::LrFloor;
                break;
            }
        }
        if it >= cfg.max_iters {
            break;
        }
        let (x, y) = sampler.next_batch(&dataset.train);
        let (logits, tape) = network.forward_train(&x)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, network.num_classes(), &y);
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { iteration: it, reason: format!("loss is {loss}") });
        }
        grads.zero();
        network.backward(&tape, &dlogits, &mut grads);
        adam.step(network.params_mut(), &grads, sched.lr(it) as f32);
        it += 1;
    }
    restore_all(network, &best)?;
    let final_test_score = evaluate(network, &dataset.test, metric_id)?;
    let mut notes = vec![
        "stats transfer resamples every learnable tensor, including norm scale/shift; running statistics reset".into(),
        format!(
            "plateau patience {} validations, threshold {}, validation every {} iterations",
            cfg.plateau_patience, cfg.plateau_threshold, cfg.val_every
        ),
    ];
    if network.family() == Family::MiniVit {
        notes.push("positional embedding belongs to the patchifier group".into());
    }
    if !cfg.deterministic {
        notes.push("parallel mode: bit reproducibility not guaranteed".into());
    }
    let meta = RunMeta {
        run_id: ctx.run_id.clone(),
        arch: network.arch().clone(),
        arch_id: network.arch_id().to_string(),
        init_scheme: ctx.init.clone(),
        init_label: ctx.init.canonical(partition_groups).label(partition_groups),
        dataset_id: dataset.manifest.id.clone(),
        metric_id: metric_id.to_string(),
        train_config: cfg.clone(),
        optimizer,
        trace,
        best_iteration,
        best_val,
        final_test_score,
        iterations_run: it,
        stop_reason,
        wall_time: started.elapsed().as_secs_f64(),
        notes,
    };
    Ok(RunRecord { meta, initial, best })
}

/// First trace point attaining the maximum metric.
pub fn best_point(trace: &[TracePoint]) -> Option<&TracePoint> {
    trace.iter().fold(None, |acc: Option<&TracePoint>, p| match acc {
        Some(b) if b.metric >= p.metric => Some(b),
        _ => Some(p),
    })
}

/// Iterations needed to reach the best validation metric.
pub fn convergence_iters(record: &RunRecord) -> Result<usize> {
    if record.meta.trace.is_empty() {
        return Err(Error::Data("empty validation trace".into()));
    }
    Ok(record.meta.best_iteration)
}

/// `convergence_iters(baseline) / convergence_iters(run)`, the baseline being the depth-0 run.
pub fn speedup(run: &RunRecord, baseline: &RunRecord) -> Result<f64> {
    let a = convergence_iters(run)?;
    let b = convergence_iters(baseline)?;
    if a == 0 {
        return Err(Error::UndefinedMetric("run converged at iteration 0".into()));
    }
    Ok(b as f64 / a as f64)
}

/// Trains a randomly initialized network on the source task and returns its best
/// weights tagged `pretrained`, with the source head removed.
pub fn pretrain_source(spec: &ArchSpec, source: &Dataset, cfg: &TrainConfig) -> Result<(WeightSnapshot, RunRecord)> {
    if spec.num_classes != source.manifest.class_count {
        return Err(Error::Config(format!(
            "arch has {} classes but source task has {}",
            spec.num_classes, source.manifest.class_count
        )));
    }
    let mut net = build_model(spec)?;
    let ctx = RunContext { run_id: format!("pretrain-{}-{}", spec.arch_id().replace('/', "-"), cfg.seed), init: InitScheme::random(spec.seed) };
    let record = fine_tune(&mut net, source, cfg, &ctx)?;
    Ok((record.best.retagged(SnapshotTag::Pretrained, true), record))
}

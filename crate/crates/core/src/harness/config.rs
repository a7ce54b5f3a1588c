//! Versioned TOML experiment description.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GeneratorSpec;
use crate::error::{Error, Result};
use crate::initkit::InitKind;
use crate::metrics::check_metric_id;
use crate::netlab::{partition_for_arch_id, ArchSpec, Capacity, Family, InputShape};
use crate::probes::EmbedMode;
use crate::trainbench::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_metric() -> String {
    "accuracy".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub pretrain: Option<PretrainStage>,
    pub models: Vec<ModelEntry>,
    pub init_schemes: Vec<SchemeTemplate>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    /// Model label whose source checkpoint embeds images for FID; defaults to the
    /// first CNN model.
    #[serde(default)]
    pub distance_embedder: Option<String>,
}

/// A dataset given either by a generator spec or by a directory of images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Resize target for directory datasets.
    #[serde(default)]
    pub image_size: Option<usize>,
    #[serde(default = "default_metric")]
    pub metric_id: String,
    #[serde(default)]
    pub split_seed: u64,
}

impl DatasetEntry {
    pub fn image_size(&self) -> usize {
        match (&self.generator, self.image_size) {
            (Some(g), _) => g.image_size,
            (None, Some(s)) => s,
            (None, None) => 32,
        }
    }
}

/// Source-task pretraining, one checkpoint per (family, capacity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainStage {
    pub dataset: String,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub family: Family,
    pub capacity: Capacity,
    /// Keep only the first `truncate` transformer blocks.
    #[serde(default)]
    pub truncate: Option<usize>,
    #[serde(default)]
    pub source_checkpoint: Option<PathBuf>,
    /// Keys merged over the shared fine-tuning table.
    #[serde(default)]
    pub train: Option<toml::Table>,
    /// Keys merged over the pretrain stage's table.
    #[serde(default)]
    pub pretrain: Option<toml::Table>,
}

impl ModelEntry {
    pub fn arch(&self, image_size: usize, num_classes: usize, seed: u64) -> ArchSpec {
        let mut a = ArchSpec::new(self.family, self.capacity, InputShape::new(image_size, image_size, 3), num_classes, seed);
        a.depth = self.truncate;
        a
    }

    /// `family/capacity`, with `/truncN` for truncated models.
    pub fn label(&self) -> String {
        self.arch(32, 1, 0).arch_id()
    }

    /// Label of the untruncated model that provides the source weights.
    pub fn source_label(&self) -> String {
        format!("{}/{}", self.family, self.capacity)
    }

    pub fn groups(&self) -> Result<usize> {
        Ok(partition_for_arch_id(&self.label())?.len())
    }

    pub fn resolve_train(&self, base: &TrainConfig) -> Result<TrainConfig> {
        merge_train(base, self.train.as_ref())
    }
}

pub fn merge_train(base: &TrainConfig, overrides: Option<&toml::Table>) -> Result<TrainConfig> {
    let Some(over) = overrides else { return Ok(base.clone()) };
    let mut table = toml::Table::try_from(base)?;
    for (k, v) in over {
        table.insert(k.clone(), v.clone());
    }
    Ok(toml::Value::Table(table).try_into()?)
}

/// One init template, expanded into concrete schemes per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeTemplate {
    pub kind: InitKind,
    #[serde(default)]
    pub n: Option<usize>,
    /// Explicit WT-ST depth list.
    #[serde(default)]
    pub depths: Option<Vec<usize>>,
    /// Every depth `0..=groups` of each model.
    #[serde(default)]
    pub sweep: bool,
    /// Restrict to these model labels.
    #[serde(default)]
    pub models: Vec<String>,
    /// Restrict to these dataset ids.
    #[serde(default)]
    pub datasets: Vec<String>,
}

impl SchemeTemplate {
    /// Transfer depths for the given group count; `None` entries are the non-WT_ST kinds.
    pub fn depths_for(&self, groups: usize) -> Result<Vec<Option<usize>>> {
        if self.kind != InitKind::WtSt {
            if self.n.is_some() || self.depths.is_some() || self.sweep {
                return Err(Error::Config(format!("{} takes no transfer depth", self.kind)));
            }
            return Ok(vec![None]);
        }
        let list: Vec<usize> = if self.sweep {
            (0..=groups).collect()
        } else if let Some(d) = &self.depths {
            d.clone()
        } else if let Some(n) = self.n {
            vec![n]
        } else {
            return Err(Error::Config("WT_ST template needs n, depths or sweep".into()));
        };
        if let Some(bad) = list.iter().find(|d| **d > groups) {
            return Err(Error::Config(format!("WT_ST depth {bad} outside 0..={groups}")));
        }
        Ok(list.into_iter().map(Some).collect())
    }

    pub fn applies(&self, model_label: &str, dataset: &str) -> bool {
        (self.models.is_empty() || self.models.iter().any(|m| m == model_label))
            && (self.datasets.is_empty() || self.datasets.iter().any(|d| d == dataset))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Cka,
    Knn,
    Reinit,
    L2,
    Attdist,
}

impl ProbeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cka" => Ok(Self::Cka),
            "knn" => Ok(Self::Knn),
            "reinit" => Ok(Self::Reinit),
            "l2" => Ok(Self::L2),
            "attdist" => Ok(Self::Attdist),
            other => Err(Error::Config(format!("unknown probe `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    /// Neighbours for k-NN.
    #[serde(default)]
    pub k: Option<usize>,
    /// k-NN embedding mode; family default when unset.
    #[serde(default)]
    pub mode: Option<EmbedMode>,
    /// CKA estimator batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Evaluation samples for CKA and attention distance.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Restrict to these init labels (e.g. `WT`, `WT-ST-2/4`).
    #[serde(default)]
    pub inits: Vec<String>,
}

impl ProbeSpec {
    pub fn new(kind: ProbeKind) -> Self {
        Self { kind, k: None, mode: None, batch_size: None, samples: None, inits: Vec::new() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `output_dir` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetEntry> {
        self.datasets.iter().find(|d| d.id == id).ok_or_else(|| Error::Config(format!("unknown dataset `{id}`")))
    }

    /// Datasets that receive fine-tuning cells (all but the pretraining source).
    pub fn targets(&self) -> Vec<&DatasetEntry> {
        let src = self.pretrain.as_ref().map(|p| p.dataset.as_str());
        self.datasets.iter().filter(|d| Some(d.id.as_str()) != src).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} not recognized (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = HashSet::new();
        for d in &self.datasets {
            if !seen.insert(d.id.as_str()) {
                return bad(format!("dataset id `{}` repeated", d.id));
            }
            check_metric_id(&d.metric_id)?;
            match (&d.generator, &d.path) {
                (Some(g), None) => g.validate()?,
                (None, Some(_)) => {}
                _ => return bad(format!("dataset `{}` needs exactly one of generator or path", d.id)),
            }
        }
        if let Some(p) = &self.pretrain {
            self.dataset(&p.dataset)?;
            p.train.validate()?;
        }
        if self.models.is_empty() || self.init_schemes.is_empty() {
            return bad("models and init_schemes must be non-empty".into());
        }
        let labels: Vec<String> = self.models.iter().map(ModelEntry::label).collect();
        for m in &self.models {
            m.resolve_train(&self.train)?.validate()?;
            if let Some(p) = &self.pretrain {
                merge_train(&p.train, m.pretrain.as_ref())?.validate()?;
            }
            if let Some(t) = m.truncate {
                if m.family != Family::MiniVit {
                    return bad(format!("truncate applies to mini_vit only, not {}", m.family));
                }
                let full = ArchSpec::new(m.family, m.capacity, InputShape::new(32, 32, 3), 1, 0).effective_depth();
                if t == 0 || t > full {
                    return bad(format!("truncate {t} outside 1..={full}"));
                }
            }
        }
        for s in &self.init_schemes {
            for l in &s.models {
                if !labels.contains(l) {
                    return bad(format!("init scheme names unknown model `{l}`"));
                }
            }
            for d in &s.datasets {
                self.dataset(d)?;
            }
            for m in &self.models {
                if s.models.is_empty() || s.models.contains(&m.label()) {
                    s.depths_for(m.groups()?)?;
                }
            }
        }
        let needs_source = self.init_schemes.iter().any(|s| s.kind != InitKind::Ri);
        if needs_source && self.pretrain.is_none() && self.models.iter().any(|m| m.source_checkpoint.is_none()) {
            return bad("transfer schemes need a pretrain stage or a source_checkpoint per model".into());
        }
        if let Some(e) = &self.distance_embedder {
            if !labels.contains(e) {
                return bad(format!("distance_embedder `{e}` is not a configured model"));
            }
        }
        self.train.validate()
    }
}

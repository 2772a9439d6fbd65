//! Run configuration files.
//!
//! ```toml
//! [data]
//! schema = "schema.txt"
//! nodes = "nodes.tsv"
//! edges = "edges.tsv"
//! labels = "labels.tsv"      # classification
//! splits = "splits.tsv"      # classification
//! target_type = "A"          # classification
//!
//! [model]
//! task = "node_classification"
//! variant = "mecch"
//! hidden_dim = 64
//!
//! [train]
//! learning_rate = 0.005
//! seed = 7
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DEFAULT_METAPATH_CAP;
use crate::model::{ModelConfig, Task, Variant};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub schema: PathBuf,
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub target_type: Option<String>,
    pub target_relation: Option<String>,
    pub target_train: Option<PathBuf>,
    pub target_valid: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub negatives_valid: Option<PathBuf>,
    pub negatives_test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub task: Task,
    pub variant: Variant,
    pub hidden_dim: usize,
    pub metapath_length: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// Class count or embedding width; inferred when absent (largest label
    /// plus one, or `hidden_dim`).
    pub output_dim: Option<usize>,
    pub metapath_cap: usize,
    /// Upper bound on stored context entries; exceeding it fails with a
    /// resource guard error.
    pub max_context_entries: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            task: Task::NodeClassification,
            variant: Variant::Mecch,
            hidden_dim: 64,
            metapath_length: 2,
            num_layers: 2,
            dropout: 0.0,
            output_dim: None,
            metapath_cap: DEFAULT_METAPATH_CAP,
            max_context_entries: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub negatives_per_positive: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds both parameter initialization and the training stream.
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            negatives_per_positive: t.negatives_per_positive,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Directory relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().replace('\n', " ")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.check_task_fields()?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of an optional data entry that the task requires.
    pub fn required(&self, field: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        field
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("[data] {key} is required for {}", self.model.task)))
    }

    fn check_task_fields(&self) -> Result<()> {
        let d = &self.data;
        let (need, forbid): (&[(&str, bool)], &[(&str, bool)]) = match self.model.task {
            Task::NodeClassification => (
                &[("labels", d.labels.is_some()), ("splits", d.splits.is_some()), ("target_type", d.target_type.is_some())],
                &[
                    ("target_relation", d.target_relation.is_some()),
                    ("target_train", d.target_train.is_some()),
                    ("target_valid", d.target_valid.is_some()),
                    ("target_test", d.target_test.is_some()),
                    ("negatives_valid", d.negatives_valid.is_some()),
                    ("negatives_test", d.negatives_test.is_some()),
                ],
            ),
            Task::LinkPrediction => (
                &[
                    ("target_relation", d.target_relation.is_some()),
                    ("target_train", d.target_train.is_some()),
                    ("target_valid", d.target_valid.is_some()),
                    ("target_test", d.target_test.is_some()),
                    ("negatives_valid", d.negatives_valid.is_some()),
                    ("negatives_test", d.negatives_test.is_some()),
                ],
                &[("labels", d.labels.is_some()), ("splits", d.splits.is_some()), ("target_type", d.target_type.is_some())],
            ),
        };
        if let Some((k, _)) = need.iter().find(|(_, present)| !present) {
            return Err(Error::Config(format!("[data] {k} is required for {}", self.model.task)));
        }
        if let Some((k, _)) = forbid.iter().find(|(_, present)| *present) {
            return Err(Error::Config(format!("[data] {k} does not apply to {}", self.model.task)));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            negatives_per_positive: t.negatives_per_positive,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
        }
    }

    pub fn model_config(&self, output_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            hidden_dim: m.hidden_dim,
            metapath_length: m.metapath_length,
            num_layers: m.num_layers,
            dropout: m.dropout,
            variant: m.variant,
            task: m.task,
            output_dim,
            seed: self.train.seed,
            metapath_cap: m.metapath_cap,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
        }
        self
    }
}

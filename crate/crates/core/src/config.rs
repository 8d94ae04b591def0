//! Run configuration: a JSON document with one section per component.
//!
//! Unknown keys are rejected at every level. Overrides of the form
//! `section.key=value` are applied to the JSON tree before it is typed, so
//! an override can only set keys the schema knows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::cluster::ClusterConfig;
use crate::data::{self, FeatureDataset, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fixmatch::FixMatchConfig;
use crate::nn::{self, HeadInput, ModelShape};
use crate::proto::MarginConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// FixMatch warm-up, then alternating offline clustering and online
    /// training against the prototype bank.
    Aplt,
    /// FixMatch for the whole budget.
    Fixmatch,
    /// Supervised cross-entropy on labeled samples only.
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of every class held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    pub feature_norm: bool,
    pub head_input: HeadInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 32,
            feature_norm: true,
            head_input: HeadInput::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: nn::BASE_LR,
            momentum: nn::MOMENTUM,
            weight_decay: nn::WEIGHT_DECAY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSchedule {
    pub warmup_epochs: usize,
    pub main_epochs: usize,
    pub offline_every: usize,
    /// Refresh pseudo-labels and prototypes every epoch.
    pub sync_mode: bool,
    /// Disables offline events entirely (no bank, no margin loss).
    pub offline_enabled: bool,
    /// Optimizer steps per epoch. `None` makes one pass over the unlabeled
    /// samples; otherwise unlabeled batches are drawn cyclically.
    pub steps_per_epoch: Option<usize>,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 15,
            main_epochs: 40,
            offline_every: 10,
            sync_mode: false,
            offline_enabled: true,
            steps_per_epoch: None,
        }
    }
}

impl PhaseSchedule {
    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.main_epochs
    }

    /// Whether an offline event runs at the start of `epoch`.
    pub fn is_offline_epoch(&self, epoch: usize) -> bool {
        if !self.offline_enabled || epoch < self.warmup_epochs || epoch >= self.total_epochs() {
            return false;
        }
        let step = if self.sync_mode { 1 } else { self.offline_every };
        (epoch - self.warmup_epochs).is_multiple_of(step)
    }

    pub fn offline_epochs(&self) -> Vec<usize> {
        (0..self.total_epochs())
            .filter(|&e| self.is_offline_epoch(e))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub fixmatch: FixMatchConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub margin: MarginConfig,
    #[serde(default)]
    pub schedule: PhaseSchedule,
}

impl RunConfig {
    /// Defaults on the hard 12-class synthetic benchmark with 10% labels.
    pub fn hard_benchmark(seed: u64) -> Self {
        Self {
            mode: Mode::Aplt,
            seed,
            data: DataConfig {
                source: DataSource::Synthetic(SyntheticSpec::hard(seed)),
                test_fraction: 0.2,
            },
            split: SplitSpec {
                labeled_ratio: 0.1,
                seed,
                stratified: true,
            },
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            augment: AugmentConfig::default(),
            fixmatch: FixMatchConfig::default(),
            cluster: ClusterConfig::default(),
            margin: MarginConfig::default(),
            schedule: PhaseSchedule::default(),
        }
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, overrides)
    }

    /// Applies overrides to an already-typed config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let text = serde_json::to_string(self)?;
        Self::from_json_str(&text, overrides)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.fixmatch.validate()?;
        self.cluster.validate()?;
        self.margin.validate()?;
        if self.schedule.offline_every == 0 {
            return Err(Error::Config("schedule.offline_every must be at least 1".into()));
        }
        if self.model.hidden == 0 || self.model.embed == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr >= 0.0) {
            return Err(Error::Config(format!("optim.lr must be >= 0, got {}", self.optim.lr)));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "data.test_fraction must be in [0, 1), got {}",
                self.data.test_fraction
            )));
        }
        if !(self.split.labeled_ratio > 0.0 && self.split.labeled_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split.labeled_ratio must be in (0, 1), got {}",
                self.split.labeled_ratio
            )));
        }
        Ok(())
    }

    pub fn model_shape(&self, input: usize, classes: usize) -> ModelShape {
        ModelShape {
            input,
            hidden: self.model.hidden,
            embed: self.model.embed,
            classes,
        }
    }

    /// Loads or generates the dataset and returns `(train, test)`. The test
    /// part is a stratified hold-out; the train part is split into labeled
    /// and unlabeled samples unless the source already carries a mask.
    pub fn prepare_data(&self) -> Result<(FeatureDataset, FeatureDataset)> {
        let full = match &self.data.source {
            DataSource::Synthetic(spec) => spec.generate()?,
            DataSource::Csv { path, num_classes } => data::load_csv(path, *num_classes)?,
        };
        let (train, test) = full.holdout(self.data.test_fraction, self.split.seed)?;
        let train = if train.is_fully_labeled() {
            data::apply_split(&train, &self.split)?
        } else {
            train
        };
        train.validate_for_training()?;
        Ok((train, test))
    }
}

/// Sets `a.b.c=value` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise. Intermediate objects must
/// already exist or be creatable; typing later rejects unknown keys.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path `{path}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    for (depth, key) in keys[..keys.len() - 1].iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{key}` is not inside an object")))?;
        if keys[..depth] == ["data", "source"] && !obj.is_empty() && !obj.contains_key(*key) {
            let active = obj.keys().next().cloned().unwrap_or_default();
            return Err(Error::Config(format!(
                "`{path}`: the data source is `{active}`, not `{key}`"
            )));
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("`{path}`: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

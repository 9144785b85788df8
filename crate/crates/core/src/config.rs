//! TOML run configuration shared by every CLI command.
//!
//! Several files can be layered: later files override earlier ones key by
//! key, and tables merge recursively. Relative paths are taken from the
//! working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{DatasetFormat, FieldMap};
use crate::error::{Error, Result};
use crate::llm::LlmRunConfig;
use crate::metrics::DEFAULT_EDGES;
use crate::model::{EncoderConfig, ModelConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Split the training file 80/20 into train and eval.
    Dev,
    /// Merge train and dev, keep a small holdout for early stopping.
    Submission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DatasetFormat,
    pub fields: FieldMap,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub mode: SplitMode,
    pub train_ratio: f64,
    pub holdout_fraction: f64,
    pub language: String,
    pub domain: String,
    /// Column label in comparison tables.
    pub dataset: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: DatasetFormat::TaskJson,
            fields: FieldMap::default(),
            train: None,
            dev: None,
            test: None,
            mode: SplitMode::Dev,
            train_ratio: 0.8,
            holdout_fraction: 0.1,
            language: "unknown".into(),
            domain: "unknown".into(),
            dataset: "dataset".into(),
        }
    }
}

/// Head settings. Dropout rates come from `[train] dropout`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub head_internal_dropout: bool,
    pub head_init_std: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            head_internal_dropout: m.head_internal_dropout,
            head_init_std: m.head_init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub v_edges: Vec<f64>,
    pub a_edges: Vec<f64>,
    pub method: String,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            v_edges: DEFAULT_EDGES.to_vec(),
            a_edges: DEFAULT_EDGES.to_vec(),
            method: "fine-tuned".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub llm: LlmRunConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: TrainConfig::default().seed,
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            llm: LlmRunConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dropout: self.train.dropout,
            head_dropout: self.train.dropout,
            head_internal_dropout: self.model.head_internal_dropout,
            head_init_std: self.model.head_init_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config().validate()?;
        self.llm.validate()?;
        crate::metrics::validate_edges(&self.evaluate.v_edges)?;
        crate::metrics::validate_edges(&self.evaluate.a_edges)?;
        let d = &self.data;
        if !(d.train_ratio > 0.0 && d.train_ratio < 1.0) {
            return Err(Error::Config(format!("data.train_ratio {} must lie in (0, 1)", d.train_ratio)));
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.holdout_fraction {} must lie in (0, 1); a validation set is required",
                d.holdout_fraction
            )));
        }
        Ok(())
    }

    /// Multi-line summary of the training hyperparameters.
    pub fn describe_training(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(&format!("{k:<16} {v}\n"));
        };
        line("batch_size", t.batch_size.to_string());
        line("learning_rate", format!("{:e}", t.learning_rate));
        line("warmup_ratio", format!("{} ({}%)", t.warmup_ratio, t.warmup_ratio * 100.0));
        line("schedule", "linear decay to 0".into());
        line("dropout", t.dropout.to_string());
        line("max_epochs", t.max_epochs.to_string());
        line(
            "patience",
            if t.early_stopping {
                t.patience.to_string()
            } else {
                format!("{} (disabled)", t.patience)
            },
        );
        line("grad_clip_norm", t.grad_clip_norm.to_string());
        line("weight_decay", t.weight_decay.to_string());
        line("max_len", t.max_len.to_string());
        line("seed", self.seed.to_string());
        s
    }
}

/// A resolved configuration plus the dotted keys that were set explicitly.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub overrides: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if b.get("kind") == o.get("kind") || o.get("kind").is_none() => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            // Tagged sections count as one key.
            Value::Table(t) if !t.contains_key("kind") => flatten(&key, t, out),
            _ => out.push(key),
        }
    }
}

pub fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Layers `files` in order, then applies the seed override.
pub fn load_layers(files: &[PathBuf], seed: Option<u64>) -> Result<LoadedConfig> {
    let mut merged = Table::new();
    for path in files {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading config {}: {e}", path.display())))?;
        let table = parse_table(&text, &path.display().to_string())?;
        if table.get("train").and_then(|t| t.get("seed")).is_some() {
            return Err(Error::Config(format!(
                "{}: set the seed with the top-level `seed` key, not train.seed",
                path.display()
            )));
        }
        merge(&mut merged, table);
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} is too large")))?;
        merged.insert("seed".into(), Value::Integer(seed));
    }
    let mut overrides = Vec::new();
    flatten("", &merged, &mut overrides);
    let mut config: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.train.seed = config.seed;
    config.validate()?;
    Ok(LoadedConfig {
        config,
        overrides,
        files: files.to_vec(),
    })
}

pub fn load(path: &Path) -> Result<RunConfig> {
    Ok(load_layers(&[path.to_path_buf()], None)?.config)
}

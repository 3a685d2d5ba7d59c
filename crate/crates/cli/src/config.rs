//! The run configuration: one JSON document with a section per stage.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gcos_core::accel::Platform;
use gcos_core::graph::synthetic::DatasetPreset;
use gcos_core::search::SearchParams;
use gcos_core::supernet::{LayerOptions, SupernetSpace, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Generated stand-in with the preset's published sizes.
    Synthetic,
    Planetoid,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: DatasetFormat,
    pub name: DatasetPreset,
    pub content_path: Option<PathBuf>,
    pub cites_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
    /// Split sizes; the preset's Planetoid sizes when absent.
    pub train_size: Option<usize>,
    pub val_size: Option<usize>,
    pub test_size: Option<usize>,
    pub normalize_features: bool,
    /// Seeds graph generation and split sampling.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            format: DatasetFormat::Synthetic,
            name: DatasetPreset::Cora,
            content_path: None,
            cites_path: None,
            json_path: None,
            train_size: None,
            val_size: None,
            test_size: None,
            normalize_features: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupernetConfig {
    /// Full-option layers ahead of the prediction layer.
    pub hidden_layers: usize,
    /// Append a prediction layer whose width is the class count.
    pub prediction_layer: bool,
    /// Option lists of the searchable layers; every option when absent.
    pub options: Option<LayerOptions>,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 1,
            prediction_layer: true,
            options: None,
        }
    }
}

impl SupernetConfig {
    pub fn space(&self, num_classes: usize) -> gcos_core::Result<SupernetSpace> {
        let mut space = SupernetSpace::standard(self.hidden_layers, self.prediction_layer.then_some(num_classes));
        if let Some(options) = &self.options {
            for layer in &mut space.layers[..self.hidden_layers] {
                *layer = options.clone();
            }
        }
        space.check()?;
        Ok(space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    /// Validation accuracy under the pre-trained shared weights.
    Supernet,
    /// Table lookup with a hashed fallback; for smoke runs.
    Lookup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub target: Option<f64>,
    pub outputs: usize,
    pub pool_capacity: usize,
    pub birth_rate: f64,
    pub max_generations: usize,
    pub latency_weight: Option<f64>,
    pub latency_ref: Option<f64>,
    pub mutation_rate: f64,
    pub workers: usize,
    /// Entries in the tile-size ladder.
    pub tile_options: usize,
    pub evaluator: EvaluatorKind,
    /// JSON object mapping subnet JSON to accuracy, for the lookup evaluator.
    pub lookup_table: Option<PathBuf>,
    /// Save a resumable state every this many generations (0 disables).
    pub checkpoint_every: usize,
    /// Retrain the best candidate from scratch after the search.
    pub finetune_best: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let p = SearchParams::default();
        Self {
            target: p.target,
            outputs: p.outputs,
            pool_capacity: p.pool_capacity,
            birth_rate: p.birth_rate,
            max_generations: p.max_generations,
            latency_weight: p.latency_weight,
            latency_ref: p.latency_ref,
            mutation_rate: p.mutation_rate,
            workers: p.workers,
            tile_options: 10,
            evaluator: EvaluatorKind::Supernet,
            lookup_table: None,
            checkpoint_every: 10,
            finetune_best: true,
        }
    }
}

impl SearchConfig {
    pub fn params(&self, seed: u64) -> SearchParams {
        SearchParams {
            target: self.target,
            outputs: self.outputs,
            pool_capacity: self.pool_capacity,
            birth_rate: self.birth_rate,
            max_generations: self.max_generations,
            latency_weight: self.latency_weight,
            latency_ref: self.latency_ref,
            mutation_rate: self.mutation_rate,
            seed,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_coefficient: f64,
    pub dropout_rate: f64,
    pub finetune_learning_rate: f64,
    pub finetune_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            l2_coefficient: t.l2_coefficient,
            dropout_rate: t.dropout_rate,
            finetune_learning_rate: 0.001,
            finetune_epochs: 400,
        }
    }
}

impl TrainingConfig {
    pub fn pretrain(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2_coefficient: self.l2_coefficient,
            dropout_rate: self.dropout_rate,
            seed,
        }
    }

    pub fn finetune(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.finetune_learning_rate,
            epochs: self.finetune_epochs,
            ..self.pretrain(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds pre-training, search and fine-tuning; `GCOS_SEED` overrides it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub supernet: SupernetConfig,
    pub platform: Platform,
    pub search: SearchConfig,
    pub training: TrainingConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            supernet: SupernetConfig::default(),
            platform: Platform::default(),
            search: SearchConfig::default(),
            training: TrainingConfig::default(),
            output_dir: PathBuf::from("gcos-out"),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when absent), applies `section.key=value`
    /// overrides and the `GCOS_SEED` variable, then range-checks the result.
    pub fn load(path: Option<&Path>, overrides: &[String], env_seed: Option<String>) -> anyhow::Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let mut cfg: Self =
            serde_json::from_value(value).map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        if let Some(seed) = env_seed {
            cfg.seed = seed
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("GCOS_SEED `{seed}` is not an unsigned integer")))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> anyhow::Result<()> {
        let usage = |e: gcos_core::Error| UsageError(e.to_string());
        self.platform.check().map_err(usage)?;
        self.training.pretrain(self.seed).check().map_err(usage)?;
        self.training.finetune(self.seed).check().map_err(usage)?;
        self.search.params(self.seed).check().map_err(usage)?;
        if self.search.tile_options == 0 {
            bail!(UsageError("search.tile_options must be at least 1".into()));
        }
        if self.supernet.hidden_layers == 0 && !self.supernet.prediction_layer {
            bail!(UsageError("the supernet needs at least one layer".into()));
        }
        Ok(())
    }
}

/// `section.key=value`; the value is parsed as JSON and taken as a string
/// when that fails. Unknown keys are rejected.
fn apply_override(root: &mut Value, item: &str) -> anyhow::Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{item}` is not of the form section.key=value")))?;
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let defaults = serde_json::to_value(RunConfig::default())?;
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    let mut reference = Some(&defaults);
    for (depth, key) in keys.iter().enumerate() {
        reference = reference.and_then(|r| r.get(*key));
        // only keys the schema knows about (optional fields default to null)
        if reference.is_none() {
            bail!(UsageError(format!("unknown configuration key `{path}`")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| UsageError(format!("`{}` is not a section", keys[..depth].join("."))))?;
        if depth + 1 == keys.len() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    bail!(UsageError(format!("empty override key in `{item}`")))
}

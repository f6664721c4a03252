//! Run configuration: every hyper-parameter is a named JSON key with a
//! default; validation reports every problem at once.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::SemanticAxis;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Dtype;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_size: usize,
    /// Number of attention channels `L`.
    pub channels: usize,
    /// Disables the semantic attention.
    pub rv: bool,
    pub l2: f64,
    pub filter_sizes: Vec<usize>,
    pub filter_maps: usize,
    pub dropout: f64,
    /// Per-channel mask keep probabilities; `None` means 0.9 everywhere.
    pub keep_probs: Option<Vec<f64>>,
    /// Semantic attention width `d_a`; `None` means `hidden_size`.
    pub attention_dim: Option<usize>,
    pub semantic_axis: SemanticAxis,
    pub embedding_dim: usize,
    /// word2vec text file used to initialize matching rows.
    pub embeddings: Option<String>,
    pub freeze_embeddings: bool,
    /// Pretrained vectors are kept only for words seen at least this many
    /// times in the training data; rarer words are reinitialized.
    pub min_count: usize,
    pub oov_range: f64,
    /// Fixed sequence length; `None` means the longest training sentence.
    pub max_len: Option<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs on dev accuracy.
    pub patience: usize,
    /// Share of the training data held out for early stopping when no dev
    /// partition is given.
    pub dev_fraction: f64,
    /// Stop as soon as infer-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    pub k: usize,
    pub seed: u64,
    pub precision: Dtype,
    /// Label names; `None` means integer labels.
    pub labels: Option<Vec<String>>,
}

pub const DEFAULT_KEEP_PROB: f64 = 0.9;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 100,
            channels: 3,
            rv: false,
            l2: 0.0005,
            filter_sizes: vec![3, 4, 5],
            filter_maps: 100,
            dropout: 0.5,
            keep_probs: None,
            attention_dim: None,
            semantic_axis: SemanticAxis::Positions,
            embedding_dim: 300,
            embeddings: None,
            freeze_embeddings: false,
            min_count: 1,
            oov_range: 0.25,
            max_len: None,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 25,
            patience: 10,
            dev_fraction: 0.1,
            target_train_accuracy: None,
            k: 10,
            seed: 1,
            precision: Dtype::F64,
            labels: None,
        }
    }
}

fn take<T: DeserializeOwned>(key: &str, value: &Value, expected: &str, slot: &mut T, errors: &mut Vec<String>) {
    match serde_json::from_value::<T>(value.clone()) {
        Ok(v) => *slot = v,
        Err(_) => errors.push(format!("`{key}`: expected {expected}, got {value}")),
    }
}

impl TrainConfig {
    /// Parses a JSON document, listing every unknown key, type mismatch and
    /// range violation.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid JSON: {e}")))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let Value::Object(map) = value else {
            return Err(Error::config("configuration must be a JSON object"));
        };
        let mut cfg = TrainConfig::default();
        let mut errors = Vec::new();
        for (key, v) in map {
            let e = &mut errors;
            match key.as_str() {
                "hidden_size" => take(key, v, "a positive integer", &mut cfg.hidden_size, e),
                "channels" => take(key, v, "a positive integer", &mut cfg.channels, e),
                "rv" => take(key, v, "a boolean", &mut cfg.rv, e),
                "l2" => take(key, v, "a number", &mut cfg.l2, e),
                "filter_sizes" => take(key, v, "a list of positive integers", &mut cfg.filter_sizes, e),
                "filter_maps" => take(key, v, "a positive integer", &mut cfg.filter_maps, e),
                "dropout" => take(key, v, "a number", &mut cfg.dropout, e),
                "keep_probs" => take(key, v, "a list of numbers or null", &mut cfg.keep_probs, e),
                "attention_dim" => take(key, v, "a positive integer or null", &mut cfg.attention_dim, e),
                "semantic_axis" => take(key, v, "\"positions\" or \"dimensions\"", &mut cfg.semantic_axis, e),
                "embedding_dim" => take(key, v, "a positive integer", &mut cfg.embedding_dim, e),
                "embeddings" => take(key, v, "a path string or null", &mut cfg.embeddings, e),
                "freeze_embeddings" => take(key, v, "a boolean", &mut cfg.freeze_embeddings, e),
                "min_count" => take(key, v, "a non-negative integer", &mut cfg.min_count, e),
                "oov_range" => take(key, v, "a number", &mut cfg.oov_range, e),
                "max_len" => take(key, v, "a positive integer or null", &mut cfg.max_len, e),
                "optimizer" => take(key, v, "\"adam\" or \"sgd\"", &mut cfg.optimizer, e),
                "learning_rate" => take(key, v, "a number", &mut cfg.learning_rate, e),
                "batch_size" => take(key, v, "a positive integer", &mut cfg.batch_size, e),
                "epochs" => take(key, v, "a positive integer", &mut cfg.epochs, e),
                "patience" => take(key, v, "a non-negative integer", &mut cfg.patience, e),
                "dev_fraction" => take(key, v, "a number", &mut cfg.dev_fraction, e),
                "target_train_accuracy" => take(key, v, "a number or null", &mut cfg.target_train_accuracy, e),
                "k" => take(key, v, "an integer ≥ 2", &mut cfg.k, e),
                "seed" => take(key, v, "a non-negative integer", &mut cfg.seed, e),
                "precision" => take(key, v, "\"f64\" or \"f32\"", &mut cfg.precision, e),
                "labels" => take(key, v, "a list of strings or null", &mut cfg.labels, e),
                _ => errors.push(format!("unknown key `{key}`")),
            }
        }
        errors.extend(cfg.range_errors());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.range_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    fn range_errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        for (key, v) in [
            ("hidden_size", self.hidden_size),
            ("channels", self.channels),
            ("filter_maps", self.filter_maps),
            ("embedding_dim", self.embedding_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                errors.push(format!("`{key}` must be positive"));
            }
        }
        if self.attention_dim == Some(0) {
            errors.push("`attention_dim` must be positive".into());
        }
        if self.max_len == Some(0) {
            errors.push("`max_len` must be positive".into());
        }
        if self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
            errors.push("`filter_sizes` must be a non-empty list of positive integers".into());
        }
        let mut sorted = self.filter_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.filter_sizes.len() {
            errors.push("`filter_sizes` must not repeat a width".into());
        }
        if let (Some(len), Some(&w)) = (self.max_len, self.filter_sizes.iter().max()) {
            if w > len {
                errors.push(format!("filter width {w} exceeds `max_len` {len}"));
            }
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            errors.push(format!("`l2` must be a non-negative number, got {}", self.l2));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errors.push(format!("`dropout` must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(ps) = &self.keep_probs {
            if ps.len() != self.channels {
                errors.push(format!(
                    "`keep_probs` has {} entries for {} channels",
                    ps.len(),
                    self.channels
                ));
            }
            for &p in ps {
                if !(p > 0.0 && p <= 1.0) {
                    errors.push(format!("`keep_probs` entries must lie in (0, 1], got {p}"));
                }
            }
        }
        if !(self.oov_range >= 0.0 && self.oov_range.is_finite()) {
            errors.push(format!(
                "`oov_range` must be a non-negative number, got {}",
                self.oov_range
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errors.push(format!(
                "`learning_rate` must be a non-negative number, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            errors.push(format!("`dev_fraction` must lie in [0, 1), got {}", self.dev_fraction));
        }
        if let Some(t) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                errors.push(format!("`target_train_accuracy` must lie in [0, 1], got {t}"));
            }
        }
        if self.k < 2 {
            errors.push(format!("`k` must be at least 2, got {}", self.k));
        }
        if let Some(names) = &self.labels {
            if names.len() < 2 {
                errors.push("`labels` needs at least two names".into());
            }
            let mut seen = names.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != names.len() {
                errors.push("`labels` must not repeat a name".into());
            }
        }
        errors
    }

    pub fn keep_probs(&self) -> Vec<f64> {
        self.keep_probs
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_KEEP_PROB; self.channels])
    }

    /// Sequence length for a training set whose longest sentence has
    /// `longest` tokens: `max_len` if set, else `longest` raised to the widest
    /// filter.
    pub fn seq_len(&self, longest: usize) -> usize {
        self.max_len
            .unwrap_or_else(|| longest.max(self.filter_sizes.iter().copied().max().unwrap_or(1)))
    }

    pub fn model_config(&self, vocab_size: usize, seq_len: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embedding_dim: self.embedding_dim,
            hidden_size: self.hidden_size,
            keep_probs: self.keep_probs(),
            rv: self.rv,
            attention_dim: self.attention_dim.unwrap_or(self.hidden_size),
            semantic_axis: self.semantic_axis,
            filter_widths: self.filter_sizes.clone(),
            filter_maps: self.filter_maps,
            classes,
            seq_len,
            dropout: self.dropout,
            freeze_embedding: self.freeze_embeddings,
        }
    }
}

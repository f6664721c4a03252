//! k-fold cross-validation.

use serde::{Deserialize, Serialize};

use crate::data::{carve_dev, make_splits, Corpus, Fold, SplitMode};
use crate::error::Result;
use crate::tensor::Real;

use super::config::TrainConfig;
use super::trainer::{derive_seed, encode_examples, evaluate, prepare_model, train, EpochMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub variant: String,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds.
    pub std_accuracy: f64,
}

impl CvReport {
    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:>4}  {:>6}  {:>5}  {:>5}  {:>6}  {:>8}\n",
            "fold", "train", "dev", "test", "epoch", "accuracy"
        );
        for f in &self.folds {
            out.push_str(&format!(
                "{:>4}  {:>6}  {:>5}  {:>5}  {:>6}  {:>8.4}\n",
                f.fold, f.train_size, f.dev_size, f.test_size, f.best_epoch, f.test_accuracy
            ));
        }
        out.push_str(&format!(
            "{} mean {:.4} ± {:.4} over {} folds\n",
            self.variant, self.mean_accuracy, self.std_accuracy, self.k
        ));
        out
    }
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and tests once per fold. Vocabulary and sequence length come from
/// each training fold alone; a seeded `dev_fraction` slice of it drives
/// early stopping. `on_epoch` receives `(fold, metrics)`.
pub fn kfold_cv<T: Real>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    k: usize,
    mut on_epoch: impl FnMut(usize, &EpochMetrics),
) -> Result<CvReport> {
    cfg.validate()?;
    let plan = make_splits(corpus, SplitMode::CrossValidation { k }, cfg.seed)?;
    let mut results = Vec::with_capacity(k);
    let mut variant = String::new();
    for (f, fold) in plan.folds.into_iter().enumerate() {
        let mut fold: Fold = fold;
        carve_dev(&mut fold, cfg.dev_fraction, derive_seed(&[cfg.seed, f as u64, 0xd]));
        let mut vocab_source = fold.train.clone();
        vocab_source.extend(&fold.dev);
        vocab_source.sort_unstable();
        let prepared = prepare_model::<T>(cfg, corpus, &vocab_source)?;
        variant = prepared.model.config.variant_name();
        let seq_len = prepared.model.config.seq_len;
        let train_set = encode_examples(corpus, &fold.train, &prepared.vocab, seq_len)?;
        let dev_set = encode_examples(corpus, &fold.dev, &prepared.vocab, seq_len)?;
        let test_set = encode_examples(corpus, &fold.test, &prepared.vocab, seq_len)?;
        let outcome = train(prepared.model, &train_set, &dev_set, cfg, |m| on_epoch(f + 1, m))?;
        let test = evaluate(&outcome.model, &test_set)?;
        log::info!("fold {}/{k}: test accuracy {:.4}", f + 1, test.accuracy);
        results.push(FoldResult {
            fold: f + 1,
            train_size: fold.train.len(),
            dev_size: fold.dev.len(),
            test_size: fold.test.len(),
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
            test_accuracy: test.accuracy,
        });
    }
    let accs: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
    let (mean, std) = mean_and_std(&accs);
    Ok(CvReport {
        k,
        variant,
        folds: results,
        mean_accuracy: mean,
        std_accuracy: std,
    })
}

//! Whole-model gradient verification against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{Mode, SemanticAxis};
use crate::error::Result;
use crate::model::{Mahnn, ModelConfig};
use crate::params::{uniform, Bound};
use crate::tensor::{finite_diff_check_with_fault, Tensor};

/// Tolerance on the max relative error of every parameter group.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Central-difference step for whole-model checks.
pub const MODEL_GRADCHECK_EPS: f64 = 3e-4;

/// Options of [`check_model_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub freeze_embedding: bool,
    pub rv: bool,
    /// Injects a wrong tanh derivative into the analytic pass.
    pub corrupt_tanh_grad: bool,
    pub eps: f64,
    pub l2: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 7,
            freeze_embedding: false,
            rv: false,
            corrupt_tanh_grad: false,
            eps: MODEL_GRADCHECK_EPS,
            l2: 0.0005,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupError {
    pub group: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelGradCheck {
    pub groups: Vec<GroupError>,
    pub max_relative_error: f64,
    pub entries_checked: usize,
    pub kinks_skipped: usize,
    pub passed: bool,
    pub worst: Option<WorstParam>,
}

/// Entry with the largest relative error.
#[derive(Clone, Debug, Serialize)]
pub struct WorstParam {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Toy size: `n=5`, `h=4`, `d=6`, `L=2`, `c=3`.
pub fn toy_config(rv: bool, freeze_embedding: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 9,
        embedding_dim: 6,
        hidden_size: 4,
        keep_probs: vec![0.9, 0.7],
        rv,
        attention_dim: 4,
        semantic_axis: SemanticAxis::Positions,
        filter_widths: vec![2, 3],
        filter_maps: 3,
        classes: 3,
        seq_len: 5,
        dropout: 0.5,
        freeze_embedding,
    }
}

/// Runs the finite-difference oracle over every trainable parameter of the
/// toy model on one padded input, with masks and dropout frozen to a single
/// training-mode sample, with biases redrawn from `U[-0.1, 0.1]`. Frozen
/// groups are left out of the report.
pub fn check_model_gradients(opts: &GradCheckOptions) -> Result<ModelGradCheck> {
    check_config_gradients(toy_config(opts.rv, opts.freeze_embedding), opts)
}

pub fn check_config_gradients(config: ModelConfig, opts: &GradCheckOptions) -> Result<ModelGradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model: Mahnn<f64> = Mahnn::new(config, None, &mut rng)?;
    let biases: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.name.rsplit('.').next().is_some_and(|s| s.starts_with('b')))
        .map(|(id, p)| (id, p.value.shape().to_vec()))
        .collect();
    for (id, shape) in biases {
        model.store.set(id, uniform(&shape, 0.1, &mut rng))?;
    }
    let n = model.config.seq_len;
    let pads = 1.min(n - 1);
    let ids: Vec<usize> = (0..n)
        .map(|i| {
            if i < pads {
                0
            } else {
                rng.gen_range(1..model.config.vocab_size)
            }
        })
        .collect();
    let pad_mask: Vec<bool> = (0..n).map(|i| i < pads).collect();
    let label = rng.gen_range(0..model.config.classes);
    let noise = model.sample_noise(Mode::Train, &mut rng)?;

    let params: Vec<Tensor<f64>> = model.store.iter().map(|(_, p)| (*p.value).clone()).collect();
    let trainable: Vec<bool> = model.store.iter().map(|(_, p)| p.trainable).collect();
    let report = finite_diff_check_with_fault(&params, &trainable, opts.eps, opts.corrupt_tanh_grad, |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        model.objective(tape, &bound, &ids, &pad_mask, label, &noise, opts.l2)
    })?;

    let mut groups: Vec<GroupError> = Vec::new();
    for ((_, p), err) in model.store.iter().zip(&report.per_param) {
        let Some(err) = *err else { continue };
        match groups.iter_mut().find(|g| g.group == p.group) {
            Some(g) => g.max_relative_error = g.max_relative_error.max(err),
            None => groups.push(GroupError {
                group: p.group.clone(),
                max_relative_error: err,
                passed: true,
            }),
        }
    }
    for g in &mut groups {
        g.passed = g.max_relative_error <= GRADCHECK_TOLERANCE;
    }
    let names: Vec<&str> = model.store.iter().map(|(_, p)| p.name.as_str()).collect();
    Ok(ModelGradCheck {
        worst: report.worst.map(|w| WorstParam {
            name: names[w.param].to_string(),
            index: w.index,
            analytic: w.analytic,
            numeric: w.numeric,
        }),
        passed: groups.iter().all(|g| g.passed),
        max_relative_error: report.max_error,
        entries_checked: report.entries_checked,
        kinks_skipped: report.kinks_skipped,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_passes() {
        let report = check_model_gradients(&GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.groups.len(), 9);
    }

    #[test]
    fn corrupted_tanh_is_caught() {
        let opts = GradCheckOptions {
            corrupt_tanh_grad: true,
            ..Default::default()
        };
        assert!(!check_model_gradients(&opts).unwrap().passed);
    }

    #[test]
    fn frozen_embedding_leaves_the_report() {
        let opts = GradCheckOptions {
            freeze_embedding: true,
            ..Default::default()
        };
        let report = check_model_gradients(&opts).unwrap();
        assert!(report.groups.iter().all(|g| g.group != "embedding"));
        assert_eq!(report.groups.len(), 8);
    }
}

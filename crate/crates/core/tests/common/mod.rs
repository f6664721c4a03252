#![allow(dead_code)]

pub mod naive;

use mahnn::attention::SemanticAxis;
use mahnn::model::{Mahnn, ModelConfig};
use mahnn::params::uniform;
use mahnn::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random small architecture: `n ≤ 6`, `h ≤ 3`, `L ≤ 3`.
pub fn random_config(rng: &mut impl Rng, rv: bool) -> ModelConfig {
    let n = rng.gen_range(2..=6);
    let channels = rng.gen_range(1..=3);
    let max_width = rng.gen_range(1..=n.min(3));
    ModelConfig {
        vocab_size: 8,
        embedding_dim: rng.gen_range(1..=4),
        hidden_size: rng.gen_range(1..=3),
        keep_probs: (0..channels).map(|_| rng.gen_range(0.3..=1.0)).collect(),
        rv,
        attention_dim: rng.gen_range(1..=3),
        semantic_axis: if rng.gen_bool(0.5) {
            SemanticAxis::Positions
        } else {
            SemanticAxis::Dimensions
        },
        filter_widths: (1..=max_width).collect(),
        filter_maps: rng.gen_range(1..=3),
        classes: rng.gen_range(2..=4),
        seq_len: n,
        dropout: 0.25,
        freeze_embedding: false,
    }
}

/// Model whose every parameter, biases included, is drawn from `U[-scale, scale]`.
pub fn random_model(config: ModelConfig, scale: f64, seed: u64) -> Mahnn<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mahnn::new(config, None, &mut rng).unwrap();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let shape = model.store.get(id).shape().to_vec();
        model.store.set(id, uniform(&shape, scale, &mut rng)).unwrap();
    }
    model
}

/// Random ids with `pads` leading pad positions.
pub fn random_input(rng: &mut impl Rng, n: usize, vocab: usize, pads: usize) -> (Vec<usize>, Vec<bool>) {
    let ids = (0..n)
        .map(|i| if i < pads { 0 } else { rng.gen_range(2..vocab) })
        .collect();
    let pad = (0..n).map(|i| i < pads).collect();
    (ids, pad)
}

/// Small, fast training setup for the keyword corpus.
pub fn small_train_config() -> TrainConfig {
    TrainConfig {
        hidden_size: 4,
        channels: 2,
        filter_sizes: vec![2, 3],
        filter_maps: 4,
        embedding_dim: 8,
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

//! Epoch loop, evaluation and model preparation from a corpus.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::Mode;
use crate::data::{carve_dev, make_splits, Corpus, Fold, SplitMode};
use crate::embeddings::{encode_and_pad, init_oov, load_word2vec_text, PartialEmbeddings, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{argmax, Mahnn};
use crate::tensor::{Real, Tensor};

use super::config::TrainConfig;
use super::optim::Optimizer;

/// Examples summed sequentially before partial sums are combined; fixed so
/// the floating-point summation order never depends on the thread count.
const GRADIENT_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
    pub label: usize,
}

/// Deterministic 64-bit seed from a list of integers (splitmix64 chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x6a09_e667_f3bc_c908;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Vocabulary over the given examples in first-occurrence order.
pub fn build_vocabulary(corpus: &Corpus, indices: &[usize]) -> Vocabulary {
    Vocabulary::from_sentences(indices.iter().map(|&i| &corpus.examples[i].tokens))
}

pub fn encode_examples(
    corpus: &Corpus,
    indices: &[usize],
    vocab: &Vocabulary,
    seq_len: usize,
) -> Result<Vec<EncodedExample>> {
    indices
        .iter()
        .map(|&i| {
            let e = &corpus.examples[i];
            let enc = encode_and_pad(&e.tokens, seq_len, vocab)?;
            Ok(EncodedExample {
                ids: enc.ids,
                pad_mask: enc.pad_mask,
                label: e.label,
            })
        })
        .collect()
}

/// Embedding table for `vocab`: pretrained rows where available (and the
/// word is frequent enough), `U[-range, range]` elsewhere.
pub fn embedding_table<T: Real>(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    counts: &HashMap<&str, usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, usize)> {
    let mut partial = match &cfg.embeddings {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::config(format!("cannot open embeddings `{path}`: {e}")))?;
            load_word2vec_text(BufReader::new(file), vocab, cfg.embedding_dim)?
        }
        None => PartialEmbeddings::empty(vocab.len(), cfg.embedding_dim),
    };
    let rare: Vec<usize> = (0..vocab.len())
        .filter(|&id| {
            let tok = vocab.token(id).unwrap_or_default();
            counts.get(tok).copied().unwrap_or(0) < cfg.min_count
        })
        .collect();
    partial.forget(rare);
    let matched = partial.matched();
    Ok((init_oov(&partial, rng, cfg.oov_range).matrix, matched))
}

/// Everything derived from the training indices of a corpus.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub vocab: Vocabulary,
    pub model: Mahnn<T>,
    pub pretrained_matched: usize,
}

/// Builds vocabulary, sequence length, embedding table and a freshly
/// initialized model from the examples at `train`.
pub fn prepare_model<T: Real>(cfg: &TrainConfig, corpus: &Corpus, train: &[usize]) -> Result<Prepared<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("the training set is empty"));
    }
    let vocab = build_vocabulary(corpus, train);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &i in train {
        for t in &corpus.examples[i].tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let seq_len = cfg.seq_len(corpus.max_length(train));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (table, matched) = embedding_table(cfg, &vocab, &counts, &mut rng)?;
    let model_cfg = cfg.model_config(vocab.len(), seq_len, corpus.classes());
    let model = Mahnn::new(model_cfg, Some(table), &mut rng)?;
    Ok(Prepared {
        vocab,
        model,
        pretrained_matched: matched,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross-entropy without the L2 term.
    pub loss: f64,
    pub predictions: Vec<usize>,
}

/// Infer-mode accuracy (argmax ties to the lowest class) and mean loss.
pub fn evaluate<T: Real>(model: &Mahnn<T>, examples: &[EncodedExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Ok(Evaluation {
            accuracy: 0.0,
            loss: 0.0,
            predictions: Vec::new(),
        });
    }
    let outputs: Vec<(usize, f64)> = examples
        .par_iter()
        .map(|e| {
            let y = model.predict(&e.ids, &e.pad_mask)?;
            let p = y.get(e.label).map(|p| p.as_f64()).unwrap_or(0.0);
            Ok((argmax(&y), -p.max(crate::classifier::PROB_FLOOR).ln()))
        })
        .collect::<Result<_>>()?;
    let correct = outputs.iter().zip(examples).filter(|((p, _), e)| *p == e.label).count();
    let loss = outputs.iter().map(|(_, l)| l).sum::<f64>() / examples.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / examples.len() as f64,
        loss,
        predictions: outputs.into_iter().map(|(p, _)| p).collect(),
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training objective under sampled masks and dropout.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Infer-mode mean cross-entropy on the training set.
    pub train_eval_loss: f64,
    pub dev_accuracy: Option<f64>,
    pub dev_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters of the best dev epoch, or of the last epoch without dev data.
    pub model: Mahnn<T>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

type Grads<T> = Vec<Option<Tensor<T>>>;

fn add_into<T: Real>(acc: &mut Grads<T>, g: Grads<T>) -> Result<()> {
    for (a, g) in acc.iter_mut().zip(g) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => a.add_assign(&g)?,
            (None, Some(g)) => *a = Some(g),
            (_, None) => {}
        }
    }
    Ok(())
}

fn batch_gradients<T: Real>(
    model: &Mahnn<T>,
    batch: &[(usize, &EncodedExample)],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Grads<T>)> {
    let partials: Vec<(f64, Grads<T>)> = batch
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut acc: Grads<T> = vec![None; model.store.len()];
            for &(index, e) in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, index as u64]));
                let noise = model.sample_noise(Mode::Train, &mut rng)?;
                let (l, g) = model.example_gradients(&e.ids, &e.pad_mask, e.label, &noise, 0.0)?;
                loss += l.as_f64();
                add_into(&mut acc, g)?;
            }
            Ok((loss, acc))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut total: Grads<T> = vec![None; model.store.len()];
    for (l, g) in partials {
        loss += l;
        add_into(&mut total, g)?;
    }
    let scale = T::lit(1.0 / batch.len() as f64);
    for g in total.iter_mut().flatten() {
        for x in g.data_mut() {
            *x = *x * scale;
        }
    }
    // L2 term, once per batch
    if cfg.l2 > 0.0 {
        let lambda = T::lit(cfg.l2);
        let two_lambda = T::lit(2.0 * cfg.l2);
        let mut penalty = T::zero();
        for ((_, p), g) in model.store.iter().zip(total.iter_mut()) {
            if !p.regularized {
                continue;
            }
            penalty = penalty + p.value.data().iter().fold(T::zero(), |acc, &w| acc + w * w);
            if !p.trainable {
                continue;
            }
            let g = g.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (gi, &w) in g.data_mut().iter_mut().zip(p.value.data()) {
                *gi = *gi + two_lambda * w;
            }
        }
        loss += (lambda * penalty).as_f64() * batch.len() as f64;
    }
    Ok((loss, total))
}

/// Mini-batch training with per-epoch seeded shuffling, early stopping on
/// dev accuracy and best-dev parameter retention. `on_epoch` sees every
/// metrics record as soon as it is produced.
pub fn train<T: Real>(
    mut model: Mahnn<T>,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("the training set is empty"));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::params::ParamStore<T>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
            cfg.seed,
            epoch as u64,
            u64::MAX,
        ])));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<(usize, &EncodedExample)> = batch.iter().map(|&i| (i, &train[i])).collect();
            let (loss, grads) = batch_gradients(&model, &items, cfg, epoch)?;
            loss_sum += loss;
            optimizer.update(&mut model.store, &grads)?;
        }
        let train_eval = evaluate(&model, train)?;
        let dev_eval = if dev.is_empty() {
            None
        } else {
            Some(evaluate(&model, dev)?)
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: train_eval.accuracy,
            train_eval_loss: train_eval.loss,
            dev_accuracy: dev_eval.as_ref().map(|d| d.accuracy),
            dev_loss: dev_eval.as_ref().map(|d| d.loss),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4}{}",
            metrics.train_loss,
            metrics.train_accuracy,
            metrics
                .dev_accuracy
                .map(|a| format!(" dev acc {a:.4}"))
                .unwrap_or_default()
        );
        on_epoch(&metrics);
        history.push(metrics);

        if let Some(d) = &dev_eval {
            if best.as_ref().is_none_or(|(acc, _, _)| d.accuracy > *acc) {
                best = Some((d.accuracy, epoch, model.store.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let target_hit = cfg.target_train_accuracy.is_some_and(|t| train_eval.accuracy >= t);
        let patience_out = dev_eval.is_some() && cfg.patience > 0 && stale >= cfg.patience;
        if (target_hit || patience_out) && epoch < cfg.epochs {
            stopped_early = true;
            break;
        }
    }

    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => history.len(),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

/// Result of training on a file-given partition.
#[derive(Clone, Debug)]
pub struct FixedRun<T> {
    pub vocab: Vocabulary,
    pub fold: Fold,
    pub pretrained_matched: usize,
    pub outcome: TrainOutcome<T>,
    /// Present when the corpus has a test partition.
    pub test: Option<Evaluation>,
}

/// Trains on the `Train` part of `corpus`, stops early on its `Dev` part (or
/// a seeded `dev_fraction` slice of train when there is none) and evaluates
/// on its `Test` part.
pub fn train_fixed<T: Real>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FixedRun<T>> {
    cfg.validate()?;
    let mut fold = make_splits(corpus, SplitMode::FixedTest, cfg.seed)?
        .folds
        .pop()
        .expect("one fold");
    if fold.dev.is_empty() {
        carve_dev(&mut fold, cfg.dev_fraction, derive_seed(&[cfg.seed, 0xd]));
    }
    let mut vocab_source = fold.train.clone();
    vocab_source.extend(&fold.dev);
    vocab_source.sort_unstable();
    let prepared = prepare_model::<T>(cfg, corpus, &vocab_source)?;
    let seq_len = prepared.model.config.seq_len;
    let train_set = encode_examples(corpus, &fold.train, &prepared.vocab, seq_len)?;
    let dev_set = encode_examples(corpus, &fold.dev, &prepared.vocab, seq_len)?;
    let test_set = encode_examples(corpus, &fold.test, &prepared.vocab, seq_len)?;
    let outcome = train(prepared.model, &train_set, &dev_set, cfg, on_epoch)?;
    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &test_set)?)
    };
    Ok(FixedRun {
        vocab: prepared.vocab,
        fold,
        pretrained_matched: prepared.pretrained_matched,
        outcome,
        test,
    })
}

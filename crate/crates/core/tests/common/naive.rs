//! Scalar reference for the whole forward pass, one loop per index.

#![allow(clippy::needless_range_loop)]

use mahnn::attention::{Mode, SemanticAxis, PAD_PENALTY};
use mahnn::model::{Mahnn, ModelConfig, Noise};
use mahnn::params::uniform;
use mahnn::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub struct Naive<'a> {
    pub model: &'a Mahnn<f64>,
}

impl Naive<'_> {
    fn p(&self, name: &str) -> &Tensor<f64> {
        let id = self
            .model
            .store
            .find(name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        self.model.store.get(id)
    }

    fn at(&self, name: &str, i: usize, j: usize) -> f64 {
        let t = self.p(name);
        let cols = t.shape()[1];
        t.data()[i * cols + j]
    }

    fn lstm(&self, prefix: &str, x: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
        let h = self.model.config.hidden_size;
        let d = self.model.config.embedding_dim;
        let n = x.len();
        let mut hs = vec![vec![0.0; h]; n];
        let mut hp = vec![0.0; h];
        let mut cp = vec![0.0; h];
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let gate = |g: &str| -> Vec<f64> {
                let w = format!("{prefix}.w_{g}");
                let b = self.p(&format!("{prefix}.b_{g}"));
                (0..h)
                    .map(|r| {
                        let mut s = b.data()[r];
                        for k in 0..h {
                            s += self.at(&w, r, k) * hp[k];
                        }
                        for k in 0..d {
                            s += self.at(&w, r, h + k) * x[t][k];
                        }
                        s
                    })
                    .collect()
            };
            let (f, i, o, c) = (gate("f"), gate("i"), gate("o"), gate("c"));
            for r in 0..h {
                cp[r] = sigmoid(f[r]) * cp[r] + sigmoid(i[r]) * c[r].tanh();
            }
            for r in 0..h {
                hp[r] = sigmoid(o[r]) * cp[r].tanh();
            }
            hs[t] = hp.clone();
        }
        hs
    }

    /// Returns `(H, a_l, Ā_l, r, y)`.
    #[allow(clippy::type_complexity)]
    pub fn forward(
        &self,
        ids: &[usize],
        pad: &[bool],
        noise: &Noise<f64>,
    ) -> (
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        Vec<Option<Vec<Vec<f64>>>>,
        Vec<f64>,
        Vec<f64>,
    ) {
        let cfg = &self.model.config;
        let (n, d, w2) = (ids.len(), cfg.embedding_dim, 2 * cfg.hidden_size);
        let mut x = vec![vec![0.0; d]; n];
        for i in 0..n {
            for k in 0..d {
                x[i][k] = self.at("embedding", ids[i], k);
                if let Some(m) = &noise.embedding {
                    x[i][k] *= m.data()[i * d + k];
                }
            }
        }
        let f = self.lstm("lstm_fwd", &x, false);
        let b = self.lstm("lstm_bwd", &x, true);
        let states: Vec<Vec<f64>> = (0..n).map(|i| f[i].iter().chain(&b[i]).copied().collect()).collect();

        let mut syn = Vec::new();
        let mut sem = Vec::new();
        let mut channels = Vec::new();
        for l in 1..=cfg.channels() {
            let w = format!("syn.{l}.w");
            let bias = self.p(&format!("syn.{l}.b")).data()[0];
            let mask = &noise.masks.masks[l - 1];
            let mut scores = vec![0.0; n];
            for j in 0..n {
                for i in 0..n {
                    let mut s = bias;
                    for p in 0..w2 {
                        for q in 0..w2 {
                            s += states[i][p] * self.at(&w, p, q) * states[j][q];
                        }
                    }
                    scores[j] += s.tanh() * mask.data()[i * n + j];
                }
                if pad[j] {
                    scores[j] += PAD_PENALTY;
                }
            }
            let a = softmax(&scores);

            let semantic = (!cfg.rv).then(|| {
                let da = cfg.attention_dim;
                let (w1, w2n) = (format!("sem.{l}.w1"), format!("sem.{l}.w2"));
                let sb = self.p(&format!("sem.{l}.b"));
                let mut raw = vec![vec![0.0; w2]; n];
                for i in 0..n {
                    let gate: Vec<f64> = (0..da)
                        .map(|r| {
                            let mut s = sb.data()[r];
                            for k in 0..w2 {
                                s += self.at(&w2n, r, k) * states[i][k];
                            }
                            sigmoid(s)
                        })
                        .collect();
                    for k in 0..w2 {
                        raw[i][k] = (0..da).map(|r| gate[r] * self.at(&w1, r, k)).sum();
                    }
                }
                match cfg.semantic_axis {
                    SemanticAxis::Positions => {
                        let mut out = vec![vec![0.0; w2]; n];
                        for k in 0..w2 {
                            let col = softmax(&(0..n).map(|i| raw[i][k]).collect::<Vec<_>>());
                            for i in 0..n {
                                out[i][k] = col[i];
                            }
                        }
                        out
                    }
                    SemanticAxis::Dimensions => raw.iter().map(|r| softmax(r)).collect(),
                }
            });

            let mut c = vec![vec![0.0; w2]; n];
            for i in 0..n {
                for k in 0..w2 {
                    let s = semantic.as_ref().map_or(1.0, |s| s[i][k]);
                    c[i][k] = a[i] * s * states[i][k];
                    if let Some(m) = &noise.channels[l - 1] {
                        c[i][k] *= m.data()[i * w2 + k];
                    }
                }
            }
            syn.push(a);
            sem.push(semantic);
            channels.push(c);
        }

        let mut r = Vec::new();
        for &width in &cfg.filter_widths {
            let w = format!("conv.{width}.w");
            let bias = self.p(&format!("conv.{width}.b"));
            for m in 0..cfg.filter_maps {
                let mut best = f64::NEG_INFINITY;
                for t in 0..=n - width {
                    let mut z = bias.data()[m];
                    for (ci, c) in channels.iter().enumerate() {
                        for k in 0..width {
                            for j in 0..w2 {
                                z += c[t + k][j] * self.at(&w, ci * width * w2 + k * w2 + j, m);
                            }
                        }
                    }
                    best = best.max(z.max(0.0));
                }
                r.push(best);
            }
        }
        if let Some(m) = &noise.pooled {
            for (v, s) in r.iter_mut().zip(m.data()) {
                *v *= s;
            }
        }
        let hb = self.p("head.b");
        let logits: Vec<f64> = (0..cfg.classes)
            .map(|c| hb.data()[c] + (0..r.len()).map(|s| self.at("head.w", c, s) * r[s]).sum::<f64>())
            .collect();
        (states, syn, sem, r, softmax(&logits))
    }
}

fn close(a: &[f64], b: &[f64]) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= TOLERANCE, "{x} vs {y}");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Case {
    pub config: ModelConfig,
    pub seed: u64,
    pub pads: usize,
    pub mode: Mode,
}

pub fn cases() -> impl Strategy<Value = Case> {
    (2usize..=4, 1usize..=2, 1usize..=3, 1usize..=3, 1usize..=3)
        .prop_flat_map(|(n, h, d, channels, da)| {
            (
                Just((n, h, d, da)),
                proptest::collection::vec(0.3f64..=1.0, channels),
                proptest::sample::subsequence((1..=n).collect::<Vec<_>>(), 1..=n),
                (any::<bool>(), any::<bool>(), 1usize..=2, 2usize..=3),
                (0..n, any::<u64>(), any::<bool>()),
            )
        })
        .prop_map(
            |((n, h, d, da), keep_probs, widths, (rv, positions, maps, classes), (pads, seed, train))| Case {
                config: ModelConfig {
                    vocab_size: 6,
                    embedding_dim: d,
                    hidden_size: h,
                    keep_probs,
                    rv,
                    attention_dim: da,
                    semantic_axis: if positions {
                        SemanticAxis::Positions
                    } else {
                        SemanticAxis::Dimensions
                    },
                    filter_widths: widths,
                    filter_maps: maps,
                    classes,
                    seq_len: n,
                    dropout: 0.3,
                    freeze_embedding: false,
                },
                seed,
                pads,
                mode: if train { Mode::Train } else { Mode::Infer },
            },
        )
}

/// Runs one case through both implementations.
pub fn check(case: &Case) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let mut model: Mahnn<f64> = Mahnn::new(case.config.clone(), None, &mut rng).unwrap();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let shape = model.store.get(id).shape().to_vec();
        model.store.set(id, uniform(&shape, 0.8, &mut rng)).unwrap();
    }
    let n = case.config.seq_len;
    let tokens: Vec<usize> = (0..n)
        .map(|i| {
            if i < case.pads {
                0
            } else {
                1 + (i * 7 + case.seed as usize) % 5
            }
        })
        .collect();
    let pad: Vec<bool> = (0..n).map(|i| i < case.pads).collect();
    let noise = model.sample_noise(case.mode, &mut rng).unwrap();

    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, &tokens, &pad, &noise).unwrap();
    let (states, syn, sem, r, y) = Naive { model: &model }.forward(&tokens, &pad, &noise);

    close(tape.value(fwd.states).data(), &states.concat())?;
    for l in 0..case.config.channels() {
        close(tape.value(fwd.attention.syntactic[l]).data(), &syn[l])?;
        match (fwd.attention.semantic[l], &sem[l]) {
            (Some(v), Some(s)) => close(tape.value(v).data(), &s.concat())?,
            (None, None) => {}
            _ => prop_assert!(false, "semantic presence differs"),
        }
    }
    close(tape.value(fwd.pooled).data(), &r)?;
    close(tape.value(fwd.probs).data(), &y)?;
    Ok(())
}

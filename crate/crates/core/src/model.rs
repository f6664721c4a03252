//! The assembled classifier: embedding → Bi-LSTM → attention channels →
//! multichannel ConvNet → softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    build_channels, AttentionLayer, ChannelMasks, ChannelSet, Mode, SemanticAxis, SemanticChannelParams,
    SyntacticChannelParams,
};
use crate::classifier::{classify, conv_maxpool, loss, ConvFilterBank, SoftmaxHead};
use crate::encoder::{embed, encode_embedded, LstmParams};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

/// Architecture hyper-parameters, fixed once the model is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    /// Keep probability `p_l` of each channel mask; its length is `L`.
    pub keep_probs: Vec<f64>,
    /// Drops the semantic attention (`Ā_l = 1`).
    pub rv: bool,
    pub attention_dim: usize,
    pub semantic_axis: SemanticAxis,
    pub filter_widths: Vec<usize>,
    pub filter_maps: usize,
    pub classes: usize,
    pub seq_len: usize,
    /// Dropout rate at the embedding output, the channels and `r`.
    pub dropout: f64,
    pub freeze_embedding: bool,
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.keep_probs.len()
    }

    /// `MahNN-L`, or `MahNN-rv` without semantic attention.
    pub fn variant_name(&self) -> String {
        if self.rv {
            "MahNN-rv".to_string()
        } else {
            format!("MahNN-{}", self.channels())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("hidden_size", self.hidden_size),
            ("attention_dim", self.attention_dim),
            ("filter_maps", self.filter_maps),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        }
        if self.keep_probs.is_empty() {
            errors.push("at least one channel is required".into());
        }
        for (l, &p) in self.keep_probs.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                errors.push(format!(
                    "keep probability of channel {} must lie in (0, 1], got {p}",
                    l + 1
                ));
            }
        }
        if self.classes < 2 {
            errors.push(format!("at least two classes are required, got {}", self.classes));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            errors.push("filter widths must be a non-empty list of positive integers".into());
        }
        if let Some(&w) = self.filter_widths.iter().max() {
            if w > self.seq_len {
                errors.push(format!("filter width {w} exceeds sequence length {}", self.seq_len));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errors.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

/// Random quantities of one forward pass: channel masks and dropout masks.
/// `None` dropout entries mean identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise<T> {
    pub masks: ChannelMasks<T>,
    pub embedding: Option<Tensor<T>>,
    pub channels: Vec<Option<Tensor<T>>>,
    pub pooled: Option<Tensor<T>>,
}

fn dropout_mask<T: Real, R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Option<Tensor<T>> {
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = T::lit(1.0 / keep);
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| if rng.gen_bool(keep) { scale } else { T::zero() })
        .collect();
    Some(Tensor::new(shape.to_vec(), data).expect("positive shape"))
}

fn apply_dropout<T: Real>(tape: &mut Tape<T>, x: Var, mask: &Option<Tensor<T>>) -> Result<Var> {
    match mask {
        Some(m) => {
            let m = tape.constant(m.clone());
            tape.mul(x, m)
        }
        None => Ok(x),
    }
}

/// Syntactic weights `a_l` and, unless disabled, semantic weights `Ā_l`.
pub type ChannelWeights<T> = (Tensor<T>, Option<Tensor<T>>);

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub states: Var,
    pub attention: ChannelSet,
    pub pooled: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct Mahnn<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub attention: AttentionLayer,
    pub filters: ConvFilterBank,
    pub head: SoftmaxHead,
}

impl<T: Real> Mahnn<T> {
    /// Builds a model with freshly initialized parameters. `embedding`
    /// overrides the random `U[-0.25, 0.25]` table when given.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, embedding: Option<Tensor<T>>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (v, d, h) = (config.vocab_size, config.embedding_dim, config.hidden_size);
        let table = match embedding {
            Some(t) if t.shape() != [v, d] => return Err(Error::shape("embedding table", t.shape(), &[v, d])),
            Some(t) => t,
            None => uniform(&[v, d], 0.25, rng),
        };
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", "embedding", table, false);
        store.set_trainable(embedding, !config.freeze_embedding);
        let lstm_fwd = LstmParams::register(&mut store, "lstm_fwd", h, d, rng);
        let lstm_bwd = LstmParams::register(&mut store, "lstm_bwd", h, d, rng);
        let width = 2 * h;
        let syntactic = config
            .keep_probs
            .iter()
            .enumerate()
            .map(|(l, &p)| SyntacticChannelParams::register(&mut store, l + 1, width, p, rng))
            .collect::<Result<Vec<_>>>()?;
        let semantic = (!config.rv).then(|| {
            (0..config.channels())
                .map(|l| SemanticChannelParams::register(&mut store, l + 1, width, config.attention_dim, rng))
                .collect()
        });
        let attention = AttentionLayer {
            syntactic,
            semantic,
            axis: config.semantic_axis,
        };
        let filters = ConvFilterBank::register(
            &mut store,
            &config.filter_widths,
            config.filter_maps,
            config.channels(),
            width,
            rng,
        )?;
        let head = SoftmaxHead::register(&mut store, filters.output_dim(), config.classes, rng)?;
        Ok(Mahnn {
            config,
            store,
            embedding,
            lstm_fwd,
            lstm_bwd,
            attention,
            filters,
            head,
        })
    }

    /// Draws masks for training, or their expectations for inference.
    pub fn sample_noise<R: Rng + ?Sized>(&self, mode: Mode, rng: &mut R) -> Result<Noise<T>> {
        let n = self.config.seq_len;
        let masks = ChannelMasks::sample(&self.attention, n, mode, rng)?;
        let rate = match mode {
            Mode::Train => self.config.dropout,
            Mode::Infer => 0.0,
        };
        let width = 2 * self.config.hidden_size;
        Ok(Noise {
            masks,
            embedding: dropout_mask(&[n, self.config.embedding_dim], rate, rng),
            channels: (0..self.config.channels())
                .map(|_| dropout_mask(&[n, width], rate, rng))
                .collect(),
            pooled: dropout_mask(&[1, self.filters.output_dim()], rate, rng),
        })
    }

    /// Inference noise: expectation masks, no dropout.
    pub fn expected_noise(&self) -> Noise<T> {
        // no randomness is consumed in infer mode
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.sample_noise(Mode::Infer, &mut rng).expect("validated config")
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ids: &[usize],
        pad_mask: &[bool],
        noise: &Noise<T>,
    ) -> Result<Forward> {
        if ids.len() != self.config.seq_len || pad_mask.len() != ids.len() {
            return Err(Error::shape(
                "model input",
                &[ids.len(), pad_mask.len()],
                &[self.config.seq_len; 2],
            ));
        }
        let x = embed(tape, bound[self.embedding], ids)?;
        let x = apply_dropout(tape, x, &noise.embedding)?;
        let states = encode_embedded(tape, bound, x, &self.lstm_fwd, &self.lstm_bwd)?;
        let attention = build_channels(tape, bound, states, pad_mask, &self.attention, &noise.masks)?;
        let channels = attention
            .channels
            .iter()
            .zip(&noise.channels)
            .map(|(&c, m)| apply_dropout(tape, c, m))
            .collect::<Result<Vec<_>>>()?;
        let pooled = conv_maxpool(tape, bound, &channels, &self.filters)?;
        let pooled = apply_dropout(tape, pooled, &noise.pooled)?;
        let probs = classify(tape, bound, pooled, &self.head)?;
        Ok(Forward {
            states,
            attention,
            pooled,
            probs,
        })
    }

    /// Regularized cross-entropy of one example.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ids: &[usize],
        pad_mask: &[bool],
        label: usize,
        noise: &Noise<T>,
        l2: f64,
    ) -> Result<Var> {
        let fwd = self.forward(tape, bound, ids, pad_mask, noise)?;
        loss(tape, bound, &self.store, fwd.probs, label, l2)
    }

    /// Loss value and per-parameter gradients (`None` for frozen ones).
    pub fn example_gradients(
        &self,
        ids: &[usize],
        pad_mask: &[bool],
        label: usize,
        noise: &Noise<T>,
        l2: f64,
    ) -> Result<(T, Vec<Option<Tensor<T>>>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let objective = self.objective(&mut tape, &bound, ids, pad_mask, label, noise, l2)?;
        let grads: Gradients<T> = tape.backward(objective)?;
        let value = tape.value(objective).item()?;
        Ok((value, bound.collect_owned(grads, &self.store)))
    }

    /// Class probabilities in inference mode.
    pub fn predict(&self, ids: &[usize], pad_mask: &[bool]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let fwd = self.forward(&mut tape, &bound, ids, pad_mask, &self.expected_noise())?;
        Ok(tape.value(fwd.probs).data().to_vec())
    }

    /// Inference-mode attention weights: per channel the syntactic weights
    /// `a_l` and, unless disabled, the semantic weights `Ā_l`.
    pub fn attention_weights(&self, ids: &[usize], pad_mask: &[bool]) -> Result<Vec<ChannelWeights<T>>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let fwd = self.forward(&mut tape, &bound, ids, pad_mask, &self.expected_noise())?;
        Ok(fwd
            .attention
            .syntactic
            .iter()
            .zip(&fwd.attention.semantic)
            .map(|(&a, s)| (tape.value(a).clone(), s.map(|s| tape.value(s).clone())))
            .collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

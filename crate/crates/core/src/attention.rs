//! Hierarchical multi-granularity attention.
//!
//! Each channel `l` reweights the Bi-LSTM annotations `H ∈ R^{n×2h}` twice:
//!
//! * syntactic (per token): `M_l = tanh(H·W_l·Hᵀ + b_l)`, perturbed by a
//!   Bernoulli mask `V_l`, column-summed, pushed to `-99999` at pad
//!   positions, and normalized with a softmax into `a_l ∈ R^n`;
//! * semantic (per hidden dimension): `Ā_l = softmax_over_positions(
//!   σ(H·W_l2ᵀ + b_l)·W_l1)`.
//!
//! The channel is `C_l[i] = a_l[i] · (Ā_l[i] ⊙ H[i])`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Score added to padded positions before the syntactic softmax.
pub const PAD_PENALTY: f64 = -99999.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sampled channel masks and active dropout.
    Train,
    /// Masks replaced by their expectation, dropout disabled.
    Infer,
}

/// Normalization axis of the semantic softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticAxis {
    /// Each hidden dimension is normalized across positions.
    #[default]
    Positions,
    /// Each position is normalized across its hidden dimensions.
    Dimensions,
}

#[derive(Clone, Debug)]
pub struct SyntacticChannelParams {
    /// `W_l ∈ R^{2h×2h}`.
    pub w: ParamId,
    /// Scalar bias `b_l`, stored with shape `[1]`.
    pub b: ParamId,
    /// Mask keep-probability `p_l ∈ (0, 1]`.
    pub keep_prob: f64,
}

impl SyntacticChannelParams {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channel: usize,
        width: usize,
        keep_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        let group = format!("syn.{channel}");
        Ok(SyntacticChannelParams {
            w: store.add(
                &format!("{group}.w"),
                &group,
                glorot(&[width, width], width, width, rng),
                true,
            ),
            b: store.add(&format!("{group}.b"), &group, Tensor::zeros(&[1]), false),
            keep_prob,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SemanticChannelParams {
    /// `W_l1 ∈ R^{d_a×2h}`.
    pub w1: ParamId,
    /// `W_l2 ∈ R^{d_a×2h}`.
    pub w2: ParamId,
    /// `b_l ∈ R^{d_a}`.
    pub b: ParamId,
}

impl SemanticChannelParams {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        channel: usize,
        width: usize,
        attention_dim: usize,
        rng: &mut R,
    ) -> Self {
        let group = format!("sem.{channel}");
        let shape = [attention_dim, width];
        SemanticChannelParams {
            w1: store.add(
                &format!("{group}.w1"),
                &group,
                glorot(&shape, attention_dim, width, rng),
                true,
            ),
            w2: store.add(
                &format!("{group}.w2"),
                &group,
                glorot(&shape, width, attention_dim, rng),
                true,
            ),
            b: store.add(&format!("{group}.b"), &group, Tensor::zeros(&[attention_dim]), false),
        }
    }
}

/// Parameters of all `L` channels. `semantic` is `None` for the variant
/// that skips the semantic attention.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub syntactic: Vec<SyntacticChannelParams>,
    pub semantic: Option<Vec<SemanticChannelParams>>,
    pub axis: SemanticAxis,
}

impl AttentionLayer {
    pub fn channels(&self) -> usize {
        self.syntactic.len()
    }
}

fn check_keep_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "channel keep probability must lie in (0, 1], got {p}"
        )))
    }
}

/// `M_l[i,j] = tanh(h_iᵀ·W_l·h_j + b_l)`.
pub fn association_matrix<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    states: Var,
    p: &SyntacticChannelParams,
) -> Result<Var> {
    let projected = tape.matmul_nt(states, bound[p.w])?; // row j = (W_l·h_j)ᵀ
    let bilinear = tape.matmul_nt(states, projected)?;
    let shifted = tape.add_scalar(bilinear, bound[p.b])?;
    Ok(tape.tanh(shifted))
}

/// Channel mask `V_l`: i.i.d. Bernoulli(`p_l`) in training, the constant
/// `p_l` at inference.
pub fn sample_channel_mask<T: Real, R: Rng + ?Sized>(
    n: usize,
    keep_prob: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<Tensor<T>> {
    check_keep_prob(keep_prob)?;
    if n == 0 {
        return Err(Error::Contract("mask size must be positive".into()));
    }
    Ok(match mode {
        Mode::Infer => Tensor::full(&[n, n], T::lit(keep_prob)),
        Mode::Train => {
            let data = (0..n * n)
                .map(|_| if rng.gen_bool(keep_prob) { T::one() } else { T::zero() })
                .collect();
            Tensor::new(vec![n, n], data)?
        }
    })
}

/// Additive pre-softmax penalty: `-99999` at pads, `0` elsewhere.
pub fn pad_penalty<T: Real>(pad_mask: &[bool]) -> Tensor<T> {
    let data = pad_mask
        .iter()
        .map(|&p| if p { T::lit(PAD_PENALTY) } else { T::zero() })
        .collect();
    Tensor::new(vec![pad_mask.len()], data).expect("non-empty mask")
}

/// Syntactic weights `a_l = softmax(colsum(M_l ⊙ V_l) + penalty)`.
pub fn syntactic_weights<T: Real>(tape: &mut Tape<T>, association: Var, mask: Var, pad_mask: &[bool]) -> Result<Var> {
    let n = pad_mask.len();
    let shape = tape.value(association).shape().to_vec();
    if shape != [n, n] || tape.value(mask).shape() != [n, n] {
        return Err(Error::shape("syntactic_weights", &shape, tape.value(mask).shape()));
    }
    let perturbed = tape.mul(association, mask)?;
    let column_sums = tape.sum_along(perturbed, 0)?;
    let penalty = tape.constant(pad_penalty(pad_mask));
    let scores = tape.add(column_sums, penalty)?;
    tape.softmax(scores, 0)
}

/// Semantic weights `Ā_l ∈ R^{n×2h}`.
pub fn semantic_weights<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    states: Var,
    p: &SemanticChannelParams,
    axis: SemanticAxis,
) -> Result<Var> {
    let hidden = tape.matmul_nt(states, bound[p.w2])?;
    let hidden = tape.add_row(hidden, bound[p.b])?;
    let gate = tape.sigmoid(hidden);
    let scores = tape.matmul(gate, bound[p.w1])?;
    let axis = match axis {
        SemanticAxis::Positions => 0,
        SemanticAxis::Dimensions => 1,
    };
    tape.softmax(scores, axis)
}

/// `C_l[i] = a_l[i] · (Ā_l[i] ⊙ H[i])`; without `Ā_l` this is `a_l[i]·H[i]`.
pub fn build_channel<T: Real>(tape: &mut Tape<T>, states: Var, syntactic: Var, semantic: Option<Var>) -> Result<Var> {
    let weighted = match semantic {
        Some(s) => tape.mul(s, states)?,
        None => states,
    };
    tape.scale_rows(weighted, syntactic)
}

/// Per-channel mask matrices for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMasks<T> {
    pub masks: Vec<Tensor<T>>,
}

impl<T: Real> ChannelMasks<T> {
    pub fn sample<R: Rng + ?Sized>(layer: &AttentionLayer, n: usize, mode: Mode, rng: &mut R) -> Result<Self> {
        let masks = layer
            .syntactic
            .iter()
            .map(|p| sample_channel_mask(n, p.keep_prob, rng, mode))
            .collect::<Result<_>>()?;
        Ok(ChannelMasks { masks })
    }
}

/// The `L` attention-reweighted copies of `H` plus the weights behind them.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    /// `C_l ∈ R^{n×2h}`.
    pub channels: Vec<Var>,
    /// `a_l ∈ R^n`.
    pub syntactic: Vec<Var>,
    /// `Ā_l ∈ R^{n×2h}`, absent when the semantic attention is disabled.
    pub semantic: Vec<Option<Var>>,
}

/// Runs the full attention pipeline for every channel.
pub fn build_channels<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    states: Var,
    pad_mask: &[bool],
    layer: &AttentionLayer,
    masks: &ChannelMasks<T>,
) -> Result<ChannelSet> {
    if layer.syntactic.is_empty() {
        return Err(Error::config("at least one attention channel is required"));
    }
    if masks.masks.len() != layer.channels() {
        return Err(Error::Contract(format!(
            "{} masks for {} channels",
            masks.masks.len(),
            layer.channels()
        )));
    }
    let mut set = ChannelSet {
        channels: Vec::with_capacity(layer.channels()),
        syntactic: Vec::with_capacity(layer.channels()),
        semantic: Vec::with_capacity(layer.channels()),
    };
    for (l, syn) in layer.syntactic.iter().enumerate() {
        let association = association_matrix(tape, bound, states, syn)?;
        let mask = tape.constant(masks.masks[l].clone());
        let a = syntactic_weights(tape, association, mask, pad_mask)?;
        let sem = match &layer.semantic {
            Some(params) => Some(semantic_weights(tape, bound, states, &params[l], layer.axis)?),
            None => None,
        };
        let channel = build_channel(tape, states, a, sem)?;
        set.channels.push(channel);
        set.syntactic.push(a);
        set.semantic.push(sem);
    }
    Ok(set)
}

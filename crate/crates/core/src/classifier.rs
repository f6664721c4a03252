//! Multichannel convolution with max-over-time pooling, the softmax head and
//! the regularized cross-entropy objective.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Floor applied to the predicted probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Filters of every configured width. A width-`l` filter spans `l`
/// consecutive rows of all `L` channels; its per-channel responses are summed.
///
/// The weight of width `l` is stored as `[L·l·2h × maps]`, row
/// `c·l·2h + k·2h + j` touching channel `c`, window offset `k`, dimension `j`.
#[derive(Clone, Debug)]
pub struct ConvFilterBank {
    pub widths: Vec<usize>,
    pub maps: usize,
    pub channels: usize,
    pub feature_dim: usize,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl ConvFilterBank {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        widths: &[usize],
        maps: usize,
        channels: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::config(
                "filter widths must be a non-empty list of positive integers",
            ));
        }
        if maps == 0 || channels == 0 || feature_dim == 0 {
            return Err(Error::config(
                "filter maps, channels and feature width must be positive",
            ));
        }
        let mut weights = Vec::with_capacity(widths.len());
        let mut biases = Vec::with_capacity(widths.len());
        for &l in widths {
            let fan_in = channels * l * feature_dim;
            let name = format!("conv.{l}");
            if store.find(&format!("{name}.w")).is_some() {
                return Err(Error::config(format!("filter width {l} listed twice")));
            }
            weights.push(store.add(
                &format!("{name}.w"),
                "conv",
                glorot(&[fan_in, maps], fan_in, maps, rng),
                true,
            ));
            biases.push(store.add(&format!("{name}.b"), "conv", Tensor::zeros(&[maps]), false));
        }
        Ok(ConvFilterBank {
            widths: widths.to_vec(),
            maps,
            channels,
            feature_dim,
            weights,
            biases,
        })
    }

    /// Length `S` of the pooled feature vector.
    pub fn output_dim(&self) -> usize {
        self.widths.len() * self.maps
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }
}

/// Convolves every width over the stacked channels, applies relu, and keeps
/// the maximum of each feature map. Returns `r` as `[1×S]`.
pub fn conv_maxpool<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    channels: &[Var],
    bank: &ConvFilterBank,
) -> Result<Var> {
    if channels.len() != bank.channels {
        return Err(Error::Contract(format!(
            "filter bank expects {} channels, got {}",
            bank.channels,
            channels.len()
        )));
    }
    let mut pooled = Vec::with_capacity(bank.widths.len());
    for ((&l, &w), &b) in bank.widths.iter().zip(&bank.weights).zip(&bank.biases) {
        let windows = channels
            .iter()
            .map(|&c| tape.unfold_rows(c, l))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat_cols(&windows)?;
        let z = tape.matmul(stacked, bound[w])?;
        let z = tape.add_row(z, bound[b])?;
        let activation = tape.relu(z);
        pooled.push(tape.max_rows(activation)?);
    }
    tape.concat_cols(&pooled)
}

#[derive(Clone, Debug)]
pub struct SoftmaxHead {
    /// `W ∈ R^{c×S}`.
    pub w: ParamId,
    /// `b ∈ R^c`.
    pub b: ParamId,
    pub classes: usize,
}

impl SoftmaxHead {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        inputs: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config(format!(
                "at least two classes are required, got {classes}"
            )));
        }
        Ok(SoftmaxHead {
            w: store.add("head.w", "head", glorot(&[classes, inputs], inputs, classes, rng), true),
            b: store.add("head.b", "head", Tensor::zeros(&[classes]), false),
            classes,
        })
    }
}

/// `W·r + b` as `[1×c]`.
pub fn logits<T: Real>(tape: &mut Tape<T>, bound: &Bound, r: Var, head: &SoftmaxHead) -> Result<Var> {
    let z = tape.matmul_nt(r, bound[head.w])?;
    tape.add_row(z, bound[head.b])
}

/// `y = softmax(W·r + b)`.
pub fn classify<T: Real>(tape: &mut Tape<T>, bound: &Bound, r: Var, head: &SoftmaxHead) -> Result<Var> {
    let z = logits(tape, bound, r, head)?;
    tape.softmax(z, 1)
}

/// `-ln(max(y[label], 1e-12))`.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, probs: Var, label: usize) -> Result<Var> {
    let classes = tape.value(probs).len();
    if label >= classes {
        return Err(Error::Contract(format!("label {label} outside [0, {classes})")));
    }
    let p = tape.pick(probs, label)?;
    let ln = tape.ln_clamped(p, T::lit(PROB_FLOOR));
    Ok(tape.scale(ln, -T::one()))
}

/// `λ·Σ‖W‖²` over regularized parameters; `None` when nothing contributes.
pub fn l2_penalty<T: Real>(tape: &mut Tape<T>, bound: &Bound, store: &ParamStore<T>, lambda: f64) -> Option<Var> {
    if lambda == 0.0 {
        return None;
    }
    let mut total: Option<Var> = None;
    for (id, p) in store.iter() {
        if !p.regularized {
            continue;
        }
        let sq = tape.sum_squares(bound[id]);
        total = Some(match total {
            Some(t) => tape.add(t, sq).expect("scalars"),
            None => sq,
        });
    }
    total.map(|t| tape.scale(t, T::lit(lambda)))
}

/// Cross-entropy plus the L2 penalty.
pub fn loss<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    store: &ParamStore<T>,
    probs: Var,
    label: usize,
    lambda: f64,
) -> Result<Var> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::config(format!(
            "l2 coefficient must be non-negative, got {lambda}"
        )));
    }
    let nll = cross_entropy(tape, probs, label)?;
    match l2_penalty(tape, bound, store, lambda) {
        Some(reg) => tape.add(nll, reg),
        None => Ok(nll),
    }
}

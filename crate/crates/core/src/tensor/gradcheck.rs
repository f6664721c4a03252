use std::sync::Arc;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor; `None` for frozen ones.
    pub per_param: Vec<Option<f64>>,
    /// Max over all checked entries (0 when nothing was checked).
    pub max_error: f64,
    pub entries_checked: usize,
    /// Entries whose `±eps` step crossed a relu, max-pool or clamp switch;
    /// their difference quotient is not a derivative and is not compared.
    pub kinks_skipped: usize,
    /// The entry behind `max_error`.
    pub worst: Option<WorstEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn evaluate<F>(
    params: &[Tensor<f64>],
    trainable: &[bool],
    corrupt_tanh: bool,
    f: &F,
) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new().with_corrupted_tanh_grad(corrupt_tanh);
    let vars: Vec<Var> = params
        .iter()
        .zip(trainable)
        .map(|(p, &t)| tape.leaf(Arc::new(p.clone()), t))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite: {value}")));
    }
    Ok((tape, vars, loss))
}

/// Compares tape gradients of `f` against central differences
/// `(f(θ+eps) - f(θ-eps)) / (2·eps)` for every entry of every trainable
/// parameter. Frozen parameters (`trainable[i] == false`) are skipped.
///
/// `f` rebuilds the objective on a fresh tape from the parameter leaves it
/// is handed, in the same order as `params`.
pub fn finite_diff_check<F>(params: &[Tensor<f64>], trainable: &[bool], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with_fault(params, trainable, eps, false, f)
}

/// [`finite_diff_check`] with the tanh-gradient fault optionally injected
/// into the analytic pass.
#[doc(hidden)]
pub fn finite_diff_check_with_fault<F>(
    params: &[Tensor<f64>],
    trainable: &[bool],
    eps: f64,
    corrupt_tanh: bool,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    if params.len() != trainable.len() {
        return Err(Error::Contract("one trainable flag per parameter".into()));
    }
    let (tape, vars, loss) = evaluate(params, trainable, corrupt_tanh, &f)?;
    let grads = tape.backward(loss)?;
    let branches = tape.branch_signature();

    let mut per_param = Vec::with_capacity(params.len());
    let mut max_error = 0.0f64;
    let mut worst_entry = None;
    let mut entries_checked = 0;
    let mut kinks_skipped = 0;
    let mut probe: Vec<Tensor<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        if !trainable[pi] {
            per_param.push(None);
            continue;
        }
        let analytic = grads.get_or_zeros(vars[pi], param.shape());
        let mut worst = 0.0f64;
        for k in 0..param.len() {
            let orig = param.data()[k];
            let mut smooth = true;
            let mut shifted = |probe: &mut [Tensor<f64>], delta: f64| -> Result<f64> {
                probe[pi].data_mut()[k] = orig + delta;
                let (t, _, l) = evaluate(probe, trainable, false, &f)?;
                smooth &= t.branch_signature() == branches;
                t.value(l).item()
            };
            let plus = shifted(&mut probe, eps)?;
            let minus = shifted(&mut probe, -eps)?;
            probe[pi].data_mut()[k] = orig;
            if !smooth {
                kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            worst = worst.max(err);
            if err > max_error || worst_entry.is_none() {
                max_error = max_error.max(err);
                worst_entry = Some(WorstEntry {
                    param: pi,
                    index: k,
                    analytic: a,
                    numeric,
                });
            }
            entries_checked += 1;
        }
        per_param.push(Some(worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_error,
        entries_checked,
        kinks_skipped,
        worst: worst_entry,
    })
}

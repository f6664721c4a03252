//! LSTM cell and bidirectional encoding into per-position annotations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Gate weights `W_* ∈ R^{h×(h+d)}` acting on `[h_prev ; x_t]`, and biases
/// `b_* ∈ R^h`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_f: ParamId,
    pub w_i: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub hidden: usize,
    pub input: usize,
}

impl LstmParams {
    /// Glorot-uniform weights, zero biases.
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Self {
        Self::register_with(store, prefix, hidden, input, |shape| {
            glorot(shape, hidden + input, hidden, rng)
        })
    }

    pub fn zeros<T: Real>(store: &mut ParamStore<T>, prefix: &str, hidden: usize, input: usize) -> Self {
        Self::register_with(store, prefix, hidden, input, Tensor::zeros)
    }

    fn register_with<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        hidden: usize,
        input: usize,
        mut weight: impl FnMut(&[usize]) -> Tensor<T>,
    ) -> Self {
        let shape = [hidden, hidden + input];
        let mut w = |gate: &str| store.add(&format!("{prefix}.w_{gate}"), prefix, weight(&shape), true);
        let (w_f, w_i, w_o, w_c) = (w("f"), w("i"), w("o"), w("c"));
        let mut b = |gate: &str| store.add(&format!("{prefix}.b_{gate}"), prefix, Tensor::zeros(&[hidden]), false);
        let (b_f, b_i, b_o, b_c) = (b("f"), b("i"), b("o"), b("c"));
        LstmParams {
            w_f,
            w_i,
            w_o,
            w_c,
            b_f,
            b_i,
            b_o,
            b_c,
            hidden,
            input,
        }
    }
}

/// Gate weights stacked once per sequence so each step is one product.
struct StackedGates {
    weights: Var,
    biases: [Var; 4],
    hidden: usize,
    input: usize,
}

impl StackedGates {
    fn new<T: Real>(tape: &mut Tape<T>, bound: &Bound, p: &LstmParams) -> Result<Self> {
        let weights = tape.concat_rows(&[bound[p.w_f], bound[p.w_i], bound[p.w_o], bound[p.w_c]])?;
        Ok(StackedGates {
            weights,
            biases: [bound[p.b_f], bound[p.b_i], bound[p.b_o], bound[p.b_c]],
            hidden: p.hidden,
            input: p.input,
        })
    }

    fn step<T: Real>(&self, tape: &mut Tape<T>, h_prev: Var, c_prev: Var, x_t: Var) -> Result<(Var, Var)> {
        let h = self.hidden;
        for (v, want) in [(h_prev, h), (c_prev, h), (x_t, self.input)] {
            if tape.value(v).shape() != [1, want] {
                return Err(Error::shape("lstm_step", tape.value(v).shape(), &[1, want]));
            }
        }
        let joined = tape.concat_cols(&[h_prev, x_t])?;
        let z = tape.matmul_nt(joined, self.weights)?;
        self.gates_from(tape, z, c_prev)
    }

    /// Step from a precomputed input projection `x_t·W_xᵀ`. `h_prev` of
    /// `None` stands for the zero initial state.
    fn step_projected<T: Real>(
        &self,
        tape: &mut Tape<T>,
        recurrent: Var,
        h_prev: Option<Var>,
        c_prev: Var,
        projected: Var,
    ) -> Result<(Var, Var)> {
        let z = match h_prev {
            Some(h) => {
                let r = tape.matmul_nt(h, recurrent)?;
                tape.add(r, projected)?
            }
            None => projected,
        };
        self.gates_from(tape, z, c_prev)
    }

    fn gates_from<T: Real>(&self, tape: &mut Tape<T>, z: Var, c_prev: Var) -> Result<(Var, Var)> {
        let h = self.hidden;
        let mut pre = [z; 4];
        for (g, slot) in pre.iter_mut().enumerate() {
            let part = tape.slice_cols(z, g * h, h)?;
            *slot = tape.add_row(part, self.biases[g])?;
        }
        let f = tape.sigmoid(pre[0]);
        let i = tape.sigmoid(pre[1]);
        let o = tape.sigmoid(pre[2]);
        let candidate = tape.tanh(pre[3]);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, candidate)?;
        let c_t = tape.add(keep, write)?;
        let squashed = tape.tanh(c_t);
        let h_t = tape.mul(o, squashed)?;
        Ok((h_t, c_t))
    }
}

/// One LSTM transition. `h_prev`, `c_prev` are `[1×h]`, `x_t` is `[1×d]`.
pub fn lstm_step<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &LstmParams,
    h_prev: Var,
    c_prev: Var,
    x_t: Var,
) -> Result<(Var, Var)> {
    StackedGates::new(tape, bound, p)?.step(tape, h_prev, c_prev, x_t)
}

/// Per-position annotations `H ∈ R^{n×2h}`, row `i` = `[→h_i ; ←h_i]`.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub states: Var,
    pub pad_mask: Vec<bool>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pad_mask.is_empty()
    }
}

fn run_direction<T: Real>(tape: &mut Tape<T>, gates: &StackedGates, x: Var, reverse: bool) -> Result<Vec<Var>> {
    let (n, _) = tape.value(x).dims2();
    let recurrent = tape.slice_cols(gates.weights, 0, gates.hidden)?;
    let input = tape.slice_cols(gates.weights, gates.hidden, gates.input)?;
    let projected = tape.matmul_nt(x, input)?;
    let mut h = None;
    let mut c = tape.constant(Tensor::zeros(&[1, gates.hidden]));
    let mut out = Vec::with_capacity(n);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let row = tape.slice_rows(projected, t, 1)?;
        let (h_t, c_t) = gates.step_projected(tape, recurrent, h, c, row)?;
        (h, c) = (Some(h_t), c_t);
        out.push((t, h_t));
    }
    out.sort_unstable_by_key(|&(t, _)| t);
    Ok(out.into_iter().map(|(_, h)| h).collect())
}

/// Row lookup `x_i = W_e·w_i` for every id.
pub fn embed<T: Real>(tape: &mut Tape<T>, table: Var, ids: &[usize]) -> Result<Var> {
    tape.gather_rows(table, ids)
}

/// Bi-LSTM over already-embedded inputs `x ∈ R^{n×d}`, zero initial states.
pub fn encode_embedded<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    x: Var,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<Var> {
    let (n, _) = tape.value(x).dims2();
    if n == 0 {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    let fwd_gates = StackedGates::new(tape, bound, fwd)?;
    let bwd_gates = StackedGates::new(tape, bound, bwd)?;
    for gates in [&fwd_gates, &bwd_gates] {
        if tape.value(x).shape()[1] != gates.input {
            return Err(Error::shape("bilstm", tape.value(x).shape(), &[n, gates.input]));
        }
    }
    let forward = run_direction(tape, &fwd_gates, x, false)?;
    let backward = run_direction(tape, &bwd_gates, x, true)?;
    let hf = tape.concat_rows(&forward)?;
    let hb = tape.concat_rows(&backward)?;
    tape.concat_cols(&[hf, hb])
}

/// Embedding lookup followed by the bidirectional pass.
pub fn bilstm_encode<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    table: ParamId,
    ids: &[usize],
    pad_mask: &[bool],
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<EncodedSequence> {
    if ids.is_empty() {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    let x = embed(tape, bound[table], ids)?;
    let states = encode_embedded(tape, bound, x, fwd, bwd)?;
    Ok(EncodedSequence {
        states,
        pad_mask: pad_mask.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;

    fn row(tape: &mut Tape<f64>, data: &[f64]) -> Var {
        tape.constant(Tensor::from_f64(&[1, data.len()], data).unwrap())
    }

    #[test]
    fn zero_params_zero_state() {
        let mut store = ParamStore::<f64>::new();
        let p = LstmParams::zeros(&mut store, "lstm", 2, 3);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h0 = row(&mut tape, &[0.0, 0.0]);
        let c0 = row(&mut tape, &[0.0, 0.0]);
        let x = row(&mut tape, &[0.3, -1.0, 2.0]);
        let (h, c) = lstm_step(&mut tape, &bound, &p, h0, c0, x).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_params_halve_the_cell() {
        let mut store = ParamStore::<f64>::new();
        let p = LstmParams::zeros(&mut store, "lstm", 2, 1);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h0 = row(&mut tape, &[0.0, 0.0]);
        let c0 = row(&mut tape, &[1.2, -0.4]);
        let x = row(&mut tape, &[5.0]);
        let (h, c) = lstm_step(&mut tape, &bound, &p, h0, c0, x).unwrap();
        assert_eq!(tape.value(c).data(), &[0.6, -0.2]);
        assert_eq!(tape.value(h).data(), &[0.5 * 0.6f64.tanh(), 0.5 * (-0.2f64).tanh()]);
    }

    #[test]
    fn scalar_cell_hand_computation() {
        let mut store = ParamStore::<f64>::new();
        let p = LstmParams::zeros(&mut store, "lstm", 1, 1);
        for id in [p.w_f, p.w_i, p.w_o, p.w_c] {
            store.set(id, Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap()).unwrap();
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h0 = row(&mut tape, &[0.0]);
        let c0 = row(&mut tape, &[0.0]);
        let x = row(&mut tape, &[1.0]);
        let (h, c) = lstm_step(&mut tape, &bound, &p, h0, c0, x).unwrap();
        let gate = sigmoid(1.0f64);
        let cell = gate * 1.0f64.tanh();
        assert!((gate - 0.73106).abs() < 1e-5);
        assert!((cell - 0.55677).abs() < 1e-5);
        assert!((tape.value(c).data()[0] - cell).abs() < 1e-15);
        let h_expect = gate * cell.tanh();
        assert!((h_expect - 0.36961).abs() < 1e-5);
        assert!((tape.value(h).data()[0] - h_expect).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_mismatched_input() {
        let mut store = ParamStore::<f64>::new();
        let p = LstmParams::zeros(&mut store, "lstm", 2, 3);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h0 = row(&mut tape, &[0.0, 0.0]);
        let c0 = row(&mut tape, &[0.0, 0.0]);
        let x = row(&mut tape, &[0.3, -1.0]);
        assert!(matches!(
            lstm_step(&mut tape, &bound, &p, h0, c0, x),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn out_of_range_id_is_an_index_error() {
        let mut store = ParamStore::<f64>::new();
        let table = store.add("embedding", "embedding", Tensor::zeros(&[3, 2]), false);
        let fwd = LstmParams::zeros(&mut store, "f", 2, 2);
        let bwd = LstmParams::zeros(&mut store, "b", 2, 2);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let res = bilstm_encode(&mut tape, &bound, table, &[0, 3], &[false, false], &fwd, &bwd);
        assert!(matches!(res, Err(Error::Index { .. })));
    }
}

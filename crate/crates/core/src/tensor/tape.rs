//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation is evaluated eagerly and appended to the tape, so node
//! inputs always precede the node itself. [`Tape::backward`] walks the list
//! once in reverse and accumulates adjoints into every input that requires
//! a gradient. The tape is never mutated by a backward pass, so replaying it
//! yields identical gradients.

use std::sync::Arc;

use super::{relu, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln { input: Var, floor: T },
    Softmax { input: Var, axis: usize },
    SumAlong { input: Var, axis: usize },
    SumAll(Var),
    SumSquares(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { input: Var, start: usize, len: usize },
    SliceRows { input: Var, start: usize, len: usize },
    GatherRows { input: Var, ids: Vec<usize> },
    ScaleRows { input: Var, weights: Var },
    Unfold { input: Var, width: usize },
    MaxRows { input: Var, argmax: Vec<usize> },
    Pick { input: Var, index: usize },
    Transpose(Var),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    corrupt_tanh_grad: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            corrupt_tanh_grad: false,
        }
    }

    /// Fault injection for the gradient checker's negative test: tanh nodes
    /// back-propagate `1 - t` instead of `1 - t²`.
    #[doc(hidden)]
    pub fn with_corrupted_tanh_grad(mut self, on: bool) -> Self {
        self.corrupt_tanh_grad = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Which side of every non-differentiable point the recorded pass took:
    /// relu input signs, max-pool winners and active log clamps. Two passes
    /// with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => sig.extend(self.value(*a).data().iter().map(|&x| usize::from(x > T::zero()))),
                Op::MaxRows { argmax, .. } => sig.extend_from_slice(argmax),
                Op::Ln { input, floor } => {
                    sig.extend(self.value(*input).data().iter().map(|&x| usize::from(x < *floor)))
                }
                _ => {}
            }
        }
        sig
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Arc::new(value), op, requires_grad)
    }

    fn push_node(&mut self, value: Arc<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node; shares storage with the caller.
    pub fn leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// Differentiable leaf owning its value.
    pub fn var(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a row vector (`[n]` or `[1, n]`) to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let av = self.value(a);
        let rv = self.value(row);
        let (m, n) = av.dims2();
        if rv.len() != n || av.shape().len() != 2 {
            return Err(Error::shape("add_row", av.shape(), rv.shape()));
        }
        let mut out = av.data().to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(rv.data()) {
                *o = *o + b;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Adds a single-element tensor to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let out = self.value(a).map(|x| x + sv);
        Ok(self.push(out, Op::AddScalar(a, s), &[a, s]))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(relu);
        self.push(out, Op::Relu(a), &[a])
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, a: Var, floor: T) -> Var {
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, Op::Ln { input: a, floor }, &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax_along(axis)?;
        Ok(self.push(out, Op::Softmax { input: a, axis }, &[a]))
    }

    pub fn sum_along(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).sum_along(axis)?;
        Ok(self.push(out, Op::SumAlong { input: a, axis }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x * x);
        self.push(Tensor::scalar(s), Op::SumSquares(a), &[a])
    }

    /// Concatenates rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = self.value(*first).dims2().0;
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            if v.shape().len() != 2 || v.dims2().0 != rows {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), v.shape()));
            }
            total += v.dims2().1;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row_slice(i));
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks rank-2 tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(*first).dims2().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.shape().len() != 2 || v.dims2().1 != cols {
                return Err(Error::shape("concat_rows", self.value(*first).shape(), v.shape()));
            }
            rows += v.dims2().0;
            out.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if av.shape().len() != 2 || len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", av.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av.row_slice(i)[start..start + len]);
        }
        let out = Tensor::new(vec![m, len], out)?;
        Ok(self.push(out, Op::SliceCols { input: a, start, len }, &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if av.shape().len() != 2 || len == 0 || start + len > m {
            return Err(Error::shape("slice_rows", av.shape(), &[start, len]));
        }
        let out = Tensor::new(vec![len, n], av.data()[start * n..(start + len) * n].to_vec())?;
        Ok(self.push(out, Op::SliceRows { input: a, start, len }, &[a]))
    }

    /// Row lookup: output row `r` is row `ids[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows needs at least one id".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: m,
                });
            }
            out.extend_from_slice(av.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), n], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                input: a,
                ids: ids.to_vec(),
            },
            &[a],
        ))
    }

    /// Multiplies row `i` of `a[m×n]` by `weights[i]` (`weights` holds `m`
    /// entries in any shape).
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var> {
        let av = self.value(a);
        let wv = self.value(weights);
        let (m, n) = av.dims2();
        if wv.len() != m || av.shape().len() != 2 {
            return Err(Error::shape("scale_rows", av.shape(), wv.shape()));
        }
        let mut out = av.data().to_vec();
        for (i, &w) in wv.data().iter().enumerate() {
            for o in &mut out[i * n..(i + 1) * n] {
                *o = *o * w;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(out, Op::ScaleRows { input: a, weights }, &[a, weights]))
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// output row: `[n×k] -> [(n-width+1) × width·k]`.
    pub fn unfold_rows(&mut self, a: Var, width: usize) -> Result<Var> {
        let av = self.value(a);
        let (n, k) = av.dims2();
        if width == 0 || width > n {
            return Err(Error::Config(vec![format!(
                "window width {width} exceeds sequence length {n}"
            )]));
        }
        let count = n - width + 1;
        let mut out = Vec::with_capacity(count * width * k);
        for i in 0..count {
            out.extend_from_slice(&av.data()[i * k..(i + width) * k]);
        }
        let out = Tensor::new(vec![count, width * k], out)?;
        Ok(self.push(out, Op::Unfold { input: a, width }, &[a]))
    }

    /// Column-wise maximum over rows, `[m×n] -> [1×n]`; ties go to the
    /// lowest row index.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(Error::Contract("max_rows expects a rank-2 tensor".into()));
        }
        let (m, n) = av.dims2();
        let mut argmax = vec![0usize; n];
        let mut out = av.row_slice(0).to_vec();
        for i in 1..m {
            for (j, &x) in av.row_slice(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, n], out)?;
        Ok(self.push(out, Op::MaxRows { input: a, argmax }, &[a]))
    }

    /// Selects one flat entry as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let av = self.value(a);
        let x = *av.data().get(index).ok_or(Error::Index {
            what: "tensor",
            index,
            size: av.len(),
        })?;
        Ok(self.push(Tensor::scalar(x), Op::Pick { input: a, index }, &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b))?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g)?)?;
                }
            }
            Op::MatMulNt(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b))?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(self.value(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), "mul", |x, y| x * y)?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), "mul", |x, y| x * y)?)?;
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*row) {
                    let shape = self.value(*row).shape().to_vec();
                    let col_sums = g.sum_along(0)?.reshape(&shape)?;
                    self.accumulate(grads, *row, col_sums)?;
                }
            }
            Op::AddScalar(a, s) => {
                self.accumulate(grads, *a, g.clone())?;
                let shape = self.value(*s).shape().to_vec();
                self.accumulate(grads, *s, Tensor::full(&shape, g.sum()))?;
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|x| x * k))?;
            }
            Op::Tanh(a) => {
                let local = if self.corrupt_tanh_grad {
                    out.map(|t| T::one() - t)
                } else {
                    out.map(|t| T::one() - t * t)
                };
                self.accumulate(grads, *a, g.zip_map(&local, "tanh", |x, y| x * y)?)?;
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(out, "sigmoid", |x, s| x * s * (T::one() - s))?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Relu(a) => {
                let ga = g.zip_map(
                    self.value(*a),
                    "relu",
                    |x, inp| {
                        if inp > T::zero() {
                            x
                        } else {
                            T::zero()
                        }
                    },
                )?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Ln { input, floor } => {
                let floor = *floor;
                let ga = g.zip_map(
                    self.value(*input),
                    "ln",
                    |x, inp| {
                        if inp > floor {
                            x / inp
                        } else {
                            T::zero()
                        }
                    },
                )?;
                self.accumulate(grads, *input, ga)?;
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = super::axis_layout(out.shape(), *axis);
                let y = out.data();
                let gd = g.data();
                let mut ga = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let inner_prod = (0..len).fold(T::zero(), |acc, k| acc + gd[at(k)] * y[at(k)]);
                        for k in 0..len {
                            ga[at(k)] = y[at(k)] * (gd[at(k)] - inner_prod);
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(out.shape().to_vec(), ga)?)?;
            }
            Op::SumAlong { input, axis } => {
                let shape = self.value(*input).shape().to_vec();
                let (outer, len, inner) = super::axis_layout(&shape, *axis);
                let mut ga = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            ga[(o * len + k) * inner + i] = g.data()[o * inner + i];
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(shape, ga)?)?;
            }
            Op::SumAll(a) => {
                let gs = g.item()?;
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, gs))?;
            }
            Op::SumSquares(a) => {
                let two_g = g.item()? * T::lit(2.0);
                self.accumulate(grads, *a, self.value(*a).map(|x| x * two_g))?;
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2();
                let mut offset = 0;
                for p in parts {
                    let (_, c) = self.value(*p).dims2();
                    if self.requires_grad(*p) {
                        let mut part = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            part.extend_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                        }
                        self.accumulate(grads, *p, Tensor::new(vec![rows, c], part)?)?;
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.dims2().1;
                let mut offset = 0;
                for p in parts {
                    let (r, _) = self.value(*p).dims2();
                    if self.requires_grad(*p) {
                        let part = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(grads, *p, Tensor::new(vec![r, cols], part)?)?;
                    }
                    offset += r;
                }
            }
            Op::SliceCols { input, start, len } => {
                let shape = self.value(*input).shape().to_vec();
                let (m, n) = (shape[0], shape[1]);
                let mut ga = vec![T::zero(); m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + len].copy_from_slice(g.row_slice(i));
                }
                self.accumulate(grads, *input, Tensor::new(shape, ga)?)?;
            }
            Op::SliceRows { input, start, len } => {
                let shape = self.value(*input).shape().to_vec();
                let n = shape[1];
                let mut ga = vec![T::zero(); shape[0] * n];
                ga[start * n..(start + len) * n].copy_from_slice(g.data());
                self.accumulate(grads, *input, Tensor::new(shape, ga)?)?;
            }
            Op::GatherRows { input, ids } => {
                let shape = self.value(*input).shape().to_vec();
                let n = self.value(*input).dims2().1;
                let mut ga = vec![T::zero(); self.value(*input).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &x) in ga[id * n..(id + 1) * n].iter_mut().zip(g.row_slice(r)) {
                        *o = *o + x;
                    }
                }
                self.accumulate(grads, *input, Tensor::new(shape, ga)?)?;
            }
            Op::ScaleRows { input, weights } => {
                let av = self.value(*input);
                let wv = self.value(*weights);
                let (m, n) = av.dims2();
                if self.requires_grad(*input) {
                    let mut ga = g.data().to_vec();
                    for (i, &w) in wv.data().iter().enumerate() {
                        for x in &mut ga[i * n..(i + 1) * n] {
                            *x = *x * w;
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(av.shape().to_vec(), ga)?)?;
                }
                if self.requires_grad(*weights) {
                    let gw: Vec<T> = (0..m).map(|i| super::dot(g.row_slice(i), av.row_slice(i))).collect();
                    self.accumulate(grads, *weights, Tensor::new(wv.shape().to_vec(), gw)?)?;
                }
            }
            Op::Unfold { input, width } => {
                let shape = self.value(*input).shape().to_vec();
                let k = self.value(*input).dims2().1;
                let mut ga = vec![T::zero(); self.value(*input).len()];
                let (count, _) = g.dims2();
                for i in 0..count {
                    for (o, &x) in ga[i * k..(i + width) * k].iter_mut().zip(g.row_slice(i)) {
                        *o = *o + x;
                    }
                }
                self.accumulate(grads, *input, Tensor::new(shape, ga)?)?;
            }
            Op::MaxRows { input, argmax } => {
                let shape = self.value(*input).shape().to_vec();
                let n = shape[1];
                let mut ga = vec![T::zero(); shape[0] * n];
                for (j, &i) in argmax.iter().enumerate() {
                    ga[i * n + j] = g.data()[j];
                }
                self.accumulate(grads, *input, Tensor::new(shape, ga)?)?;
            }
            Op::Pick { input, index } => {
                let shape = self.value(*input).shape().to_vec();
                let mut ga = Tensor::zeros(&shape);
                ga.data_mut()[*index] = g.item()?;
                self.accumulate(grads, *input, ga)?;
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose()?)?;
            }
        }
        Ok(())
    }
}

/// Adjoints produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not require a
    /// gradient or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros for unreachable nodes.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Moves the gradient of `v` out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

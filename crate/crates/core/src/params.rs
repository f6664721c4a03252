//! Named parameter storage shared by every model component.

use std::ops::Index;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    /// Unique dotted name, e.g. `lstm_fwd.w_f`.
    pub name: String,
    /// Gradient-check / reporting group, e.g. `lstm_fwd` or `syn.0`.
    pub group: String,
    pub value: Arc<Tensor<T>>,
    /// Included in the L2 penalty.
    pub regularized: bool,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, group: &str, value: Tensor<T>, regularized: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name: name.to_string(),
            group: group.to_string(),
            value: Arc::new(value),
            regularized,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access; clones the storage only if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::shape("set parameter", slot.value.shape(), value.shape()));
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.group) {
                out.push(p.group.clone());
            }
        }
        out
    }

    /// Puts every parameter on `tape` as a leaf sharing storage.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(Arc::clone(&p.value), p.trainable))
                .collect(),
        }
    }

    pub fn total_entries(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients in store order; zeros where unreachable,
    /// `None` for frozen parameters.
    pub fn collect<T: Real>(&self, grads: &Gradients<T>, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        store
            .iter()
            .map(|(id, p)| {
                p.trainable
                    .then(|| grads.get_or_zeros(self.vars[id.0], p.value.shape()))
            })
            .collect()
    }

    /// Like [`Bound::collect`] but moves the tensors out of `grads`.
    pub fn collect_owned<T: Real>(&self, mut grads: Gradients<T>, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        store
            .iter()
            .map(|(id, p)| {
                p.trainable.then(|| {
                    grads
                        .take(self.vars[id.0])
                        .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
                })
            })
            .collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// I.i.d. `U[-bound, bound]` entries.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            T::lit(if bound > 0.0 {
                rng.gen_range(-bound..=bound)
            } else {
                0.0
            })
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

/// Glorot-uniform initialization for a `fan_out × fan_in` weight.
pub fn glorot<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(shape, bound, rng)
}

//! Named parameter storage, gradients, and the per-pass graph session.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// The patch tokenizer standing in for the image backbone.
    Backbone,
    /// Embeddings, fusion layers, and classifier heads.
    Heads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub group: ParamGroup,
}

/// Parameters in declaration order. The order is the checkpoint order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self { params: Vec::new() }
    }
}

/// Truncated normal, resampled beyond ±2σ.
pub fn trunc_normal<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * std);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("init shape is valid")
}

/// Std of embedding tables and learned query arrays.
pub const INIT_STD: f64 = 0.02;

/// Std of a projection weight with `fan_in` inputs.
pub fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, group: ParamGroup) -> ParamId {
        self.params.push(Param { name: name.into(), value, group });
        ParamId(self.params.len() - 1)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        group: ParamGroup,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, trunc_normal(shape, INIT_STD, rng), group)
    }

    pub fn add_scaled_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        group: ParamGroup,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, trunc_normal(shape, std, rng), group)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar values.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn num_scalars_where(&self, pred: impl Fn(&Param<T>) -> bool) -> usize {
        self.params.iter().filter(|p| pred(p)).map(|p| p.value.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::config(format!(
                "parameter blob of {} values for a model of {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), group: p.group })
                .collect(),
        }
    }
}

/// Dense per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn empty(len: usize) -> Self {
        Self { slots: vec![None; len] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots[id.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for slot in self.slots.iter_mut().flatten() {
            slot.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<T>) {
        self.slots[id.0] = Some(grad);
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
///
/// Each parameter is bound at most once per pass, so a weight used in
/// several places (the shared latent block, for instance) accumulates all
/// of its gradient contributions in one leaf.
pub struct Graph<'p, T> {
    pub tape: Tape<T>,
    store: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    track_grads: bool,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], track_grads: true }
    }

    /// A pass that never needs gradients.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self { track_grads: false, ..Self::new(store) }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.value(id).clone().with_requires_grad(self.track_grads);
        let v = self.tape.leaf(t);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Backpropagates `loss` and collects gradients of every bound parameter.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        if !self.track_grads {
            return Err(Error::contract("backward on an inference graph"));
        }
        self.tape.backward(loss)?;
        let mut grads = Grads::empty(self.store.len());
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = self.tape.grad(*v) {
                    grads.slots[i] = Some(g.to_vec());
                }
            }
        }
        Ok(grads)
    }
}

//! Named parameter registry and per-pass binding onto a tape.

use std::cell::RefCell;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which side of the sequence/total split a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Modality encoders (audio CNN, visual stub); frozen unless end-to-end.
    Encoder,
    /// Front-ends, sequence core and heads.
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Flat registry of every trainable array in a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        value: Tensor<S>,
    ) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            group,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn count(&self, group: Option<ParamGroup>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn add_grads(&mut self, grads: &[(ParamId, Tensor<S>)]) {
        for (id, g) in grads {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Replaces values by name, checking shapes. Every stored parameter must
    /// be present in `values`.
    pub fn load_values(&mut self, values: &[(String, Tensor<S>)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for p in &mut self.params {
            let (_, v) = values
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// One forward pass: binds parameters to a tape on first use and carries
/// the train/eval flag and the dropout stream.
pub struct Ctx<'a, S: Scalar> {
    pub tape: &'a Tape<S>,
    store: &'a ParamStore<S>,
    bound: RefCell<Vec<Option<Var>>>,
    training: bool,
    train_encoders: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    /// Evaluation mode: dropout disabled, no parameter gradients.
    pub fn eval(tape: &'a Tape<S>, store: &'a ParamStore<S>) -> Self {
        Self::build(tape, store, false, false, 0)
    }

    /// Training mode. Encoder parameters receive gradients only when
    /// `train_encoders` is set.
    pub fn train(
        tape: &'a Tape<S>,
        store: &'a ParamStore<S>,
        train_encoders: bool,
        seed: u64,
    ) -> Self {
        Self::build(tape, store, true, train_encoders, seed)
    }

    fn build(
        tape: &'a Tape<S>,
        store: &'a ParamStore<S>,
        training: bool,
        train_encoders: bool,
        seed: u64,
    ) -> Self {
        Ctx {
            tape,
            store,
            bound: RefCell::new(vec![None; store.len()]),
            training,
            train_encoders,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let trainable = self.training && (p.group == ParamGroup::Sequence || self.train_encoders);
        let v = self
            .tape
            .leaf(p.value.clone(), trainable)
            .expect("parameters are finite");
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Uses `v` for parameter `id` in this pass instead of a fresh leaf
    /// holding the stored value. Must precede the first use of `id`.
    pub fn bind(&self, id: ParamId, v: Var) -> Result<()> {
        let mut bound = self.bound.borrow_mut();
        let p = self.store.get(id);
        if bound[id.0].is_some() {
            return Err(Error::invalid(
                "bind",
                format!("{} is already bound", p.name),
            ));
        }
        if self.tape.shape(v) != p.value.shape() {
            return Err(Error::shape("bind", &self.tape.shape(v), p.value.shape()));
        }
        bound[id.0] = Some(v);
        Ok(())
    }

    pub fn next_u64(&self) -> u64 {
        self.rng.borrow_mut().next_u64()
    }

    pub(crate) fn with_rng<T>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        f(&mut self.rng.borrow_mut())
    }

    /// Collects tape gradients of every bound trainable parameter. Run
    /// after `backward`; feed the result to [`ParamStore::add_grads`].
    pub fn into_grads(self) -> Vec<(ParamId, Tensor<S>)> {
        self.bound
            .into_inner()
            .into_iter()
            .enumerate()
            .filter_map(|(i, slot)| Some((ParamId(i), self.tape.grad(slot?)?)))
            .collect()
    }
}

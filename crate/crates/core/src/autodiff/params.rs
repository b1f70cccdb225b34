use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<R: Real> {
    pub name: String,
    pub value: Tensor<R>,
    pub grad: Tensor<R>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<R: Real> {
    params: Vec<Parameter<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<R> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<R> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<R>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<R>> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(R::zero());
        }
    }

    /// Add per-parameter gradients (as returned by [`Bound::collect`]) into
    /// the stored `grad` fields.
    pub fn accumulate(&mut self, grads: &[Option<Tensor<R>>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape("accumulate", self.params.len(), grads.len()));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                p.grad.axpy(R::one(), g)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm of all stored gradients taken together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.norm_sq().f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Replace values from another store with the same layout.
    pub fn load_values(&mut self, values: Vec<Tensor<R>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape("load_values", self.params.len(), values.len()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            v.expect_shape("load_values", p.value.shape())?;
            p.value = v;
        }
        Ok(())
    }
}

/// Parameters of a store bound to a tape for one forward pass.
///
/// Each parameter becomes a single leaf the first time it is used, so a
/// parameter shared across several blocks receives the summed gradient.
pub struct Bound<'a, R: Real> {
    pub tape: &'a Tape<R>,
    store: &'a ParamStore<R>,
    vars: RefCell<Vec<Option<Var<R>>>>,
}

impl<'a, R: Real> Bound<'a, R> {
    pub fn new(tape: &'a Tape<R>, store: &'a ParamStore<R>) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn store(&self) -> &ParamStore<R> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<R> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0]
            .get_or_insert_with(|| self.tape.leaf(self.store.get(id).value.clone()))
            .clone()
    }

    /// Gradient of every parameter in store order (`None` if unused).
    pub fn collect(&self, grads: &Gradients<R>) -> Vec<Option<Tensor<R>>> {
        self.vars
            .borrow()
            .iter()
            .map(|v| v.as_ref().and_then(|v| grads.wrt(v).cloned()))
            .collect()
    }
}

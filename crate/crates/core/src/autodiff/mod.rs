//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to tracked [`Var`]s in creation
//! order, which is already a topological order. [`Tape::backward`] walks the
//! records once in reverse and accumulates vector-Jacobian products.
//!
//! Values are reference counted and owned by the `Var` handles, not by the
//! tape, so an inference-only tape ([`Tape::inference`]) keeps no history and
//! frees intermediates as soon as they go out of scope.

mod complex;
mod elementwise;
mod nn;
mod params;

use std::cell::RefCell;
use std::rc::Rc;

pub use nn::ConvSpec;
pub use params::{Bound, ParamId, ParamStore, Parameter};
pub(crate) use elementwise::softplus;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Vector-Jacobian product of one recorded op: maps the output gradient to
/// one optional gradient per input. `needs[i]` is false for untracked inputs.
type Backward<R> = Box<dyn Fn(&Tensor<R>, &[bool]) -> Vec<Option<Tensor<R>>>>;

struct Node<R: Real> {
    parents: Vec<usize>,
    backward: Option<Backward<R>>,
}

/// Handle to a value, optionally tracked on a tape.
#[derive(Clone)]
pub struct Var<R: Real> {
    id: Option<usize>,
    value: Rc<Tensor<R>>,
}

impl<R: Real> Var<R> {
    pub fn value(&self) -> &Tensor<R> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    /// Scalar value of a single-element var.
    pub fn item(&self) -> R {
        self.value.item()
    }

    pub fn to_tensor(&self) -> Tensor<R> {
        (*self.value).clone()
    }
}

impl<R: Real> std::fmt::Debug for Var<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

pub struct Tape<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
    recording: bool,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that never records; every op just computes its value.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<R>) -> Var<R> {
        if !self.recording {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            id: Some(nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor<R>) -> Var<R> {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    pub(crate) fn push(
        &self,
        inputs: &[&Var<R>],
        value: Tensor<R>,
        backward: impl Fn(&Tensor<R>, &[bool]) -> Vec<Option<Tensor<R>>> + 'static,
    ) -> Var<R> {
        let tracked = self.recording && inputs.iter().any(|v| v.is_tracked());
        if !tracked {
            return self.constant(value);
        }
        let parents = inputs.iter().map(|v| v.id.unwrap_or(usize::MAX)).collect();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents,
            backward: Some(Box::new(backward)),
        });
        Var {
            id: Some(nodes.len() - 1),
            value: Rc::new(value),
        }
    }

    /// Reverse sweep from a scalar loss. Each recorded node is visited once.
    pub fn backward(&self, loss: &Var<R>) -> Result<Gradients<R>> {
        let root = loss.id.ok_or(Error::NotScalarLoss)?;
        if loss.value.len() != 1 {
            return Err(Error::NotScalarLoss);
        }
        let nodes = self.nodes.borrow();
        if root >= nodes.len() {
            return Err(Error::NotScalarLoss);
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.shape().to_vec(), R::one()));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| p != usize::MAX).collect();
            let parent_grads = backward(&g, &needs);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if p == usize::MAX {
                    continue;
                }
                if p >= id {
                    return Err(Error::InvalidArgument("tape is not topologically ordered".into()));
                }
                if let Some(pg) = pg {
                    match &mut grads[p] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                                *a += *b;
                            }
                        }
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar loss with respect to every leaf on the tape.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient for a leaf; `None` when the loss does not depend on it.
    pub fn wrt(&self, var: &Var<R>) -> Option<&Tensor<R>> {
        var.id.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::wrt`] but zero-filled when the loss ignores `var`.
    pub fn wrt_or_zero(&self, var: &Var<R>) -> Tensor<R> {
        self.wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_gradient_is_twice_the_input() {
        let tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let loss = tape.sum(&tape.sqr(&p));
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&p).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::ones([2]));
        let y = tape.scale(&p, 2.0);
        assert!(matches!(tape.backward(&y), Err(Error::NotScalarLoss)));
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(&c), Err(Error::NotScalarLoss)));
    }

    #[test]
    fn shared_leaf_accumulates() {
        let tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(&p, &p).unwrap();
        let z = tape.add(&y, &p).unwrap();
        let g = tape.backward(&z).unwrap();
        assert_eq!(g.wrt(&p).unwrap().item(), 7.0);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f32>::inference();
        let p = tape.leaf(Tensor::ones([4]));
        let y = tape.sum(&tape.relu(&p));
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
        assert_eq!(y.item(), 4.0);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let tape = Tape::<f64>::new();
            let p = tape.leaf(Tensor::from_fn([16], |i| (i as f64 * 0.37).sin()));
            let q = tape.mul(&tape.sqr(&p), &p).unwrap();
            let l = tape.sum(&tape.softplus(&q));
            tape.backward(&l).unwrap().wrt(&p).unwrap().clone()
        };
        let a = run();
        let b = run();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

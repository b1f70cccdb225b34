use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Adam<R: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub t: u64,
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(store: &ParamStore<R>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect::<Vec<_>>();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update using the gradients stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore<R>, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("Adam::step", self.m.len(), store.len()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.grad.shape() != m.shape() {
                return Err(Error::shape("Adam::step", m.shape(), p.grad.shape()));
            }
            let (b1, b2) = (R::of(self.beta1), R::of(self.beta2));
            let (one, lr_r, eps) = (R::one(), R::of(lr), R::of(self.eps));
            let (c1, c2) = (R::of(c1), R::of(c2));
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr_r * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule: linear warmup followed by step decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub warmup_iters: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
}

/// `lr · iter / warmup` during warmup, then
/// `lr · decay_factor^⌊(iter − warmup) / decay_every⌋`.
pub fn lr_schedule(iter: usize, s: &Schedule) -> f64 {
    if iter < s.warmup_iters {
        return s.lr * iter as f64 / s.warmup_iters as f64;
    }
    let k = (iter - s.warmup_iters) / s.decay_every.max(1);
    s.lr * s.decay_factor.powi(k as i32)
}

/// Scale all stored gradients so that their global norm is at most `max`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<R: Real>(store: &mut ParamStore<R>, max: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max {
        let s = R::of(max / norm);
        for p in store.iter_mut() {
            p.grad = p.grad.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let s = Schedule {
            lr: 0.002,
            warmup_iters: 1000,
            decay_every: 20000,
            decay_factor: 0.2,
        };
        assert_eq!(lr_schedule(0, &s), 0.0);
        assert!((lr_schedule(500, &s) - 0.001).abs() < 1e-18);
        assert_eq!(lr_schedule(1000, &s), 0.002);
        assert!((lr_schedule(50000, &s) - 8e-5).abs() < 1e-18);
    }

    #[test]
    fn clip_scales_to_max() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros([2]));
        store.get_mut(id).grad = Tensor::new([2], vec![3.0, 4.0]).unwrap();
        assert_eq!(clip_grad_norm(&mut store, 1.0), 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-15);
        assert_eq!(clip_grad_norm(&mut store, 2.0), store.grad_norm());
    }
}

//! Seeded weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Samples of `N(0, 1)` restricted to `[lo, hi]`, drawn by rejection.
pub fn truncated_normal<R: Real>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Tensor<R>> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("truncated normal needs lo < hi, got [{lo}, {hi}]")));
    }
    // Rejection from N(0,1) is hopeless for bounds far in one tail; fall back
    // to uniform proposals weighted by the density there.
    let mass = normal_cdf(hi) - normal_cdf(lo);
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let v = if mass > 1e-3 {
            let v: f64 = StandardNormal.sample(rng);
            if v < lo || v > hi {
                continue;
            }
            v
        } else {
            let v = rng.random_range(lo..=hi);
            let peak = if lo > 0.0 { lo } else if hi < 0.0 { hi } else { 0.0 };
            let accept = (-(v * v - peak * peak) / 2.0).exp();
            if rng.random::<f64>() > accept {
                continue;
            }
            v
        };
        data.push(R::of(v));
    }
    Tensor::new(shape.to_vec(), data)
}

/// Mean of the standard normal truncated to `[lo, hi]`.
pub fn truncated_normal_mean(lo: f64, hi: f64) -> f64 {
    (normal_pdf(lo) - normal_pdf(hi)) / (normal_cdf(hi) - normal_cdf(lo))
}

/// Variance of the standard normal truncated to `[lo, hi]`.
pub fn truncated_normal_var(lo: f64, hi: f64) -> f64 {
    let z = normal_cdf(hi) - normal_cdf(lo);
    let m = truncated_normal_mean(lo, hi);
    1.0 + (lo * normal_pdf(lo) - hi * normal_pdf(hi)) / z - m * m
}

fn normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Numerical Recipes erfc, fractional error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// He-style uniform initialisation for a conv weight `[Co, Ci, kh, kw]`.
pub fn kaiming_uniform<R: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<R> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| R::of(rng.random_range(-bound..bound)))
}

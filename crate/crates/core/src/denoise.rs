//! z-step regularisers `z^{t+1} = R(zᵗ, xᵗ, uᵗ/ρ)`.
//!
//! The classical options are exact proximal maps of
//! `λ R(z) + (ρ/2)‖x − z + u/ρ‖²`; the U-Net consumes the channel
//! concatenation `[z, x, u/ρ]` and emits a two-channel image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamStore, Var};
use crate::cplx;
use crate::error::{Error, Result};
use crate::nets::{UNet, UNetConfig};
use crate::tensor::{Real, Tensor};

/// Serializable description of a denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserSpec {
    /// Returns `zᵗ` unchanged.
    Identity,
    /// Exact prox of `λ‖z‖²`.
    ProxQuadratic { lambda: f64 },
    /// Exact prox of `λ‖z‖₁` (complex soft-thresholding).
    SoftThreshold { lambda: f64 },
    /// Trainable U-Net on `[z, x, u/ρ]`.
    Unet { scales: usize, filters: usize, residual: bool },
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ProxQuadratic { lambda } | Self::SoftThreshold { lambda } if !(lambda >= 0.0) => {
                Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")))
            }
            Self::Unet { scales, filters, .. } if scales == 0 || filters == 0 => {
                Err(Error::InvalidArgument("U-Net needs scales >= 1 and filters >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn unet_config(&self) -> Option<UNetConfig> {
        match *self {
            Self::Unet { scales, filters, residual } => Some(UNetConfig {
                in_ch: 6,
                out_ch: 2,
                scales,
                filters,
                residual,
            }),
            _ => None,
        }
    }

    /// Build a denoiser, registering any weights in `store`.
    pub fn build<R: Real>(&self, store: &mut ParamStore<R>, name: &str, rng: &mut impl Rng) -> Result<Denoiser> {
        self.validate()?;
        Ok(match *self {
            Self::Identity => Denoiser::Identity,
            Self::ProxQuadratic { lambda } => Denoiser::ProxQuadratic { lambda },
            Self::SoftThreshold { lambda } => Denoiser::SoftThreshold { lambda },
            Self::Unet { .. } => Denoiser::Unet(UNet::new(store, name, self.unet_config().unwrap(), rng)?),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Denoiser {
    Identity,
    ProxQuadratic { lambda: f64 },
    SoftThreshold { lambda: f64 },
    Unet(UNet),
}

impl Denoiser {
    pub fn num_params(&self) -> usize {
        match self {
            Self::Unet(net) => net.num_params(),
            _ => 0,
        }
    }

    /// Apply on a tape. `rho` is a scalar var.
    pub fn apply<R: Real>(&self, p: &Bound<R>, z: &Var<R>, x: &Var<R>, u_over_rho: &Var<R>, rho: &Var<R>) -> Result<Var<R>> {
        let tape = p.tape;
        if z.shape() != x.shape() || z.shape() != u_over_rho.shape() {
            return Err(Error::shape("denoiser", z.shape(), x.shape()));
        }
        cplx::check_complex("denoiser", z.value())?;
        match self {
            Self::Identity => Ok(z.clone()),
            Self::ProxQuadratic { lambda } => {
                let v = tape.add(x, u_over_rho)?;
                let denom = tape.add_const(rho, 2.0 * lambda);
                let factor = tape.div(rho, &denom)?;
                tape.scale_by(&v, &factor)
            }
            Self::SoftThreshold { lambda } => {
                let v = tape.add(x, u_over_rho)?;
                let lam = tape.constant(Tensor::full(rho.shape().to_vec(), R::of(*lambda)));
                let tau = tape.div(&lam, rho)?;
                tape.soft_threshold(&v, &tau)
            }
            Self::Unet(net) => {
                let input = tape.concat(&[z, x, u_over_rho])?;
                net.forward(p, &input)
            }
        }
    }
}

/// `argmin_z λ‖z‖² + (ρ/2)‖x − z + u/ρ‖² = ρ(x + u/ρ)/(2λ + ρ)`.
pub fn prox_quadratic<R: Real>(x: &Tensor<R>, u_over_rho: &Tensor<R>, lambda: f64, rho: f64) -> Result<Tensor<R>> {
    check_prox(lambda, rho)?;
    Ok(x.add(u_over_rho)?.scale(R::of(rho / (2.0 * lambda + rho))))
}

/// `argmin_z λ‖z‖₁ + (ρ/2)‖x − z + u/ρ‖²`: complex soft-thresholding of
/// `x + u/ρ` at `λ/ρ`, phase preserved.
pub fn soft_threshold<R: Real>(x: &Tensor<R>, u_over_rho: &Tensor<R>, lambda: f64, rho: f64) -> Result<Tensor<R>> {
    check_prox(lambda, rho)?;
    let v = x.add(u_over_rho)?;
    let (h, w) = cplx::check_complex("soft_threshold", &v)?;
    let n = h * w;
    let tau = R::of(lambda / rho);
    let mut out = v;
    for plane in out.data_mut().chunks_exact_mut(2 * n) {
        for p in 0..n {
            let m = plane[p].hypot(plane[n + p]);
            let f = if m > tau { (m - tau) / m } else { R::zero() };
            plane[p] *= f;
            plane[n + p] *= f;
        }
    }
    Ok(out)
}

fn check_prox(lambda: f64, rho: f64) -> Result<()> {
    if !(lambda >= 0.0) || !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("need lambda >= 0 and rho > 0, got {lambda}, {rho}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn t(seed: u64) -> Tensor<f64> {
        Tensor::from_fn([2, 4, 5], |i| ((i as f64 + seed as f64) * 1.37).sin())
    }

    #[test]
    fn prox_quadratic_limits_and_optimality() {
        let (x, u) = (t(0), t(5));
        assert_eq!(prox_quadratic(&x, &u, 0.0, 1.7).unwrap(), x.add(&u).unwrap());
        assert!(prox_quadratic(&x, &u, 1e8, 1.0).unwrap().norm() < 1e-7);
        let (lam, rho) = (0.3, 1.9);
        let z = prox_quadratic(&x, &u, lam, rho).unwrap();
        // 2λz − ρ(x − z + u/ρ) = 0
        for i in 0..z.len() {
            let r = 2.0 * lam * z.data()[i] - rho * (x.data()[i] - z.data()[i] + u.data()[i]);
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn soft_threshold_cases() {
        let (x, u) = (t(1), Tensor::zeros([2, 4, 5]));
        assert_eq!(soft_threshold(&x, &u, 0.0, 2.0).unwrap(), x);
        let big = soft_threshold(&x, &u, 10.0, 1.0).unwrap();
        assert!(big.data().iter().all(|&v| v == 0.0));
        assert!(soft_threshold(&x, &u, -1.0, 1.0).is_err());
        assert!(prox_quadratic(&x, &u, 1.0, 0.0).is_err());
    }

    #[test]
    fn tape_versions_match_plain() {
        let (z, x, u) = (t(2), t(3), t(4));
        let tape = Tape::inference();
        let store = ParamStore::new();
        let p = Bound::new(&tape, &store);
        let rho = tape.constant(Tensor::scalar(1.3));
        let (zv, xv, uv) = (tape.constant(z.clone()), tape.constant(x.clone()), tape.constant(u.clone()));
        let a = Denoiser::ProxQuadratic { lambda: 0.4 }.apply(&p, &zv, &xv, &uv, &rho).unwrap();
        assert!(a.value().sub(&prox_quadratic(&x, &u, 0.4, 1.3).unwrap()).unwrap().norm() < 1e-14);
        let b = Denoiser::SoftThreshold { lambda: 0.4 }.apply(&p, &zv, &xv, &uv, &rho).unwrap();
        assert!(b.value().sub(&soft_threshold(&x, &u, 0.4, 1.3).unwrap()).unwrap().norm() < 1e-14);
        let c = Denoiser::Identity.apply(&p, &zv, &xv, &uv, &rho).unwrap();
        assert_eq!(c.value(), &z);
    }
}

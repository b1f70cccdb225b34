//! Synthetic multi-coil acquisitions.
//!
//! The image is a real, nonnegative sum of ellipses with a smooth
//! multiplicative shading. Coil maps are Gaussian blobs centered on a circle
//! around the field of view with low-order phase, normalized so that
//! `Σ_k |C_k|² = 1` at every pixel. k-space is `F(E_C(x)) + σ(n₁ + i n₂)`
//! with standard normal `n₁, n₂`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coils::RSS_EPS;
use crate::error::{Error, Result};
use crate::mask::{self, MaskKind, SamplingMask};
use crate::mri::{self, CoilSensitivities, ComplexImage, KSpace};
use crate::solver::Measurement;
use crate::tensor::{Real, Tensor};

/// ACS fraction paired with an acceleration: 8 % at 4×, 4 % at 8×, 2 % at 16×.
pub fn acs_fraction_for(accel: f64) -> f64 {
    (0.32 / accel).min(0.32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub noise_sigma: f64,
    pub mask: MaskKind,
    pub accel: f64,
    /// Defaults to [`acs_fraction_for`]`(accel)`.
    #[serde(default)]
    pub acs_fraction: Option<f64>,
}

impl PhantomSpec {
    pub fn desk() -> Self {
        Self {
            height: 64,
            width: 64,
            coils: 4,
            noise_sigma: 0.0,
            mask: MaskKind::Equispaced,
            accel: 4.0,
            acs_fraction: None,
        }
    }

    pub fn acs(&self) -> f64 {
        self.acs_fraction.unwrap_or_else(|| acs_fraction_for(self.accel))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.coils == 0 {
            return Err(Error::InvalidArgument(format!(
                "phantom needs H, W >= 4 and at least one coil, got {}x{} with {} coils",
                self.height, self.width, self.coils
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// One simulated acquisition.
#[derive(Clone, Debug)]
pub struct PhantomSample<R: Real> {
    pub x_gt: ComplexImage<R>,
    pub maps: CoilSensitivities<R>,
    pub y_full: KSpace<R>,
    pub mask: SamplingMask,
    pub y_tilde: KSpace<R>,
}

impl<R: Real> PhantomSample<R> {
    /// Reference magnitude `|x_gt|`, shape `[H, W]`.
    pub fn target(&self) -> Tensor<R> {
        self.x_gt.magnitude()
    }

    /// Measurement without the true maps, as seen by a reconstruction.
    pub fn measurement(&self) -> Measurement<R> {
        Measurement {
            y_tilde: self.y_tilde.clone(),
            mask: self.mask.clone(),
            maps: None,
        }
    }

    pub fn measurement_with_maps(&self) -> Measurement<R> {
        Measurement {
            maps: Some(self.maps.clone()),
            ..self.measurement()
        }
    }
}

/// Simulate an acquisition with a mask generated from `spec` and `seed`.
pub fn make_phantom<R: Real>(seed: u64, spec: &PhantomSpec) -> Result<PhantomSample<R>> {
    spec.validate()?;
    let m = mask::generate(spec.mask, spec.height, spec.width, spec.accel, spec.acs(), seed)?;
    simulate(seed, spec, m)
}

/// Simulate an acquisition undersampled with a given mask.
pub fn simulate<R: Real>(seed: u64, spec: &PhantomSpec, mask: SamplingMask) -> Result<PhantomSample<R>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::shape("simulate", (h, w), (mask.height, mask.width)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_gt = ComplexImage::from_real(&ellipse_image(h, w, &mut rng).cast())?;
    let maps = coil_maps(h, w, spec.coils, &mut rng)?;
    let mut y = mri::predict_kspace(&x_gt, &maps)?.into_tensor();
    if spec.noise_sigma > 0.0 {
        for v in y.data_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += R::of(spec.noise_sigma * n);
        }
    }
    let y_full = KSpace::new(y, false)?;
    let y_tilde = y_full.masked(&mask.to_tensor())?;
    Ok(PhantomSample {
        x_gt,
        maps,
        y_full,
        mask,
        y_tilde,
    })
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

/// Nonnegative ellipse phantom in normalized coordinates `[-1, 1]²`.
fn ellipse_image(h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let outer = Ellipse {
        cy: rng.random_range(-0.05..0.05),
        cx: rng.random_range(-0.05..0.05),
        ay: rng.random_range(0.7..0.9),
        ax: rng.random_range(0.55..0.8),
        angle: rng.random_range(-0.3..0.3),
        value: rng.random_range(0.6..1.0),
    };
    let inner: Vec<Ellipse> = (0..rng.random_range(4..9))
        .map(|_| {
            let r = rng.random_range(0.0..0.55);
            let t = rng.random_range(0.0..2.0 * PI);
            Ellipse {
                cy: outer.cy + r * t.sin() * outer.ay,
                cx: outer.cx + r * t.cos() * outer.ax,
                ay: rng.random_range(0.05..0.3),
                ax: rng.random_range(0.05..0.3),
                angle: rng.random_range(0.0..PI),
                value: rng.random_range(-0.5..0.6),
            }
        })
        .collect();
    let shade: [f64; 3] = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.1..0.1)];
    Tensor::from_fn([h, w], |i| {
        let y = 2.0 * (i / w) as f64 / h as f64 - 1.0;
        let x = 2.0 * (i % w) as f64 / w as f64 - 1.0;
        if !outer.contains(y, x) {
            return 0.0;
        }
        let v = inner.iter().filter(|e| e.contains(y, x)).fold(outer.value, |acc, e| acc + e.value);
        let s = 1.0 + shade[0] * y + shade[1] * x + shade[2] * x * y;
        (v * s).max(0.0)
    })
}

/// Gaussian coil profiles on a circle of radius 1.2 (normalized units) with
/// phase `a + b·y + c·x`, normalized over the whole field of view.
fn coil_maps<R: Real>(h: usize, w: usize, nc: usize, rng: &mut impl Rng) -> Result<CoilSensitivities<R>> {
    let n = h * w;
    let offset = rng.random_range(0.0..2.0 * PI);
    let width = rng.random_range(0.9..1.3);
    let mut data = vec![R::zero(); nc * 2 * n];
    for k in 0..nc {
        let theta = offset + 2.0 * PI * k as f64 / nc as f64;
        let (py, px) = (1.2 * theta.sin(), 1.2 * theta.cos());
        let phase = [rng.random_range(-PI..PI), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let plane = &mut data[k * 2 * n..(k + 1) * 2 * n];
        for i in 0..n {
            let y = 2.0 * (i / w) as f64 / h as f64 - 1.0;
            let x = 2.0 * (i % w) as f64 / w as f64 - 1.0;
            let d2 = (y - py).powi(2) + (x - px).powi(2);
            let mag = if nc == 1 { 1.0 } else { (-d2 / (2.0 * width * width)).exp() };
            let ph = phase[0] + phase[1] * y + phase[2] * x;
            plane[i] = R::of(mag * ph.cos());
            plane[n + i] = R::of(mag * ph.sin());
        }
    }
    CoilSensitivities::normalized(Tensor::new([nc, 2, h, w], data)?, R::of(RSS_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_nonnegative() {
        let spec = PhantomSpec {
            height: 24,
            width: 20,
            coils: 3,
            noise_sigma: 0.01,
            ..PhantomSpec::desk()
        };
        let a = make_phantom::<f64>(5, &spec).unwrap();
        let b = make_phantom::<f64>(5, &spec).unwrap();
        let c = make_phantom::<f64>(6, &spec).unwrap();
        assert_eq!(a.y_tilde.tensor(), b.y_tilde.tensor());
        assert_ne!(a.x_gt.tensor(), c.x_gt.tensor());
        let re = &a.x_gt.tensor().data()[..24 * 20];
        assert!(re.iter().all(|&v| v >= 0.0) && re.iter().any(|&v| v > 0.0));
        assert!(a.x_gt.tensor().data()[24 * 20..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maps_have_unit_energy() {
        let s = make_phantom::<f64>(1, &PhantomSpec { height: 16, width: 16, ..PhantomSpec::desk() }).unwrap();
        for e in s.maps.energy().data() {
            assert!((e - 1.0).abs() < 1e-9);
        }
    }
}

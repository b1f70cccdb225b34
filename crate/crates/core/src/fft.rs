//! Centered, orthonormal 2D Fourier transforms.
//!
//! `fft2c` is `fftshift ∘ DFT ∘ ifftshift` scaled by `1/√(HW)`, so the zero
//! frequency sits at index `(H/2, W/2)` (floor division) and `ifft2c` is both
//! the inverse and the adjoint of `fft2c`. Inputs use the crate's complex
//! layout `[.., 2, H, W]`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{hw, Real, Tensor};

/// Process-wide cache of 1D plans, keyed by length and direction.
pub struct FftCache<R: Real> {
    planner: Mutex<(FftPlanner<R>, HashMap<(usize, bool), Arc<dyn Fft<R>>>)>,
}

impl<R: Real> Default for FftCache<R> {
    fn default() -> Self {
        Self {
            planner: Mutex::new((FftPlanner::new(), HashMap::new())),
        }
    }
}

impl<R: Real> FftCache<R> {
    fn plan(&self, len: usize, inverse: bool) -> Arc<dyn Fft<R>> {
        let mut guard = self.planner.lock().unwrap();
        let (planner, plans) = &mut *guard;
        plans
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    }
}

/// Centered orthonormal forward transform over the trailing two axes.
pub fn fft2c<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    check(x, "fft2c")?;
    Ok(fft2c_unchecked(x, false))
}

/// Centered orthonormal inverse transform over the trailing two axes.
pub fn ifft2c<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    check(x, "ifft2c")?;
    Ok(fft2c_unchecked(x, true))
}

fn check<R: Real>(x: &Tensor<R>, op: &'static str) -> Result<()> {
    let s = x.shape();
    if s.len() < 3 || s[s.len() - 3] != 2 {
        return Err(Error::shape(op, "[.., 2, H, W]", s));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite(op));
    }
    Ok(())
}

/// Transform without the finiteness scan; used inside the tape where inputs
/// are already validated.
pub(crate) fn fft2c_unchecked<R: Real>(x: &Tensor<R>, inverse: bool) -> Tensor<R> {
    let (h, w) = hw(x.shape());
    let plane = h * w;
    let n_planes = x.len() / (2 * plane);
    let cache = R::fft_cache();
    let row_fft = cache.plan(w, inverse);
    let col_fft = cache.plan(h, inverse);
    let scale = R::one() / R::of((plane as f64).sqrt());

    let mut out = Tensor::zeros(x.shape().to_vec());
    let src = x.data();
    let dst = out.data_mut();
    let mut buf = vec![Complex::new(R::zero(), R::zero()); plane];
    let mut col = vec![Complex::new(R::zero(), R::zero()); h];
    let mut scratch = vec![
        Complex::new(R::zero(), R::zero());
        row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len())
    ];

    for p in 0..n_planes {
        let re = &src[2 * p * plane..(2 * p + 1) * plane];
        let im = &src[(2 * p + 1) * plane..(2 * p + 2) * plane];
        // ifftshift while loading
        for y in 0..h {
            let my = (y + h - h / 2) % h;
            for xx in 0..w {
                let mx = (xx + w - w / 2) % w;
                let i = y * w + xx;
                buf[my * w + mx] = Complex::new(re[i], im[i]);
            }
        }
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        for xx in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + xx];
            }
            col_fft.process_with_scratch(&mut col, &mut scratch);
            for y in 0..h {
                buf[y * w + xx] = col[y];
            }
        }
        // fftshift while storing
        let (dre, dim) = dst[2 * p * plane..(2 * p + 2) * plane].split_at_mut(plane);
        for my in 0..h {
            let y = (my + h / 2) % h;
            for mx in 0..w {
                let xx = (mx + w / 2) % w;
                let v = buf[my * w + mx];
                dre[y * w + xx] = v.re * scale;
                dim[y * w + xx] = v.im * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_image_maps_to_center_coefficient() {
        for &(h, w) in &[(4usize, 4usize), (5, 7), (8, 3)] {
            let c = 0.7;
            let mut x = Tensor::<f64>::zeros([2, h, w]);
            x.data_mut()[..h * w].fill(c);
            let k = fft2c(&x).unwrap();
            let center = (h / 2) * w + w / 2;
            for (i, &v) in k.data()[..h * w].iter().enumerate() {
                let want = if i == center { c * ((h * w) as f64).sqrt() } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "{h}x{w} at {i}: {v} vs {want}");
            }
            assert!(k.data()[h * w..].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn center_impulse_inverts_to_constant() {
        let (h, w) = (6, 5);
        let mut k = Tensor::<f64>::zeros([2, h, w]);
        k.data_mut()[(h / 2) * w + w / 2] = 1.0;
        let x = ifft2c(&k).unwrap();
        let want = 1.0 / ((h * w) as f64).sqrt();
        assert!(x.data()[..h * w].iter().all(|v| (v - want).abs() < 1e-12));
        assert!(x.data()[h * w..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_f32_and_f64() {
        let x = random(&[2, 32, 32], 1);
        let back = ifft2c(&fft2c(&x).unwrap()).unwrap();
        assert!(back.sub(&x).unwrap().norm() / x.norm() < 1e-12);

        let xf = x.cast::<f32>();
        let backf = fft2c(&ifft2c(&xf).unwrap()).unwrap();
        assert!(backf.sub(&xf).unwrap().norm() / xf.norm() < 1e-6);
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = Tensor::<f64>::zeros([2, 4, 4]);
        x.data_mut()[3] = f64::NAN;
        assert!(matches!(fft2c(&x), Err(Error::NonFinite(_))));
        assert!(fft2c(&Tensor::<f64>::zeros([3, 4, 4])).is_err());
    }

    #[test]
    fn leading_axes_transform_independently() {
        let x = random(&[3, 2, 8, 6], 2);
        let k = fft2c(&x).unwrap();
        for c in 0..3 {
            let single = fft2c(&x.index_axis0(c)).unwrap();
            assert_eq!(single, k.index_axis0(c));
        }
    }
}

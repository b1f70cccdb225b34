use std::rc::Rc;

use super::{Tape, Var};
use crate::cplx;
use crate::error::{Error, Result};
use crate::fft::fft2c_unchecked;
use crate::tensor::{Real, Tensor};

impl<R: Real> Tape<R> {
    /// Centered orthonormal FFT. Its adjoint, used for the backward pass, is
    /// the inverse transform.
    pub fn fft2c(&self, x: &Var<R>) -> Result<Var<R>> {
        cplx::check_complex("fft2c", x.value())?;
        if !x.value().all_finite() {
            return Err(Error::NonFinite("fft2c"));
        }
        let out = fft2c_unchecked(x.value(), false);
        Ok(self.push(&[x], out, |g, _| vec![Some(fft2c_unchecked(g, true))]))
    }

    pub fn ifft2c(&self, x: &Var<R>) -> Result<Var<R>> {
        cplx::check_complex("ifft2c", x.value())?;
        if !x.value().all_finite() {
            return Err(Error::NonFinite("ifft2c"));
        }
        let out = fft2c_unchecked(x.value(), true);
        Ok(self.push(&[x], out, |g, _| vec![Some(fft2c_unchecked(g, false))]))
    }

    /// Coil expansion `E_C(x)_k = C_k ⊙ x`, differentiable in both arguments.
    pub fn expand(&self, x: &Var<R>, c: &Var<R>) -> Result<Var<R>> {
        let out = cplx::expand(x.value(), c.value())?;
        let (xv, cv) = (x.value.clone(), c.value.clone());
        Ok(self.push(&[x, c], out, move |g, need| {
            vec![
                need[0].then(|| cplx::reduce(g, &cv).unwrap()),
                need[1].then(|| cplx::mul_conj_bcast(g, &xv)),
            ]
        }))
    }

    /// Coil combination `R_C(z) = Σ_k conj(C_k) ⊙ z_k`.
    pub fn reduce(&self, z: &Var<R>, c: &Var<R>) -> Result<Var<R>> {
        let out = cplx::reduce(z.value(), c.value())?;
        let (zv, cv) = (z.value.clone(), c.value.clone());
        Ok(self.push(&[z, c], out, move |g, need| {
            vec![
                need[0].then(|| cplx::expand(g, &cv).unwrap()),
                need[1].then(|| cplx::mul_conj_bcast(&zv, g)),
            ]
        }))
    }

    /// Multiply by a fixed real `[H, W]` sampling mask.
    pub fn apply_mask(&self, x: &Var<R>, mask: &Rc<Tensor<R>>) -> Result<Var<R>> {
        let out = cplx::apply_mask(x.value(), mask)?;
        let m = mask.clone();
        Ok(self.push(&[x], out, move |g, _| vec![Some(cplx::apply_mask(g, &m).unwrap())]))
    }

    /// Complex magnitude `[.., 2, H, W] -> [.., H, W]`; zero gradient at zero.
    pub fn cabs(&self, x: &Var<R>) -> Result<Var<R>> {
        let out = cplx::cabs(x.value())?;
        let xv = x.value.clone();
        let ov = Rc::new(out.clone());
        Ok(self.push(&[x], out, move |g, _| {
            let n = ov.shape()[ov.rank() - 2] * ov.shape()[ov.rank() - 1];
            let mut gx = Tensor::zeros(xv.shape().to_vec());
            for (((gp, op), xp), dst) in g
                .data()
                .chunks_exact(n)
                .zip(ov.data().chunks_exact(n))
                .zip(xv.data().chunks_exact(2 * n))
                .zip(gx.data_mut().chunks_exact_mut(2 * n))
            {
                let (dr, di) = dst.split_at_mut(n);
                for p in 0..n {
                    if op[p] > R::zero() {
                        dr[p] = gp[p] * xp[p] / op[p];
                        di[p] = gp[p] * xp[n + p] / op[p];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Pixelwise normalisation `C_k / sqrt(Σ_j |C_j|²)`; pixels with RSS at
    /// most `eps` are set to zero.
    pub fn normalize_coils(&self, c: &Var<R>, eps: f64) -> Result<Var<R>> {
        let eps = R::of(eps);
        let rss = Rc::new(cplx::coil_rss(c.value())?);
        let out = cplx::normalize_coils(c.value(), eps)?;
        let ov = Rc::new(out.clone());
        Ok(self.push(&[c], out, move |g, _| {
            let n = rss.len();
            let mut proj = vec![R::zero(); n];
            for (gp, op) in g.data().chunks_exact(n).zip(ov.data().chunks_exact(n)) {
                for p in 0..n {
                    proj[p] += gp[p] * op[p];
                }
            }
            let mut gc = Tensor::zeros(g.shape().to_vec());
            for ((dst, gp), op) in gc
                .data_mut()
                .chunks_exact_mut(n)
                .zip(g.data().chunks_exact(n))
                .zip(ov.data().chunks_exact(n))
            {
                for p in 0..n {
                    let s = rss.data()[p];
                    if s > eps {
                        dst[p] = (gp[p] - op[p] * proj[p]) / s;
                    }
                }
            }
            vec![Some(gc)]
        }))
    }

    /// Complex soft-thresholding `v · max(|v| − τ, 0) / |v|` with a scalar
    /// threshold var `τ`.
    pub fn soft_threshold(&self, v: &Var<R>, tau: &Var<R>) -> Result<Var<R>> {
        let (h, w) = cplx::check_complex("soft_threshold", v.value())?;
        if tau.value().len() != 1 {
            return Err(Error::shape("soft_threshold", "scalar", tau.shape()));
        }
        let n = h * w;
        let t = tau.item();
        let mag = Rc::new(cplx::cabs(v.value())?);
        let mut out = v.to_tensor();
        for (plane, m) in out.data_mut().chunks_exact_mut(2 * n).zip(mag.data().chunks_exact(n)) {
            for p in 0..n {
                let f = if m[p] > t { (m[p] - t) / m[p] } else { R::zero() };
                plane[p] *= f;
                plane[n + p] *= f;
            }
        }
        let vv = v.value.clone();
        Ok(self.push(&[v, tau], out, move |g, need| {
            let mut gv = Tensor::zeros(vv.shape().to_vec());
            let mut gt = R::zero();
            for (((gp, vp), m), dst) in g
                .data()
                .chunks_exact(2 * n)
                .zip(vv.data().chunks_exact(2 * n))
                .zip(mag.data().chunks_exact(n))
                .zip(gv.data_mut().chunks_exact_mut(2 * n))
            {
                for p in 0..n {
                    if m[p] <= t {
                        continue;
                    }
                    let (ur, ui) = (vp[p] / m[p], vp[n + p] / m[p]);
                    let (gr, gi) = (gp[p], gp[n + p]);
                    let along = gr * ur + gi * ui;
                    gt -= along;
                    dst[p] = gr - t * (gr - ur * along) / m[p];
                    dst[n + p] = gi - t * (gi - ui * along) / m[p];
                }
            }
            vec![need[0].then_some(gv), need[1].then(|| Tensor::scalar(gt))]
        }))
    }
}

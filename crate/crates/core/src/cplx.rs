//! Complex kernels over the `[.., 2, H, W]` layout.

use crate::error::{Error, Result};
use crate::tensor::{hw, Real, Tensor};

pub(crate) fn check_complex<R: Real>(op: &'static str, x: &Tensor<R>) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 3 || s[s.len() - 3] != 2 {
        return Err(Error::shape(op, "[.., 2, H, W]", s));
    }
    Ok(hw(s))
}

pub(crate) fn check_coils<R: Real>(op: &'static str, c: &Tensor<R>) -> Result<(usize, usize, usize)> {
    let s = c.shape();
    if s.len() != 4 || s[1] != 2 || s[0] == 0 {
        return Err(Error::shape(op, "[nc >= 1, 2, H, W]", s));
    }
    Ok((s[0], s[2], s[3]))
}

/// Per-coil product `c_k ⊙ x`.
pub fn expand<R: Real>(x: &Tensor<R>, c: &Tensor<R>) -> Result<Tensor<R>> {
    let (nc, h, w) = check_coils("expand", c)?;
    x.expect_shape("expand", &[2, h, w])?;
    let n = h * w;
    let (xr, xi) = x.data().split_at(n);
    let mut out = Tensor::zeros([nc, 2, h, w]);
    for (ck, ok) in c.data().chunks_exact(2 * n).zip(out.data_mut().chunks_exact_mut(2 * n)) {
        let (cr, ci) = ck.split_at(n);
        let (or, oi) = ok.split_at_mut(n);
        for p in 0..n {
            or[p] = cr[p] * xr[p] - ci[p] * xi[p];
            oi[p] = cr[p] * xi[p] + ci[p] * xr[p];
        }
    }
    Ok(out)
}

/// Coil combination `Σ_k conj(c_k) ⊙ z_k`.
pub fn reduce<R: Real>(z: &Tensor<R>, c: &Tensor<R>) -> Result<Tensor<R>> {
    let (nc, h, w) = check_coils("reduce", c)?;
    z.expect_shape("reduce", &[nc, 2, h, w])?;
    let n = h * w;
    let mut out = Tensor::zeros([2, h, w]);
    let (or, oi) = out.data_mut().split_at_mut(n);
    for (ck, zk) in c.data().chunks_exact(2 * n).zip(z.data().chunks_exact(2 * n)) {
        let (cr, ci) = ck.split_at(n);
        let (zr, zi) = zk.split_at(n);
        for p in 0..n {
            or[p] += cr[p] * zr[p] + ci[p] * zi[p];
            oi[p] += cr[p] * zi[p] - ci[p] * zr[p];
        }
    }
    Ok(out)
}

/// Per-coil product `a_k ⊙ conj(b)` for `a: [nc, 2, H, W]`, `b: [2, H, W]`.
pub(crate) fn mul_conj_bcast<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let (h, w) = hw(b.shape());
    let n = h * w;
    let (br, bi) = b.data().split_at(n);
    let mut out = Tensor::zeros(a.shape().to_vec());
    for (ak, ok) in a.data().chunks_exact(2 * n).zip(out.data_mut().chunks_exact_mut(2 * n)) {
        let (ar, ai) = ak.split_at(n);
        let (or, oi) = ok.split_at_mut(n);
        for p in 0..n {
            or[p] = ar[p] * br[p] + ai[p] * bi[p];
            oi[p] = ai[p] * br[p] - ar[p] * bi[p];
        }
    }
    out
}

/// Magnitude of each complex entry: `[.., 2, H, W] -> [.., H, W]`.
pub fn cabs<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (h, w) = check_complex("cabs", x)?;
    let n = h * w;
    let s = x.shape();
    let mut shape = s[..s.len() - 3].to_vec();
    shape.extend([h, w]);
    let mut out = Vec::with_capacity(x.len() / 2);
    for plane in x.data().chunks_exact(2 * n) {
        let (re, im) = plane.split_at(n);
        out.extend(re.iter().zip(im).map(|(&a, &b)| a.hypot(b)));
    }
    Tensor::new(shape, out)
}

/// Multiply both channels of every complex plane by a real `[H, W]` mask.
pub fn apply_mask<R: Real>(x: &Tensor<R>, mask: &Tensor<R>) -> Result<Tensor<R>> {
    let (h, w) = check_complex("apply_mask", x)?;
    mask.expect_shape("apply_mask", &[h, w])?;
    let mut out = x.clone();
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        for (v, &m) in plane.iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
    Ok(out)
}

/// Root-sum-of-squares over coils of `[nc, 2, H, W]`, giving `[H, W]`.
pub fn coil_rss<R: Real>(c: &Tensor<R>) -> Result<Tensor<R>> {
    let (_, h, w) = check_coils("coil_rss", c)?;
    let n = h * w;
    let mut acc = vec![R::zero(); n];
    for plane in c.data().chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(plane) {
            *a += v * v;
        }
    }
    Tensor::new([h, w], acc.into_iter().map(|v| v.sqrt()).collect())
}

/// Divide every coil by the coil RSS at each pixel; pixels whose RSS is at
/// most `eps` are zeroed (outside the support).
pub fn normalize_coils<R: Real>(c: &Tensor<R>, eps: R) -> Result<Tensor<R>> {
    let rss = coil_rss(c)?;
    let n = rss.len();
    let mut out = c.clone();
    for plane in out.data_mut().chunks_exact_mut(n) {
        for (v, &s) in plane.iter_mut().zip(rss.data()) {
            *v = if s > eps { *v / s } else { R::zero() };
        }
    }
    Ok(out)
}

/// Complex inner product real part, `Re ⟨a, b⟩ = Σ Re(conj(a) b)`, which in
/// the real-pair layout is the plain dot product.
pub fn inner_re<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<R> {
    a.dot(b)
}

/// Full complex inner product `⟨a, b⟩ = Σ conj(a) b` as `(re, im)`.
pub fn inner<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<(R, R)> {
    let (h, w) = check_complex("inner", a)?;
    a.expect_shape("inner", b.shape())?;
    let n = h * w;
    let (mut re, mut im) = (R::zero(), R::zero());
    for (pa, pb) in a.data().chunks_exact(2 * n).zip(b.data().chunks_exact(2 * n)) {
        let (ar, ai) = pa.split_at(n);
        let (br, bi) = pb.split_at(n);
        for p in 0..n {
            re += ar[p] * br[p] + ai[p] * bi[p];
            im += ar[p] * bi[p] - ai[p] * br[p];
        }
    }
    Ok((re, im))
}

//! Parallel-MRI measurement operators.
//!
//! The forward operator is `A = M ∘ F ∘ E_C` and its adjoint
//! `A* = R_C ∘ F⁻¹ ∘ M`, where `E_C` multiplies the image by every coil map,
//! `R_C` combines coil images with conjugated maps, `F` is the centered
//! orthonormal FFT and `M` zero-fills unsampled k-space locations. The mask is
//! applied multiplicatively so the k-space shape never changes.
//!
//! Every operator exists twice: as a plain function on tensors, and as a
//! differentiable composite on a [`Tape`]. The tape versions are built from
//! the same kernels.

use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::cplx;
use crate::error::{Error, Result};
use crate::fft::{fft2c, ifft2c};
use crate::tensor::{hw, Real, Tensor};

/// A complex image `x ∈ ℂⁿ`, stored `[2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage<R: Real>(Tensor<R>);

impl<R: Real> ComplexImage<R> {
    pub fn new(t: Tensor<R>) -> Result<Self> {
        if t.rank() != 3 || t.shape()[0] != 2 {
            return Err(Error::shape("ComplexImage", "[2, H, W]", t.shape()));
        }
        Ok(Self(t))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self(Tensor::zeros([2, h, w]))
    }

    /// Real-valued image with zero imaginary part.
    pub fn from_real(re: &Tensor<R>) -> Result<Self> {
        let &[h, w] = re.shape() else {
            return Err(Error::shape("ComplexImage::from_real", "[H, W]", re.shape()));
        };
        let mut data = re.data().to_vec();
        data.resize(2 * h * w, R::zero());
        Ok(Self(Tensor::new([2, h, w], data)?))
    }

    pub fn dims(&self) -> (usize, usize) {
        hw(self.0.shape())
    }

    pub fn tensor(&self) -> &Tensor<R> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<R> {
        self.0
    }

    pub fn magnitude(&self) -> Tensor<R> {
        cplx::cabs(&self.0).expect("validated layout")
    }
}

/// Multi-coil k-space `[nc, 2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace<R: Real> {
    data: Tensor<R>,
    pub mask_applied: bool,
}

impl<R: Real> KSpace<R> {
    pub fn new(data: Tensor<R>, mask_applied: bool) -> Result<Self> {
        cplx::check_coils("KSpace", &data)?;
        if !data.all_finite() {
            return Err(Error::NonFinite("KSpace"));
        }
        Ok(Self { data, mask_applied })
    }

    pub fn num_coils(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        hw(self.data.shape())
    }

    pub fn tensor(&self) -> &Tensor<R> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<R> {
        self.data
    }

    /// Retrospective undersampling `ỹ = M(y)`.
    pub fn masked(&self, mask: &Tensor<R>) -> Result<Self> {
        Ok(Self {
            data: cplx::apply_mask(&self.data, mask)?,
            mask_applied: true,
        })
    }
}

/// Coil sensitivity maps `C = (C_1, …, C_nc)`, stored `[nc, 2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities<R: Real> {
    maps: Tensor<R>,
}

impl<R: Real> CoilSensitivities<R> {
    /// Wrap maps as given, without normalising.
    pub fn new(maps: Tensor<R>) -> Result<Self> {
        cplx::check_coils("CoilSensitivities", &maps)?;
        Ok(Self { maps })
    }

    /// Normalise so that `Σ_k |C_k(p)|² = 1` wherever the raw RSS exceeds
    /// `eps`, and zero elsewhere.
    pub fn normalized(maps: Tensor<R>, eps: R) -> Result<Self> {
        let maps = cplx::normalize_coils(&maps, eps)?;
        Ok(Self { maps })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn uniform(h: usize, w: usize) -> Self {
        let mut maps = Tensor::zeros([1, 2, h, w]);
        maps.data_mut()[..h * w].fill(R::one());
        Self { maps }
    }

    pub fn num_coils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        hw(self.maps.shape())
    }

    pub fn tensor(&self) -> &Tensor<R> {
        &self.maps
    }

    pub fn into_tensor(self) -> Tensor<R> {
        self.maps
    }

    /// `Σ_k |C_k|²` per pixel.
    pub fn energy(&self) -> Tensor<R> {
        cplx::coil_rss(&self.maps).unwrap().map(|v| v * v)
    }

    /// Pixels where the coils have any sensitivity.
    pub fn support(&self) -> Vec<bool> {
        self.energy().data().iter().map(|&e| e > R::zero()).collect()
    }
}

pub fn expand<R: Real>(x: &ComplexImage<R>, c: &CoilSensitivities<R>) -> Result<Tensor<R>> {
    cplx::expand(x.tensor(), c.tensor())
}

pub fn reduce<R: Real>(z: &Tensor<R>, c: &CoilSensitivities<R>) -> Result<ComplexImage<R>> {
    Ok(ComplexImage(cplx::reduce(z, c.tensor())?))
}

/// `A(x) = M ∘ F ∘ E_C (x)`.
pub fn forward_a<R: Real>(x: &ComplexImage<R>, c: &CoilSensitivities<R>, mask: &Tensor<R>) -> Result<KSpace<R>> {
    check_mask(mask, c.dims())?;
    let k = fft2c(&expand(x, c)?)?;
    KSpace::new(cplx::apply_mask(&k, mask)?, true)
}

/// `A*(y) = R_C ∘ F⁻¹ ∘ M (y)`.
pub fn adjoint_a<R: Real>(y: &KSpace<R>, c: &CoilSensitivities<R>, mask: &Tensor<R>) -> Result<ComplexImage<R>> {
    check_mask(mask, c.dims())?;
    if y.tensor().shape() != c.tensor().shape() {
        return Err(Error::shape("adjoint_a", c.tensor().shape(), y.tensor().shape()));
    }
    let img = ifft2c(&cplx::apply_mask(y.tensor(), mask)?)?;
    reduce(&img, c)
}

/// Root-sum-of-squares image `(Σ_k |F⁻¹(y_k)|²)^{1/2}`.
pub fn rss<R: Real>(y_full: &KSpace<R>) -> Result<Tensor<R>> {
    let coil_images = ifft2c(y_full.tensor())?;
    let (h, w) = y_full.dims();
    let n = h * w;
    let mut acc = vec![R::zero(); n];
    for plane in coil_images.data().chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(plane) {
            *a += v * v;
        }
    }
    Tensor::new([h, w], acc.into_iter().map(|v| v.sqrt()).collect())
}

/// Full (unmasked) predicted k-space `F ∘ E_C (x)`.
pub fn predict_kspace<R: Real>(x: &ComplexImage<R>, c: &CoilSensitivities<R>) -> Result<KSpace<R>> {
    KSpace::new(fft2c(&expand(x, c)?)?, false)
}

fn check_mask<R: Real>(mask: &Tensor<R>, dims: (usize, usize)) -> Result<()> {
    mask.expect_shape("mask", &[dims.0, dims.1])
}

/// Differentiable `A(x)` on a tape; `c` may itself be a tracked var.
pub fn forward_a_var<R: Real>(tape: &Tape<R>, x: &Var<R>, c: &Var<R>, mask: &Rc<Tensor<R>>) -> Result<Var<R>> {
    let k = tape.fft2c(&tape.expand(x, c)?)?;
    tape.apply_mask(&k, mask)
}

/// Differentiable `A*(y)` on a tape.
pub fn adjoint_a_var<R: Real>(tape: &Tape<R>, y: &Var<R>, c: &Var<R>, mask: &Rc<Tensor<R>>) -> Result<Var<R>> {
    let img = tape.ifft2c(&tape.apply_mask(y, mask)?)?;
    tape.reduce(&img, c)
}

/// Differentiable `F ∘ E_C (x)`.
pub fn predict_kspace_var<R: Real>(tape: &Tape<R>, x: &Var<R>, c: &Var<R>) -> Result<Var<R>> {
    tape.fft2c(&tape.expand(x, c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_uniform_coil_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ComplexImage::new(rand_t(&[2, 6, 5], &mut rng)).unwrap();
        let c = CoilSensitivities::uniform(6, 5);
        let e = expand(&x, &c).unwrap();
        assert_eq!(e.data(), x.tensor().data());
        assert_eq!(reduce(&e, &c).unwrap(), x);

        let ones = Tensor::ones([6, 5]);
        let k = forward_a(&x, &c, &ones).unwrap();
        assert_eq!(k.tensor().data(), fft2c(x.tensor()).unwrap().data());
        let back = adjoint_a(&k, &c, &ones).unwrap();
        assert_eq!(back.tensor(), &ifft2c(k.tensor()).unwrap().reshape([2, 6, 5]).unwrap());
    }

    #[test]
    fn zero_coil_gives_zero_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = ComplexImage::new(rand_t(&[2, 4, 4], &mut rng)).unwrap();
        let mut maps = rand_t(&[3, 2, 4, 4], &mut rng);
        maps.data_mut()[32..64].fill(0.0);
        let c = CoilSensitivities::new(maps).unwrap();
        let e = expand(&x, &c).unwrap();
        assert!(e.index_axis0(1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reduce_expand_scales_by_coil_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ComplexImage::new(rand_t(&[2, 5, 7], &mut rng)).unwrap();
        let c = CoilSensitivities::new(rand_t(&[4, 2, 5, 7], &mut rng)).unwrap();
        let got = reduce(&expand(&x, &c).unwrap(), &c).unwrap();
        // direct: Σ_k |C_k|² x, computed per pixel from the raw planes
        let n = 35;
        let cm = c.tensor().data();
        let xd = x.tensor().data();
        for p in 0..n {
            let e: f64 = (0..4).map(|k| cm[k * 2 * n + p].powi(2) + cm[k * 2 * n + n + p].powi(2)).sum();
            assert!((got.tensor().data()[p] - e * xd[p]).abs() < 1e-12);
            assert!((got.tensor().data()[n + p] - e * xd[n + p]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_maps_make_reduce_expand_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = ComplexImage::new(rand_t(&[2, 6, 6], &mut rng)).unwrap();
        let c = CoilSensitivities::normalized(rand_t(&[3, 2, 6, 6], &mut rng), 1e-9).unwrap();
        let back = reduce(&expand(&x, &c).unwrap(), &c).unwrap();
        assert!(back.tensor().sub(x.tensor()).unwrap().norm() < 1e-12);
    }

    #[test]
    fn mask_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = ComplexImage::new(rand_t(&[2, 8, 8], &mut rng)).unwrap();
        let c = CoilSensitivities::normalized(rand_t(&[2, 2, 8, 8], &mut rng), 1e-9).unwrap();
        let mask = Tensor::from_fn([8, 8], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let once = forward_a(&x, &c, &mask).unwrap();
        let twice = once.masked(&mask).unwrap();
        assert_eq!(once.tensor(), twice.tensor());
    }

    #[test]
    fn rss_of_split_coil_matches_single_coil() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = rand_t(&[1, 2, 6, 6], &mut rng);
        let one = rss(&KSpace::new(y.clone(), false).unwrap()).unwrap();
        let half = y.scale(std::f64::consts::FRAC_1_SQRT_2);
        let two = Tensor::stack(&[half.index_axis0(0), half.index_axis0(0)]).unwrap();
        let split = rss(&KSpace::new(two, false).unwrap()).unwrap();
        assert!(one.sub(&split).unwrap().norm() < 1e-12);
        let direct = cplx::cabs(&ifft2c(&y).unwrap()).unwrap().reshape([6, 6]).unwrap();
        assert!(one.sub(&direct).unwrap().norm() < 1e-12);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let x = ComplexImage::<f64>::zeros(4, 4);
        let c = CoilSensitivities::uniform(4, 5);
        assert!(expand(&x, &c).is_err());
        let c = CoilSensitivities::uniform(4, 4);
        assert!(forward_a(&x, &c, &Tensor::ones([4, 5])).is_err());
        let y = KSpace::new(Tensor::zeros([2, 2, 4, 4]), true).unwrap();
        assert!(adjoint_a(&y, &c, &Tensor::ones([4, 4])).is_err());
    }
}

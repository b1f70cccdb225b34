//! Centered FFT and the SENSE forward model against explicit DFT matrices.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use vsharp::fft::{fft2c, ifft2c};
use vsharp::mri::{self, CoilSensitivities, ComplexImage, KSpace};
use vsharp::Tensor;

fn random_mask(h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn([h, w], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

fn instance(h: usize, w: usize, nc: usize, seed: u64) -> (ComplexImage<f64>, KSpace<f64>, CoilSensitivities<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let x = ComplexImage::new(random_tensor(&[2, h, w], &mut r)).unwrap();
    let y = KSpace::new(random_tensor(&[nc, 2, h, w], &mut r), false).unwrap();
    let c = CoilSensitivities::new(random_tensor(&[nc, 2, h, w], &mut r)).unwrap();
    let m = random_mask(h, w, &mut r);
    (x, y, c, m)
}

#[test]
fn fft_matches_dft_matrix_on_even_and_odd_sizes() {
    for (h, w) in [(1, 1), (2, 3), (5, 4), (7, 9), (8, 8), (16, 11)] {
        let mut r = rng((h * 100 + w) as u64);
        let x = random_tensor(&[3, 2, h, w], &mut r);
        let planes = to_complex(&x);
        for inverse in [false, true] {
            let ours = if inverse { ifft2c(&x) } else { fft2c(&x) }.unwrap();
            let want: Vec<_> = planes.iter().map(|p| dft2(p, h, w, inverse)).collect();
            let want = from_complex(&want, x.shape());
            assert!(rel(&ours, &want) < 1e-12, "{h}x{w} inverse={inverse}: {}", rel(&ours, &want));
        }
    }
}

#[test]
fn forward_and_adjoint_match_oracles() {
    for (h, w, nc) in [(6, 6, 1), (8, 5, 3), (9, 12, 2)] {
        let (x, y, c, m) = instance(h, w, nc, 7 + nc as u64);
        let ax = mri::forward_a(&x, &c, &m).unwrap();
        assert!(rel(ax.tensor(), &forward_oracle(x.tensor(), c.tensor(), m.data())) < 1e-12);
        let aty = mri::adjoint_a(&y, &c, &m).unwrap();
        assert!(rel(aty.tensor(), &adjoint_oracle(y.tensor(), c.tensor(), m.data())) < 1e-12);
    }
}

#[test]
fn normal_operator_is_hermitian_psd() {
    let (_, _, c, m) = instance(5, 4, 2, 3);
    let g = gram(&dense_forward(c.tensor(), m.data()));
    let n = g.len();
    for i in 0..n {
        for j in 0..n {
            assert!((g[i][j] - g[j][i].conj()).norm() < 1e-12);
        }
    }
    // Rayleigh quotients of random vectors are non-negative.
    let mut r = rng(11);
    for _ in 0..20 {
        let v: Vec<_> = (0..n)
            .map(|_| num_complex::Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let q: num_complex::Complex64 = (0..n).map(|i| v[i].conj() * (0..n).map(|j| g[i][j] * v[j]).sum::<num_complex::Complex64>()).sum();
        assert!(q.re >= -1e-12 && q.im.abs() < 1e-10);
    }
}

#[test]
fn expand_then_reduce_with_normalized_maps_is_identity_on_support() {
    let mut r = rng(5);
    let c = CoilSensitivities::normalized(random_tensor(&[3, 2, 7, 6], &mut r), 1e-9).unwrap();
    let x = ComplexImage::new(random_tensor(&[2, 7, 6], &mut r)).unwrap();
    let back = mri::reduce(&mri::expand(&x, &c).unwrap(), &c).unwrap();
    assert!(rel(back.tensor(), x.tensor()) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_round_trip_and_parseval(h in 4usize..=64, w in 4usize..=64, seed in any::<u64>()) {
        let x = random_tensor(&[2, 2, h, w], &mut rng(seed));
        let k = fft2c(&x).unwrap();
        prop_assert!((k.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        prop_assert!(rel(&ifft2c(&k).unwrap(), &x) < 1e-12);
        prop_assert!(rel(&fft2c(&ifft2c(&x).unwrap()).unwrap(), &x) < 1e-12);
    }

    #[test]
    fn fft_is_linear(h in 4usize..=32, w in 4usize..=32, a in -3.0f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&[2, h, w], &mut r);
        let y = random_tensor(&[2, h, w], &mut r);
        let lhs = fft2c(&x.scale(a).add(&y).unwrap()).unwrap();
        let rhs = fft2c(&x).unwrap().scale(a).add(&fft2c(&y).unwrap()).unwrap();
        prop_assert!(rel(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn sense_operator_is_adjoint(h in 4usize..=24, w in 4usize..=24, nc in 1usize..=4, seed in any::<u64>()) {
        let (x, y, c, m) = instance(h, w, nc, seed);
        let lhs = inner(mri::forward_a(&x, &c, &m).unwrap().tensor(), y.tensor());
        let rhs = inner(x.tensor(), mri::adjoint_a(&y, &c, &m).unwrap().tensor());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn fft_is_adjoint_of_ifft(h in 4usize..=40, w in 4usize..=40, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&[2, h, w], &mut r);
        let y = random_tensor(&[2, h, w], &mut r);
        let lhs = inner(&fft2c(&x).unwrap(), &y);
        let rhs = inner(&x, &ifft2c(&y).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }
}

//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls the library's numerics: transforms are explicit DFT
//! matrices, operators are assembled entry by entry, and gradients are
//! central finite differences.

#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsharp::autodiff::{Tape, Var};
use vsharp::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero: `|v| ∈ [lo, 1]` with random sign.
pub fn random_away_from_zero(shape: &[usize], lo: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(lo..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Complex planes of a `[.., 2, H, W]` tensor as `(plane, row-major values)`.
pub fn to_complex(t: &Tensor<f64>) -> Vec<Vec<C64>> {
    let s = t.shape();
    let hw = s[s.len() - 2] * s[s.len() - 1];
    t.data()
        .chunks_exact(2 * hw)
        .map(|p| (0..hw).map(|i| C64::new(p[i], p[hw + i])).collect())
        .collect()
}

pub fn from_complex(planes: &[Vec<C64>], shape: &[usize]) -> Tensor<f64> {
    let mut data = Vec::new();
    for p in planes {
        data.extend(p.iter().map(|c| c.re));
        data.extend(p.iter().map(|c| c.im));
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Centered orthonormal DFT matrix: `F[k][j] = exp(−2πi (k−c)(j−c)/N)/√N`
/// with `c = ⌊N/2⌋`, i.e. `fftshift ∘ DFT ∘ ifftshift`.
pub fn centered_dft(n: usize, inverse: bool) -> Vec<Vec<C64>> {
    let c = (n / 2) as f64;
    let sign = if inverse { 1.0 } else { -1.0 };
    let s = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|j| C64::from_polar(s, sign * 2.0 * PI * (k as f64 - c) * (j as f64 - c) / n as f64))
                .collect()
        })
        .collect()
}

/// 2D centered DFT of one `H×W` plane by explicit matrix products.
pub fn dft2(plane: &[C64], h: usize, w: usize, inverse: bool) -> Vec<C64> {
    let fh = centered_dft(h, inverse);
    let fw = centered_dft(w, inverse);
    let mut rows = vec![C64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for k in 0..w {
            rows[r * w + k] = (0..w).map(|j| fw[k][j] * plane[r * w + j]).sum();
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); h * w];
    for k in 0..h {
        for c in 0..w {
            out[k * w + c] = (0..h).map(|j| fh[k][j] * rows[j * w + c]).sum();
        }
    }
    out
}

/// `M ⊙ F(C_k ⊙ x)` for every coil.
pub fn forward_oracle(x: &Tensor<f64>, maps: &Tensor<f64>, mask: &[f64]) -> Tensor<f64> {
    let s = maps.shape();
    let (h, w) = (s[2], s[3]);
    let xc = &to_complex(x)[0];
    let planes: Vec<Vec<C64>> = to_complex(maps)
        .iter()
        .map(|c| {
            let coil: Vec<C64> = c.iter().zip(xc).map(|(a, b)| a * b).collect();
            dft2(&coil, h, w, false).iter().zip(mask).map(|(v, m)| v * m).collect()
        })
        .collect();
    from_complex(&planes, s)
}

/// `Σ_k conj(C_k) ⊙ F⁻¹(M ⊙ y_k)`.
pub fn adjoint_oracle(y: &Tensor<f64>, maps: &Tensor<f64>, mask: &[f64]) -> Tensor<f64> {
    let s = maps.shape();
    let (h, w) = (s[2], s[3]);
    let mut acc = vec![C64::new(0.0, 0.0); h * w];
    for (yk, ck) in to_complex(y).iter().zip(to_complex(maps)) {
        let masked: Vec<C64> = yk.iter().zip(mask).map(|(v, m)| v * m).collect();
        let img = dft2(&masked, h, w, true);
        for (a, (c, v)) in acc.iter_mut().zip(ck.iter().zip(img)) {
            *a += c.conj() * v;
        }
    }
    from_complex(&[acc], &[2, h, w])
}

/// Real inner product `Re Σ conj(a) b` of two equally shaped tensors.
pub fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = b.data().iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

/// Dense complex Gram-style matrix of `A` (columns = unit pixels) built from
/// the DFT-matrix oracle.
pub fn dense_forward(maps: &Tensor<f64>, mask: &[f64]) -> Vec<Vec<C64>> {
    let s = maps.shape();
    let (h, w) = (s[2], s[3]);
    let n = h * w;
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = Tensor::zeros([2, h, w]);
        e.data_mut()[j] = 1.0;
        let col = forward_oracle(&e, maps, mask);
        cols.push(to_complex(&col).concat());
    }
    cols
}

/// Solve `(G + shift·I) x = b` for Hermitian positive definite `G` by
/// Gaussian elimination with partial pivoting.
pub fn solve_complex(g: &[Vec<C64>], shift: f64, b: &[C64]) -> Vec<C64> {
    let n = b.len();
    let mut a: Vec<Vec<C64>> = (0..n)
        .map(|i| {
            let mut row = g[i].clone();
            row[i] += shift;
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / p;
            if f != C64::new(0.0, 0.0) {
                for c in col..=n {
                    let v = a[col][c];
                    a[r][c] -= f * v;
                }
            }
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let s: C64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    x
}

/// `A*A` from the column list of `A`.
pub fn gram(cols: &[Vec<C64>]) -> Vec<Vec<C64>> {
    cols.iter()
        .map(|ci| cols.iter().map(|cj| ci.iter().zip(cj).map(|(a, b)| a.conj() * b).sum()).collect())
        .collect()
}

/// Outcome of a gradient check.
#[derive(Debug)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)` between autodiff and
/// central differences for coordinates of `inputs[which]`.
///
/// `f` builds a scalar loss on a fresh tape from leaves of `inputs`. At most
/// `max_coords` coordinates are probed (chosen by `rng`).
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    which: usize,
    max_coords: usize,
    rng: &mut impl Rng,
    f: &dyn Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>,
) -> GradCheck {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(&loss).unwrap();
    let g = grads.wrt_or_zero(&vars[which]);

    let eval = |t: &Tensor<f64>| {
        let tape = Tape::inference();
        let mut ins: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        ins[which] = tape.constant(t.clone());
        f(&tape, &ins).item()
    };
    let n = inputs[which].len();
    let coords: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        (0..max_coords).map(|_| rng.random_range(0..n)).collect()
    };
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    for &i in &coords {
        let mut p = inputs[which].clone();
        p.data_mut()[i] += h;
        let fp = eval(&p);
        p.data_mut()[i] -= 2.0 * h;
        let fm = eval(&p);
        let num = (fp - fm) / (2.0 * h);
        let ana = g.data()[i];
        let r = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
        max_rel = max_rel.max(r);
    }
    GradCheck {
        max_rel,
        checked: coords.len(),
    }
}

/// `Σ r ⊙ v` with a fixed random weighting `r`, turning any output into a
/// scalar whose gradient exercises the full vector-Jacobian product.
pub fn weighted_sum(tape: &Tape<f64>, v: &Var<f64>, seed: u64) -> Var<f64> {
    let mut r = rng(seed);
    let weights = random_tensor(v.shape(), &mut r);
    let w = tape.constant(weights);
    tape.sum(&tape.mul(v, &w).unwrap())
}

/// Mean SSIM computed one window at a time: both images divided by the peak
/// of `v`, 7×7 windows with population statistics, stride 1, valid windows
/// only, `c₁ = 0.01`, `c₂ = 0.03`.
pub fn ssim_bruteforce(v: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    let (h, wd) = (v.shape()[0], v.shape()[1]);
    let peak = v.data().iter().copied().fold(f64::MIN, f64::max);
    let a: Vec<f64> = v.data().iter().map(|x| x / peak).collect();
    let b: Vec<f64> = w.data().iter().map(|x| x / peak).collect();
    let (k, c1, c2) = (7, 0.01, 0.03);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - k {
        for x in 0..=wd - k {
            let idx: Vec<usize> = (0..k).flat_map(|dy| (0..k).map(move |dx| (y + dy) * wd + x + dx)).collect();
            let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
            let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
            let va = idx.iter().map(|&i| (a[i] - ma).powi(2)).sum::<f64>() / n;
            let vb = idx.iter().map(|&i| (b[i] - mb).powi(2)).sum::<f64>() / n;
            let cov = idx.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / n;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// 15×15 Laplacian of Gaussian, σ = 2.5, shifted to zero mean, applied with
/// zero padding by direct summation.
pub fn log_oracle(v: &Tensor<f64>) -> Vec<f64> {
    let (h, w) = (v.shape()[0] as isize, v.shape()[1] as isize);
    let s2: f64 = 2.5 * 2.5;
    let mut kern = [[0.0; 15]; 15];
    for (i, row) in kern.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 7.0, j as f64 - 7.0);
            let q = (x * x + y * y) / (2.0 * s2);
            *k = (q - 1.0) * (-q).exp() / (PI * s2 * s2);
        }
    }
    let mean = kern.iter().flatten().sum::<f64>() / 225.0;
    let mut out = vec![0.0; (h * w) as usize];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for i in 0..15isize {
                for j in 0..15isize {
                    let (rr, cc) = (r + i - 7, c + j - 7);
                    if (0..h).contains(&rr) && (0..w).contains(&cc) {
                        acc += (kern[i as usize][j as usize] - mean) * v.data()[(rr * w + cc) as usize];
                    }
                }
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

/// `‖LoG v − LoG w‖_p / ‖LoG v‖_p`.
pub fn hfen_oracle(v: &Tensor<f64>, w: &Tensor<f64>, p: i32) -> f64 {
    let (lv, lw) = (log_oracle(v), log_oracle(w));
    let norm = |it: &mut dyn Iterator<Item = f64>| -> f64 {
        if p == 1 {
            it.map(f64::abs).sum()
        } else {
            it.map(|x| x * x).sum::<f64>().sqrt()
        }
    };
    norm(&mut lv.iter().zip(&lw).map(|(a, b)| a - b)) / norm(&mut lv.iter().copied())
}

/// Complex moduli of a `[.., 2, H, W]` tensor.
pub fn moduli(t: &Tensor<f64>) -> Vec<f64> {
    to_complex(t).into_iter().flatten().map(|z| z.norm()).collect()
}

pub mod cases;

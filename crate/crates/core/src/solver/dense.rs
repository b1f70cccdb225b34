//! Dense-matrix form of the measurement operator for small problems.
//!
//! Used to solve the x-subproblem and the quadratically regularised
//! least-squares problem exactly, as references for the iterative solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mri::{self, CoilSensitivities, ComplexImage, KSpace};
use crate::tensor::{Real, Tensor};

/// Largest image (in pixels) accepted for dense assembly.
pub const MAX_PIXELS: usize = 64 * 64;

/// Explicit matrix of `A` with rows indexed by `(coil, ky, kx)` and columns
/// by pixel, row-major.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: DMatrix<Complex64>,
    pub height: usize,
    pub width: usize,
    pub coils: usize,
}

/// Flatten `[.., 2, H, W]` into complex entries, plane by plane.
pub fn to_vector<R: Real>(x: &Tensor<R>) -> DVector<Complex64> {
    let hw: usize = x.shape()[x.rank() - 2..].iter().product();
    let mut out = Vec::with_capacity(x.len() / 2);
    for p in x.data().chunks_exact(2 * hw) {
        out.extend((0..hw).map(|i| Complex64::new(p[i].f64(), p[hw + i].f64())));
    }
    DVector::from_vec(out)
}

pub fn from_vector<R: Real>(v: &DVector<Complex64>, shape: &[usize]) -> Result<Tensor<R>> {
    let hw: usize = shape[shape.len() - 2..].iter().product();
    if v.len() * 2 != shape.iter().product::<usize>() {
        return Err(Error::shape("from_vector", shape, v.len()));
    }
    let mut data = Vec::with_capacity(2 * v.len());
    for chunk in v.as_slice().chunks_exact(hw) {
        data.extend(chunk.iter().map(|c| R::of(c.re)));
        data.extend(chunk.iter().map(|c| R::of(c.im)));
    }
    Tensor::new(shape.to_vec(), data)
}

impl DenseOperator {
    /// Assemble by applying [`mri::forward_a`] to every unit pixel.
    pub fn assemble(maps: &CoilSensitivities<f64>, mask: &Tensor<f64>) -> Result<Self> {
        let (h, w) = maps.dims();
        let n = h * w;
        if n > MAX_PIXELS {
            return Err(Error::InvalidArgument(format!("{h}x{w} is too large for dense assembly")));
        }
        let nc = maps.num_coils();
        let mut matrix = DMatrix::zeros(nc * n, n);
        for j in 0..n {
            let mut e = Tensor::zeros([2, h, w]);
            e.data_mut()[j] = 1.0;
            let col = mri::forward_a(&ComplexImage::new(e)?, maps, mask)?;
            matrix.set_column(j, &to_vector(col.tensor()));
        }
        Ok(Self {
            matrix,
            height: h,
            width: w,
            coils: nc,
        })
    }

    pub fn gram(&self) -> DMatrix<Complex64> {
        self.matrix.adjoint() * &self.matrix
    }

    /// `λ_max(A*A)`.
    pub fn lipschitz(&self) -> f64 {
        let eig = nalgebra::SymmetricEigen::new(self.gram());
        eig.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    pub fn adjoint_apply(&self, y: &KSpace<f64>) -> DVector<Complex64> {
        self.matrix.adjoint() * to_vector(y.tensor())
    }

    fn solve_shifted(&self, shift: f64, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let n = self.matrix.ncols();
        let system = self.gram() + DMatrix::<Complex64>::identity(n, n) * Complex64::new(shift, 0.0);
        let chol = nalgebra::Cholesky::new(system)
            .ok_or_else(|| Error::InvalidArgument("shifted normal matrix is not positive definite".into()))?;
        Ok(chol.solve(rhs))
    }
}

/// Exact x-subproblem solution
/// `(A*A + ρI)⁻¹ (A*(ỹ) + ρ z − u)` with its relative residual.
pub fn closed_form_x(
    z: &ComplexImage<f64>,
    u: &ComplexImage<f64>,
    rho: f64,
    op: &DenseOperator,
    y_tilde: &KSpace<f64>,
) -> Result<(ComplexImage<f64>, f64)> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let rhs = op.adjoint_apply(y_tilde) + to_vector(z.tensor()) * Complex64::new(rho, 0.0) - to_vector(u.tensor());
    let x = op.solve_shifted(rho, &rhs)?;
    let resid = (op.gram() * &x + &x * Complex64::new(rho, 0.0) - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
    Ok((ComplexImage::new(from_vector(&x, &[2, op.height, op.width])?)?, resid))
}

/// Minimiser of `½‖A x − ỹ‖² + λ‖x‖²`, i.e. `(A*A + 2λI)⁻¹ A*(ỹ)`.
pub fn quadratic_optimum(op: &DenseOperator, y_tilde: &KSpace<f64>, lambda: f64) -> Result<ComplexImage<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let x = op.solve_shifted(2.0 * lambda, &op.adjoint_apply(y_tilde))?;
    ComplexImage::new(from_vector(&x, &[2, op.height, op.width])?)
}

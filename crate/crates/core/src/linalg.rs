//! Dense linear algebra on datasets: covariance, gram, min-norm interpolation,
//! symmetric eigendecompositions and matrix powers.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::problem::Dataset;

/// Eigendecomposition `M = Q diag(values) Qᵀ` of a symmetric matrix, values
/// sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SymmetricEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricEig {
    pub fn new(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetric eigendecomposition needs a square matrix");
        let eig = SymmetricEigen::new(m.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_columns(
            &order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>(),
        );
        SymmetricEig { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Q diag(f(values)) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        &scaled * self.vectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|v| v)
    }
}

/// `Σ = XᵀX / n`.
pub fn empirical_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    x.tr_mul(x) / n
}

/// `A = XXᵀ`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x * x.transpose()
}

/// Eigendecomposition of the gram matrix, rejecting it as singular when
/// `λ_min <= d·ε·λ_max`.
pub fn checked_gram_eig(gram: &DMatrix<f64>, d: usize) -> Result<SymmetricEig> {
    let eig = SymmetricEig::new(gram);
    let threshold = d as f64 * f64::EPSILON * eig.max().max(0.0);
    if !(eig.min() > threshold) {
        return Err(Error::SingularGram {
            min_eig: eig.min(),
            threshold,
        });
    }
    Ok(eig)
}

/// `A⁻¹ b` for a symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::Numeric("cholesky factorization failed".into()))?;
    Ok(chol.solve(b))
}

/// Minimum-norm interpolator `ŵ = Xᵀ A⁻¹ y`.
pub fn min_norm_interpolator(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let a = gram(x);
    checked_gram_eig(&a, x.ncols())?;
    let alpha = spd_solve(&a, y)?;
    Ok(x.tr_mul(&alpha))
}

/// `M^k` by repeated squaring.
pub fn matrix_power(m: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    assert!(m.is_square());
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// `‖X(I−ηΣ)^k − (I−ηA/n)^k X‖_F`, both powers formed by repeated squaring.
pub fn commuting_identity_residual(data: &Dataset, eta: f64, k: u64) -> f64 {
    let x = data.x();
    let n = data.n() as f64;
    let left = DMatrix::identity(data.d(), data.d()) - data.sigma() * eta;
    let right = DMatrix::identity(data.n(), data.n()) - data.gram() * (eta / n);
    let lhs = x * matrix_power(&left, k);
    let rhs = matrix_power(&right, k) * x;
    (lhs - rhs).norm()
}

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEig::new(&m.symmetric_part()).min()
}

//! Population model and finite-sample data.
//!
//! `H` is diagonal in the canonical basis, so `x = H^{1/2} z` is a
//! coordinate-wise scaling of a standard normal vector and the excess risk
//! `½‖w − w*‖²_H` costs `O(d)`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, SymmetricEig};
use crate::seed::{rng_for, STREAM_DATA, STREAM_PRIOR};
use crate::spectra::Spectrum;

/// `(H, w*, ω², σ²)`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    spectrum: Spectrum,
    w_star: DVector<f64>,
    omega2: f64,
    sigma2: f64,
}

impl ProblemInstance {
    pub fn new(spectrum: Spectrum, w_star: DVector<f64>, omega2: f64, sigma2: f64) -> Result<Self> {
        if w_star.len() != spectrum.dim() {
            return Err(Error::DimensionMismatch {
                what: "ground-truth parameter",
                expected: spectrum.dim(),
                got: w_star.len(),
            });
        }
        if !(omega2 > 0.0) || !omega2.is_finite() {
            return Err(Error::invalid(format!("omega2 must be positive, got {omega2}")));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!("sigma2 must be non-negative, got {sigma2}")));
        }
        Ok(ProblemInstance {
            spectrum,
            w_star,
            omega2,
            sigma2,
        })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn d(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Diagonal of `H`.
    pub fn h_diag(&self) -> &[f64] {
        self.spectrum.eigenvalues()
    }

    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(self.h_diag()))
    }

    /// `½ ‖w − w*‖²_H`.
    pub fn excess_risk(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.d() {
            return Err(Error::DimensionMismatch {
                what: "parameter",
                expected: self.d(),
                got: w.len(),
            });
        }
        Ok(self.risk_of(w))
    }

    pub(crate) fn risk_of(&self, w: &DVector<f64>) -> f64 {
        0.5 * self
            .h_diag()
            .iter()
            .zip(w.iter().zip(self.w_star.iter()))
            .map(|(l, (a, b))| l * (a - b) * (a - b))
            .sum::<f64>()
    }

    /// `½ ‖v‖²_H` for a difference vector.
    pub(crate) fn h_norm_sq_half(&self, v: &DVector<f64>) -> f64 {
        0.5 * self.h_diag().iter().zip(v.iter()).map(|(l, a)| l * a * a).sum::<f64>()
    }
}

/// Draw `w* ~ N(0, ω² I)`.
pub fn sample_instance(spectrum: &Spectrum, omega2: f64, sigma2: f64, seed: u64) -> Result<ProblemInstance> {
    if !(omega2 > 0.0) || !omega2.is_finite() {
        return Err(Error::invalid(format!("omega2 must be positive, got {omega2}")));
    }
    let mut rng = rng_for(seed, STREAM_PRIOR);
    let scale = omega2.sqrt();
    let w = DVector::from_fn(spectrum.dim(), |_, _| {
        scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    ProblemInstance::new(spectrum.clone(), w, omega2, sigma2)
}

/// Orthonormal basis of the row space of `X`, built from the gram
/// eigendecomposition `A = W diag(a) Wᵀ`: `U = Xᵀ W diag(a^{-1/2})`.
/// In these coordinates `X U = W diag(a^{1/2})` and `UᵀΣU = diag(a/n)`.
#[derive(Debug, Clone)]
pub struct RowSpace {
    /// d×n, orthonormal columns, ordered like `scales`.
    pub basis: DMatrix<f64>,
    /// n×n, row i is `Uᵀ x_i`.
    pub coords: DMatrix<f64>,
    /// Nonzero eigenvalues of `Σ`, non-increasing.
    pub scales: DVector<f64>,
}

/// Training data with cached `Σ`, `A` and `ŵ`.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    xt: DMatrix<f64>,
    y: DVector<f64>,
    noise: Option<DVector<f64>>,
    sigma: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_eig: SymmetricEig,
    w_hat: DVector<f64>,
    cov_eig: OnceLock<SymmetricEig>,
    row_space: OnceLock<RowSpace>,
}

impl Dataset {
    /// Build from explicit features and labels. `n <= d` is allowed here so
    /// hand-constructed square cases work; sampled datasets require `n < d`.
    pub fn from_data(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::build(x, y, None)
    }

    pub fn with_noise(x: DMatrix<f64>, y: DVector<f64>, noise: DVector<f64>) -> Result<Self> {
        if noise.len() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "noise",
                expected: y.len(),
                got: noise.len(),
            });
        }
        Self::build(x, y, Some(noise))
    }

    fn build(x: DMatrix<f64>, y: DVector<f64>, noise: Option<DVector<f64>>) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one example"));
        }
        if n > d {
            return Err(Error::invalid(format!(
                "interpolation regime needs n <= d, got n={n}, d={d}"
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n,
                got: y.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite entry in features or labels".into()));
        }
        let sigma = linalg::empirical_covariance(&x);
        let gram = linalg::gram(&x);
        let gram_eig = linalg::checked_gram_eig(&gram, d)?;
        let alpha = linalg::spd_solve(&gram, &y)?;
        let w_hat = x.tr_mul(&alpha);
        let resid = (&x * &w_hat - &y).amax();
        let tol = 1e-8 * y.amax().max(1.0);
        if resid > tol {
            return Err(Error::Numeric(format!(
                "min-norm solution does not interpolate: residual {resid:e} > {tol:e}"
            )));
        }
        Ok(Dataset {
            xt: x.transpose(),
            x,
            y,
            noise,
            sigma,
            gram,
            gram_eig,
            w_hat,
            cov_eig: OnceLock::new(),
            row_space: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `Xᵀ`: column `i` is the contiguous example `x_i`.
    pub fn xt(&self) -> &DMatrix<f64> {
        &self.xt
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise(&self) -> Option<&DVector<f64>> {
        self.noise.as_ref()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_eig(&self) -> &SymmetricEig {
        &self.gram_eig
    }

    pub fn w_hat(&self) -> &DVector<f64> {
        &self.w_hat
    }

    /// Largest eigenvalue of `Σ` (= λ_max(A)/n).
    pub fn sigma_max(&self) -> f64 {
        self.gram_eig.max() / self.n() as f64
    }

    /// Full d×d eigendecomposition of `Σ`, computed on first use.
    pub fn covariance_eig(&self) -> &SymmetricEig {
        self.cov_eig.get_or_init(|| SymmetricEig::new(&self.sigma))
    }

    pub fn row_space(&self) -> &RowSpace {
        self.row_space.get_or_init(|| {
            let eig = &self.gram_eig;
            let n = self.n();
            let mut w_scaled = eig.vectors.clone();
            let mut coords = eig.vectors.clone();
            for j in 0..n {
                let a = eig.values[j];
                w_scaled.column_mut(j).scale_mut(1.0 / a.sqrt());
                coords.column_mut(j).scale_mut(a.sqrt());
            }
            RowSpace {
                basis: self.x.tr_mul(&w_scaled),
                coords,
                scales: eig.values.map(|a| a / n as f64),
            }
        })
    }
}

/// Draw `n` examples: `x_i = H^{1/2} z_i`, `y_i = ⟨w*, x_i⟩ + ξ_i`.
pub fn sample_dataset(problem: &ProblemInstance, n: usize, seed: u64) -> Result<Dataset> {
    let d = problem.d();
    if n == 0 || n >= d {
        return Err(Error::invalid(format!(
            "sampled datasets need 1 <= n < d, got n={n}, d={d}"
        )));
    }
    let mut rng = rng_for(seed, STREAM_DATA);
    let scales: Vec<f64> = problem.h_diag().iter().map(|l| l.sqrt()).collect();
    // row-major fill so the stream order is (example, coordinate)
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = scales[j] * z;
        }
    }
    let noise = if problem.sigma2() > 0.0 {
        let dist = Normal::new(0.0, problem.sigma2().sqrt())
            .map_err(|e| Error::Numeric(format!("noise distribution: {e}")))?;
        DVector::from_fn(n, |_, _| dist.sample(&mut rng))
    } else {
        DVector::zeros(n)
    };
    let y = &x * problem.w_star() + &noise;
    Dataset::with_noise(x, y, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logpoly_problem(d: usize, seed: u64) -> ProblemInstance {
        sample_instance(&Spectrum::logpoly(d).unwrap(), 1.0, 1.0, seed).unwrap()
    }

    #[test]
    fn prior_variance_matches() {
        let s = Spectrum::logpoly(32).unwrap();
        let mean: f64 = (0..1000)
            .map(|seed| sample_instance(&s, 2.0, 0.0, seed).unwrap().w_star().norm_squared() / 32.0)
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 2.0).abs() <= 0.05 * 2.0, "{mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = logpoly_problem(16, 4);
        let b = logpoly_problem(16, 4);
        assert_eq!(a.w_star(), b.w_star());
        let da = sample_dataset(&a, 8, 9).unwrap();
        let db = sample_dataset(&b, 8, 9).unwrap();
        assert_eq!(da.x(), db.x());
        assert_eq!(da.y(), db.y());
    }

    #[test]
    fn full_scale_sampling_shapes() {
        let p = logpoly_problem(256, 0);
        let data = sample_dataset(&p, 128, 0).unwrap();
        assert_eq!(data.x().shape(), (128, 256));
        assert!((data.x() * data.w_hat() - data.y()).amax() <= 1e-8 * data.y().amax().max(1.0));
    }

    #[test]
    fn zero_noise_labels_are_exact() {
        let s = Spectrum::poly(10, 1.0).unwrap();
        let p = sample_instance(&s, 1.0, 0.0, 3).unwrap();
        let data = sample_dataset(&p, 4, 3).unwrap();
        assert_eq!(data.noise().unwrap().amax(), 0.0);
        assert_eq!(data.y(), &(data.x() * p.w_star()));
    }

    #[test]
    fn rejects_non_interpolating_sizes() {
        let p = logpoly_problem(8, 1);
        assert!(sample_dataset(&p, 8, 0).is_err());
        assert!(sample_dataset(&p, 0, 0).is_err());
        assert!(sample_instance(p.spectrum(), 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn feature_second_moment_matches_spectrum() {
        let s = Spectrum::poly(4, 1.0).unwrap();
        let p = sample_instance(&s, 1.0, 1.0, 0).unwrap();
        let draws = 2000usize;
        let mut sum = DMatrix::<f64>::zeros(4, 4);
        let mut sumsq = DMatrix::<f64>::zeros(4, 4);
        for seed in 0..(draws as u64 / 2) {
            let data = sample_dataset(&p, 2, seed).unwrap();
            for row in data.x().row_iter() {
                let outer = row.transpose() * row;
                sumsq += outer.map(|v| v * v);
                sum += outer;
            }
        }
        let m = draws as f64;
        for i in 0..4 {
            for j in 0..4 {
                let mean = sum[(i, j)] / m;
                let var = sumsq[(i, j)] / m - mean * mean;
                let se = (var / m).sqrt();
                let target = if i == j { s.lambda(i + 1) } else { 0.0 };
                assert!((mean - target).abs() <= 3.0 * se + 1e-12, "({i},{j}) {mean} vs {target}");
            }
        }
    }

    #[test]
    fn excess_risk_cases() {
        let s = Spectrum::custom(vec![1.0, 0.25]).unwrap();
        let p = ProblemInstance::new(s, DVector::from_vec(vec![1.0, -1.0]), 1.0, 0.0).unwrap();
        assert_eq!(p.excess_risk(p.w_star()).unwrap(), 0.0);
        let w = DVector::from_vec(vec![3.0, 1.0]);
        assert!((p.excess_risk(&w).unwrap() - 2.5).abs() < 1e-15);
        let zero = DVector::zeros(2);
        assert!((p.excess_risk(&zero).unwrap() - 0.5 * (1.0 + 0.25)).abs() < 1e-15);
        assert!(p.excess_risk(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn row_space_coordinates() {
        let p = logpoly_problem(12, 2);
        let data = sample_dataset(&p, 5, 2).unwrap();
        let rs = data.row_space();
        assert!((rs.basis.tr_mul(&rs.basis) - DMatrix::identity(5, 5)).norm() < 1e-10);
        assert!((data.x() * &rs.basis - &rs.coords).norm() < 1e-10);
        let proj = rs.basis.tr_mul(&(data.sigma() * &rs.basis));
        let diag = DMatrix::from_diagonal(&rs.scales);
        assert!((proj - diag).norm() < 1e-10);
    }
}

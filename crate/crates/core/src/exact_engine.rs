//! Exact expected SGD error matrices.
//!
//! With `E_k := E_sgd[(w_k − ŵ)(w_k − ŵ)ᵀ]` and `w₀ = 0`,
//!
//! ```text
//! E_{k+1} = G∘E_k + η²(M − M̃)∘E_k,   E₀ = ŵŵᵀ
//! G∘J = (I−ηΣ) J (I−ηΣ),  M∘J = (1/n) Σ_i (x_iᵀJx_i) x_i x_iᵀ,  M̃∘J = ΣJΣ
//! ```
//!
//! Every `E_k` lives on `rowspace(X) ⊗ rowspace(X)`, so the recursion runs in
//! the n-dimensional row-space coordinates of [`crate::problem::RowSpace`],
//! where `Σ` is diagonal and one step costs `O(n³)`. Full d×d matrices are
//! only materialized at requested checkpoints.
//!
//! [`brute_force_expected_error`] enumerates all `nᵗ` index sequences in the
//! canonical basis and is the independent oracle for the recursion.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::frob;
use crate::problem::{Dataset, ProblemInstance};
use crate::trajectories::{gd_iterate, powu};

/// Largest number of index sequences [`brute_force_expected_error`] will enumerate.
pub const PATH_BUDGET: u128 = 1_000_000;

/// Largest dimension accepted by [`fluctuation_error_summation`].
pub const SUMMATION_MAX_DIM: usize = 32;

/// `G∘J = (I−ηΣ) J (I−ηΣ)`.
pub fn apply_g(sigma: &DMatrix<f64>, eta: f64, j: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sigma.nrows();
    let p = DMatrix::identity(d, d) - sigma * eta;
    &p * j * &p
}

/// `M∘J = (1/n) Σ_i (x_iᵀ J x_i) x_i x_iᵀ`, in `O(n d²)`.
pub fn apply_m(data: &Dataset, j: &DMatrix<f64>) -> DMatrix<f64> {
    let x = data.x();
    let q = quadratic_forms(x, j);
    weighted_outer_sum(x, &q) / data.n() as f64
}

/// `M̃∘J = Σ J Σ`.
pub fn apply_m_tilde(sigma: &DMatrix<f64>, j: &DMatrix<f64>) -> DMatrix<f64> {
    sigma * j * sigma
}

/// `q_i = x_iᵀ J x_i` for each row of `x`.
fn quadratic_forms(x: &DMatrix<f64>, j: &DMatrix<f64>) -> DVector<f64> {
    let xj = x * j;
    DVector::from_iterator(
        x.nrows(),
        xj.row_iter().zip(x.row_iter()).map(|(a, b)| a.dot(&b)),
    )
}

/// `Σ_i q_i x_i x_iᵀ` for rows `x_i` of `x`.
fn weighted_outer_sum(x: &DMatrix<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= q[i];
    }
    x.tr_mul(&scaled)
}

/// The recursion in row-space coordinates.
struct ReducedRecursion<'a> {
    coords: &'a DMatrix<f64>,
    // C_ab = p_a p_b − η² s_a s_b with p = 1 − η s
    congruence: DMatrix<f64>,
    eta2_over_n: f64,
    e: DMatrix<f64>,
    t: u64,
}

impl<'a> ReducedRecursion<'a> {
    fn new(data: &'a Dataset, eta: f64) -> Self {
        let rs = data.row_space();
        let n = data.n();
        let p = rs.scales.map(|s| 1.0 - eta * s);
        let congruence = DMatrix::from_fn(n, n, |a, b| {
            p[a] * p[b] - eta * eta * rs.scales[a] * rs.scales[b]
        });
        let w = rs.basis.tr_mul(data.w_hat());
        ReducedRecursion {
            coords: &rs.coords,
            congruence,
            eta2_over_n: eta * eta / n as f64,
            e: &w * w.transpose(),
            t: 0,
        }
    }

    fn step(&mut self) {
        let q = quadratic_forms(self.coords, &self.e);
        let fourth = weighted_outer_sum(self.coords, &q);
        let mut next = self.e.component_mul(&self.congruence);
        next += fourth * self.eta2_over_n;
        self.e = next.symmetric_part();
        self.t += 1;
    }

    fn advance_to(&mut self, t: u64) {
        while self.t < t {
            self.step();
        }
    }
}

/// Row-space coordinates of `ŵ_t − ŵ = −(I−ηΣ)^t ŵ`.
fn reduced_gd_error(data: &Dataset, eta: f64, t: u64) -> DVector<f64> {
    let rs = data.row_space();
    let mut v = rs.basis.tr_mul(data.w_hat());
    for (c, s) in v.iter_mut().zip(rs.scales.iter()) {
        *c *= -powu(1.0 - eta * s, t);
    }
    v
}

fn lift(data: &Dataset, reduced: &DMatrix<f64>) -> DMatrix<f64> {
    let u = &data.row_space().basis;
    (u * reduced * u.transpose()).symmetric_part()
}

/// Expected error matrices `E_t` and GD error matrices `Θ₁(t)` at a set of steps.
#[derive(Debug, Clone)]
pub struct ExpectedErrorSequence {
    pub steps: Vec<u64>,
    pub e: Vec<DMatrix<f64>>,
    pub theta1: Vec<DMatrix<f64>>,
}

impl ExpectedErrorSequence {
    fn index(&self, t: u64) -> Option<usize> {
        self.steps.binary_search(&t).ok()
    }

    pub fn e_at(&self, t: u64) -> Option<&DMatrix<f64>> {
        self.index(t).map(|i| &self.e[i])
    }

    pub fn theta1_at(&self, t: u64) -> Option<&DMatrix<f64>> {
        self.index(t).map(|i| &self.theta1[i])
    }

    /// Fluctuation matrix `E_t − Θ₁(t)`.
    pub fn fluctuation_matrix(&self, t: u64) -> Option<DMatrix<f64>> {
        self.index(t).map(|i| &self.e[i] - &self.theta1[i])
    }
}

/// `E_0 … E_t`, all steps kept. Cost `O(t·n³ + t·d²n)`.
pub fn expected_error_recursion(data: &Dataset, eta: f64, t: u64) -> ExpectedErrorSequence {
    let steps: Vec<u64> = (0..=t).collect();
    expected_error_checkpoints(data, eta, &steps).expect("0..=t is strictly increasing")
}

/// `E_t` only at the requested (strictly increasing) steps.
pub fn expected_error_checkpoints(data: &Dataset, eta: f64, steps: &[u64]) -> Result<ExpectedErrorSequence> {
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints must be strictly increasing"));
    }
    let mut rec = ReducedRecursion::new(data, eta);
    let u = &data.row_space().basis;
    let mut seq = ExpectedErrorSequence {
        steps: steps.to_vec(),
        e: Vec::with_capacity(steps.len()),
        theta1: Vec::with_capacity(steps.len()),
    };
    for &t in steps {
        rec.advance_to(t);
        seq.e.push(lift(data, &rec.e));
        let g = u * reduced_gd_error(data, eta, t);
        seq.theta1.push(&g * g.transpose());
    }
    Ok(seq)
}

/// Result of enumerating every index sequence of length `t`.
#[derive(Debug, Clone)]
pub struct BruteForce {
    /// `E_sgd[(w_t − ŵ)(w_t − ŵ)ᵀ]`.
    pub e: DMatrix<f64>,
    /// `E_sgd[w_t]`.
    pub mean: DVector<f64>,
    pub paths: u128,
}

/// Average over all `nᵗ` equally likely index sequences.
pub fn brute_force_expected_error(data: &Dataset, eta: f64, t: u32) -> Result<BruteForce> {
    let n = data.n();
    let paths = (n as u128).checked_pow(t).unwrap_or(u128::MAX);
    if paths > PATH_BUDGET {
        return Err(Error::Budget {
            what: "brute-force SGD path enumeration",
            required: paths,
            limit: PATH_BUDGET,
        });
    }
    let d = data.d();

    fn walk(data: &Dataset, eta: f64, w: DVector<f64>, depth: u32, acc: &mut (DMatrix<f64>, DVector<f64>)) {
        if depth == 0 {
            let err = &w - data.w_hat();
            acc.0.ger(1.0, &err, &err, 1.0);
            acc.1 += &w;
            return;
        }
        for i in 0..data.n() {
            let x = data.xt().column(i);
            let g = eta * (x.dot(&w) - data.y()[i]);
            let next = &w - x * g;
            walk(data, eta, next, depth - 1, acc);
        }
    }

    let zero = || (DMatrix::zeros(d, d), DVector::zeros(d));
    let (sum_e, sum_w) = if t == 0 {
        let mut acc = zero();
        walk(data, eta, DVector::zeros(d), 0, &mut acc);
        acc
    } else {
        let parts: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = data.xt().column(i);
                let w1 = x * (eta * data.y()[i]);
                let mut acc = zero();
                walk(data, eta, w1, t - 1, &mut acc);
                acc
            })
            .collect();
        parts.into_iter().fold(zero(), |mut a, b| {
            a.0 += b.0;
            a.1 += b.1;
            a
        })
    };
    let scale = 1.0 / paths as f64;
    Ok(BruteForce {
        e: (sum_e * scale).symmetric_part(),
        mean: sum_w * scale,
        paths,
    })
}

/// Exact risk terms at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskDecomposition {
    pub t: u64,
    /// `E_sgd[risk(w_t)]` from the second moment `E_sgd[(w_t−w*)(w_t−w*)ᵀ]`.
    pub sgd_risk: f64,
    /// `risk(ŵ_t)`.
    pub gd_risk: f64,
    /// `½⟨E_t − Θ₁(t), H⟩`.
    pub fluctuation: f64,
    /// `tr(E_t)`, used for tolerance scaling.
    pub e_trace: f64,
}

impl RiskDecomposition {
    /// `|sgd_risk − gd_risk − fluctuation|`.
    pub fn residual(&self) -> f64 {
        (self.sgd_risk - self.gd_risk - self.fluctuation).abs()
    }
}

/// Exact decomposition at each checkpoint, without materializing d×d matrices.
pub fn exact_risk_curve(problem: &ProblemInstance, data: &Dataset, eta: f64, ts: &[u64]) -> Result<Vec<RiskDecomposition>> {
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints must be strictly increasing"));
    }
    let rs = data.row_space();
    let u = &rs.basis;
    let mut hu = u.clone();
    for (i, mut row) in hu.row_iter_mut().enumerate() {
        row *= problem.h_diag()[i];
    }
    let h_reduced = u.tr_mul(&hu).symmetric_part();
    let bias_dir = data.w_hat() - problem.w_star();
    let h_bias = DVector::from_iterator(
        bias_dir.len(),
        bias_dir.iter().zip(problem.h_diag()).map(|(a, l)| a * l),
    );
    let interp_risk = problem.h_norm_sq_half(&bias_dir);
    // Uᵀ H (ŵ − w*)
    let cross_dir = u.tr_mul(&h_bias);

    let mut rec = ReducedRecursion::new(data, eta);
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        rec.advance_to(t);
        let v = reduced_gd_error(data, eta, t);
        let e_h = frob(&rec.e, &h_reduced);
        let theta_h = (v.transpose() * &h_reduced * &v)[0];
        let cross = cross_dir.dot(&v);
        let mut sgd_risk = 0.5 * e_h + cross + interp_risk;
        let gd_risk = problem.risk_of(&gd_iterate(data, eta, t));
        let mut fluctuation = 0.5 * (e_h - theta_h);
        // an overflowed second moment is a divergent run, not a NaN
        if !sgd_risk.is_finite() || !fluctuation.is_finite() {
            sgd_risk = f64::INFINITY;
            fluctuation = f64::INFINITY;
        }
        out.push(RiskDecomposition {
            t,
            sgd_risk,
            gd_risk,
            fluctuation,
            e_trace: rec.e.trace(),
        });
    }
    Ok(out)
}

/// `E_sgd[risk(w_t)]` computed as `½⟨E_sgd[(w_t−w*)(w_t−w*)ᵀ], H⟩`.
pub fn exact_sgd_risk(problem: &ProblemInstance, data: &Dataset, eta: f64, t: u64) -> f64 {
    exact_risk_curve(problem, data, eta, &[t]).expect("single checkpoint")[0].sgd_risk
}

/// `½⟨E_t − Θ₁(t), H⟩`.
pub fn fluctuation_error(problem: &ProblemInstance, data: &Dataset, eta: f64, t: u64) -> f64 {
    exact_risk_curve(problem, data, eta, &[t]).expect("single checkpoint")[0].fluctuation
}

/// `(η²/2) Σ_{k<t} ⟨G^{t−1−k}∘(M−M̃)∘E_k, H⟩`, evaluated with the d×d
/// operators in the canonical basis (`d <= SUMMATION_MAX_DIM`).
pub fn fluctuation_error_summation(problem: &ProblemInstance, data: &Dataset, eta: f64, t: u64) -> Result<f64> {
    if data.d() > SUMMATION_MAX_DIM {
        return Err(Error::invalid(format!(
            "summation form is limited to d <= {SUMMATION_MAX_DIM}, got d={}",
            data.d()
        )));
    }
    let sigma = data.sigma();
    let mut e = data.w_hat() * data.w_hat().transpose();
    // accumulated Σ_{k<j} G^{j−1−k}∘(M−M̃)∘E_k
    let mut acc = DMatrix::zeros(data.d(), data.d());
    for _ in 0..t {
        let drive = apply_m(data, &e) - apply_m_tilde(sigma, &e);
        acc = apply_g(sigma, eta, &acc) + &drive;
        e = apply_g(sigma, eta, &e) + drive * (eta * eta);
    }
    Ok(0.5 * eta * eta * frob(&acc, &problem.h_matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::problem::{sample_dataset, sample_instance};
    use crate::spectra::Spectrum;
    use crate::trajectories::sgd_mc_risk;
    use rand::Rng;

    fn micro() -> (ProblemInstance, Dataset) {
        let s = Spectrum::custom(vec![1.0, 1.0]).unwrap();
        let p = ProblemInstance::new(s, DVector::from_vec(vec![0.3, -0.2]), 1.0, 0.0).unwrap();
        let data = Dataset::from_data(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0])).unwrap();
        (p, data)
    }

    fn random(seed: u64, n: usize, d: usize, sigma2: f64) -> (ProblemInstance, Dataset) {
        let s = Spectrum::poly(d, 1.0).unwrap();
        let p = sample_instance(&s, 1.0, sigma2, seed).unwrap();
        let data = sample_dataset(&p, n, seed + 1000).unwrap();
        (p, data)
    }

    fn random_psd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        &b * b.transpose()
    }

    #[test]
    fn g_operator_cases() {
        let j = DMatrix::from_element(3, 3, 1.0);
        let sigma = DMatrix::identity(3, 3) * 0.5;
        assert_eq!(apply_g(&sigma, 0.0, &j), j);
        let i2 = DMatrix::identity(2, 2);
        let got = apply_g(&(DMatrix::identity(2, 2) * 0.5), 1.0, &i2);
        assert!((got - i2 * 0.25).norm() < 1e-15);
        let (_, data) = random(1, 4, 6, 1.0);
        let eta = 1.0 / data.sigma_max();
        let mut rng = crate::seed::rng_for(2, 0);
        for _ in 0..100 {
            let jm = random_psd(&mut rng, 6);
            assert!(min_eigenvalue(&apply_g(data.sigma(), eta, &jm)) >= -1e-12);
        }
    }

    #[test]
    fn m_operator_cases() {
        let (_, data) = micro();
        assert_eq!(apply_m(&data, &DMatrix::zeros(2, 2)), DMatrix::zeros(2, 2));
        let got = apply_m(&data, &DMatrix::from_element(2, 2, 1.0));
        assert!((got - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);

        let one = Dataset::from_data(
            DMatrix::from_row_slice(1, 3, &[0.4, -1.0, 0.3]),
            DVector::from_vec(vec![0.2]),
        )
        .unwrap();
        let mut rng = crate::seed::rng_for(3, 0);
        let j = random_psd(&mut rng, 3);
        let diff = apply_m(&one, &j) - apply_m_tilde(one.sigma(), &j);
        assert!(diff.amax() < 1e-14);
    }

    #[test]
    fn m_tilde_cases() {
        let (_, data) = random(4, 3, 5, 1.0);
        let i = DMatrix::identity(5, 5);
        let sq = data.sigma() * data.sigma();
        assert!((apply_m_tilde(data.sigma(), &i) - sq).norm() < 1e-14);
        let half = DMatrix::identity(3, 3) * 0.5;
        let ones = DMatrix::from_element(3, 3, 1.0);
        assert!((apply_m_tilde(&half, &ones) - ones * 0.25).norm() < 1e-15);
    }

    #[test]
    fn operators_are_self_adjoint() {
        let (_, data) = random(5, 4, 8, 1.0);
        let eta = 0.5 / data.sigma_max();
        let mut rng = crate::seed::rng_for(5, 0);
        for _ in 0..50 {
            let a = random_psd(&mut rng, 8);
            let b = random_psd(&mut rng, 8);
            let checks = [
                (frob(&apply_g(data.sigma(), eta, &a), &b), frob(&a, &apply_g(data.sigma(), eta, &b))),
                (frob(&apply_m(&data, &a), &b), frob(&a, &apply_m(&data, &b))),
                (frob(&apply_m_tilde(data.sigma(), &a), &b), frob(&a, &apply_m_tilde(data.sigma(), &b))),
            ];
            for (l, r) in checks {
                assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()));
            }
        }
    }

    #[test]
    fn m_minus_m_tilde_is_psd_mapping() {
        let (_, data) = random(6, 5, 8, 1.0);
        let mut rng = crate::seed::rng_for(6, 0);
        for _ in 0..100 {
            let j = random_psd(&mut rng, 8);
            let diff = apply_m(&data, &j) - apply_m_tilde(data.sigma(), &j);
            assert!(min_eigenvalue(&diff) >= -1e-10 * j.trace());
        }
    }

    #[test]
    fn divergent_stepsize_reports_infinite_risk() {
        let (p, data) = random(9, 8, 16, 1.0);
        let eta = 20.0 / data.sigma_max();
        let last = exact_risk_curve(&p, &data, eta, &[0, 10, 5000]).unwrap();
        assert!(last[0].sgd_risk.is_finite());
        assert_eq!(last[2].sgd_risk, f64::INFINITY);
        assert!(!last[2].fluctuation.is_nan());
    }

    #[test]
    fn micro_case_recursion_and_brute_force() {
        let (_, data) = micro();
        let seq = expected_error_recursion(&data, 1.0, 1);
        let half = DMatrix::identity(2, 2) * 0.5;
        assert!((seq.e_at(1).unwrap() - &half).norm() < 1e-14);
        let bf = brute_force_expected_error(&data, 1.0, 1).unwrap();
        assert!((bf.e - &half).norm() < 1e-15);
        assert_eq!(bf.paths, 2);
    }

    #[test]
    fn micro_case_fluctuation_is_quarter() {
        let (p, data) = micro();
        let f = fluctuation_error(&p, &data, 1.0, 1);
        assert!((f - 0.25).abs() < 1e-14, "{f}");
        let s = fluctuation_error_summation(&p, &data, 1.0, 1).unwrap();
        assert!((s - 0.25).abs() < 1e-14, "{s}");
    }

    #[test]
    fn brute_force_initial_and_budget() {
        let (_, data) = random(7, 3, 6, 1.0);
        let bf = brute_force_expected_error(&data, 0.1, 0).unwrap();
        let e0 = data.w_hat() * data.w_hat().transpose();
        assert!((bf.e - e0).norm() < 1e-14);
        let (_, big) = random(8, 10, 12, 1.0);
        assert!(matches!(
            brute_force_expected_error(&big, 0.1, 7),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn recursion_matches_brute_force_on_small_instances() {
        for seed in 0..20u64 {
            let n = 1 + (seed as usize % 3);
            let d = n + 1 + (seed as usize % 4);
            let (_, data) = random(seed, n, d.min(6), if seed % 2 == 0 { 0.0 } else { 1.0 });
            let eta = if seed % 3 == 0 { 0.05 } else { 0.5 / data.sigma_max() };
            let seq = expected_error_recursion(&data, eta, 4);
            for t in 0..=4u32 {
                let bf = brute_force_expected_error(&data, eta, t).unwrap();
                let e = seq.e_at(t as u64).unwrap();
                let tol = 1e-10 * (1.0 + bf.e.amax());
                assert!((e - &bf.e).amax() <= tol, "seed {seed} t {t}");
                // E_sgd[w_t] = ŵ_t
                let gd = gd_iterate(&data, eta, t as u64);
                assert!((&bf.mean - gd).amax() <= 1e-10 * (1.0 + bf.mean.amax()));
            }
        }
    }

    #[test]
    fn single_example_has_no_fluctuation() {
        let s = Spectrum::poly(4, 1.0).unwrap();
        let p = sample_instance(&s, 1.0, 1.0, 1).unwrap();
        let data = sample_dataset(&p, 1, 2).unwrap();
        let seq = expected_error_recursion(&data, 0.7, 10);
        for t in 0..=10 {
            let fm = seq.fluctuation_matrix(t).unwrap();
            assert!(fm.amax() <= 1e-13, "t={t}");
        }
        for t in [0, 3, 10] {
            assert!(fluctuation_error(&p, &data, 0.7, t).abs() < 1e-14);
            let r = exact_sgd_risk(&p, &data, 0.7, t);
            let g = p.risk_of(&gd_iterate(&data, 0.7, t));
            assert!((r - g).abs() <= 1e-12 * (1.0 + g));
        }
    }

    #[test]
    fn initial_risk_is_zero_init_risk() {
        let (p, data) = random(9, 4, 9, 1.0);
        let r = exact_sgd_risk(&p, &data, 0.3, 0);
        let zero = p.risk_of(&DVector::zeros(9));
        assert!((r - zero).abs() <= 1e-12 * (1.0 + zero));
    }

    #[test]
    fn sequence_invariants() {
        let (_, data) = random(10, 4, 7, 1.0);
        let eta = 0.8 / data.sigma_max();
        let seq = expected_error_recursion(&data, eta, 30);
        let e0 = data.w_hat() * data.w_hat().transpose();
        assert!((seq.e_at(0).unwrap() - e0).amax() < 1e-12);
        for t in 0..=30 {
            let e = seq.e_at(t).unwrap();
            assert!((e - e.transpose()).amax() == 0.0);
            assert!(min_eigenvalue(e) >= -1e-10 * e.trace().max(1e-300));
            let fm = seq.fluctuation_matrix(t).unwrap();
            assert!(min_eigenvalue(&fm) >= -1e-10 * e.trace().max(1e-300), "t={t}");
        }
    }

    #[test]
    fn decomposition_identity_and_summation_form() {
        for seed in 0..6u64 {
            let (p, data) = random(seed + 20, 3, 6, (seed % 2) as f64);
            let eta = 0.6 / data.sigma_max();
            let ts: Vec<u64> = (0..=40).collect();
            let curve = exact_risk_curve(&p, &data, eta, &ts).unwrap();
            for dec in &curve {
                assert!(dec.residual() <= 1e-10 * (1.0 + dec.sgd_risk));
                let floor = -1e-10 * (1.0 + dec.e_trace) * p.spectrum().largest();
                assert!(dec.fluctuation >= floor);
            }
            for t in [1, 5, 17, 40] {
                let direct = curve[t as usize].fluctuation;
                let summed = fluctuation_error_summation(&p, &data, eta, t).unwrap();
                assert!((direct - summed).abs() <= 1e-8 * direct.abs().max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn fluctuation_non_negative_over_long_horizon() {
        let (p, data) = random(31, 5, 10, 1.0);
        let eta = 0.9 / data.sigma_max();
        let ts: Vec<u64> = (0..=200).collect();
        for dec in exact_risk_curve(&p, &data, eta, &ts).unwrap() {
            assert!(dec.fluctuation >= -1e-10 * (1.0 + dec.e_trace) * p.spectrum().largest());
        }
        assert!(fluctuation_error_summation(&p, &sample_big(), 0.1, 1).is_err());
    }

    fn sample_big() -> Dataset {
        random(1, 4, 40, 1.0).1
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let (p, data) = random(40, 4, 8, 1.0);
        let eta = 0.5 / data.sigma_max();
        let mc = sgd_mc_risk(&p, &data, eta, &[50], 5000, 3).unwrap();
        let exact = exact_sgd_risk(&p, &data, eta, 50);
        let pt = mc.points[0];
        assert!((pt.risk_mean - exact).abs() <= 3.0 * pt.risk_stderr, "{} vs {exact} ± {}", pt.risk_mean, pt.risk_stderr);
    }
}

//! Invariant suite shared by the `selftest` subcommand and the acceptance
//! tests. Each check builds its own small instances from fixed seeds.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bounds::{effective_dim_kstar, gd_risk_bound, tilde_a_sandwich_check};
use crate::error::Result;
use crate::exact_engine::{apply_g, apply_m, apply_m_tilde, exact_risk_curve, fluctuation_error, fluctuation_error_summation};
use crate::experiments::{verify_instance, TOL_BRUTE_FORCE, TOL_NEGATIVE_FLUCTUATION, TOL_RESIDUAL};
use crate::linalg::{commuting_identity_residual, frob, min_eigenvalue};
use crate::problem::{sample_dataset, sample_instance, Dataset, ProblemInstance};
use crate::seed::rng_for;
use crate::spectra::Spectrum;
use crate::trajectories::{gd_iterate, sgd_mc_risk};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn instance(spectrum: &Spectrum, n: usize, sigma2: f64, seed: u64) -> Result<(ProblemInstance, Dataset)> {
    let p = sample_instance(spectrum, 1.0, sigma2, seed)?;
    let data = sample_dataset(&p, n, seed.wrapping_add(0x9e37))?;
    Ok((p, data))
}

fn random_psd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
    &b * b.transpose()
}

/// `X = I₂`, `y = (1,1)`, `H = I`, `η = 1`, `t = 1`: fluctuation `¼`.
pub fn micro_case() -> Result<CheckOutcome> {
    let s = Spectrum::custom(vec![1.0, 1.0])?;
    let p = ProblemInstance::new(s, DVector::from_vec(vec![1.0, 1.0]), 1.0, 0.0)?;
    let data = Dataset::from_data(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]))?;
    let f = fluctuation_error(&p, &data, 1.0, 1);
    let g = fluctuation_error_summation(&p, &data, 1.0, 1)?;
    let ok = (f - 0.25).abs() <= 1e-12 && (g - 0.25).abs() <= 1e-12;
    Ok(outcome("micro case", ok, format!("fluctuation={f} summation={g}")))
}

/// Brute force = recursion entrywise; `sgd − gd − fluctuation = 0`;
/// fluctuation non-negative. Instances have `d ∈ {4,5,6}`, `n ∈ {2,3}`,
/// `σ² ∈ {0,1}`, `η ∈ {0.05, 0.5/λ_max(Σ)}` and `t <= 4`.
pub fn decomposition_exactness(instances: usize) -> Result<CheckOutcome> {
    let (mut bf, mut res, mut minf, mut checks) = (0.0f64, 0.0f64, f64::INFINITY, 0);
    for i in 0..instances {
        let d = 4 + i % 3;
        let n = 2 + i % 2;
        let sigma2 = ((i / 2) % 2) as f64;
        let s = if i % 4 < 2 { Spectrum::logpoly(d)? } else { Spectrum::poly(d, 1.0)? };
        let (p, data) = instance(&s, n, sigma2, 100 + i as u64)?;
        for eta in [0.05, 0.5 / data.sigma_max()] {
            let r = verify_instance(&p, &data, eta, 4, 0, 0)?;
            bf = bf.max(r.max_brute_force_dev);
            res = res.max(r.max_relative_residual).max(r.max_form_dev);
            minf = minf.min(r.min_fluctuation);
            checks += r.brute_force_checks;
        }
    }
    let ok = bf <= TOL_BRUTE_FORCE && res <= TOL_RESIDUAL && minf >= -TOL_NEGATIVE_FLUCTUATION;
    Ok(outcome(
        "decomposition exactness",
        ok,
        format!("{instances} instances, {checks} brute-force comparisons, max dev {bf:e}, max relative residual {res:e}, min fluctuation {minf:e}"),
    ))
}

/// `|MC mean − exact| <= 3·stderr` at `t ∈ {10, 50, 200}` on `d=16, n=8`,
/// `η = 0.25/λ_max(Σ)`.
pub fn monte_carlo_consistency(repeats: usize) -> Result<CheckOutcome> {
    let s = Spectrum::logpoly(16)?;
    let (p, data) = instance(&s, 8, 1.0, 7)?;
    let eta = 0.25 / data.sigma_max();
    let ts = [10, 50, 200];
    let exact = exact_risk_curve(&p, &data, eta, &ts)?;
    let mc = sgd_mc_risk(&p, &data, eta, &ts, repeats, 11)?;
    let mut worst = 0.0f64;
    for (e, m) in exact.iter().zip(&mc.points) {
        worst = worst.max((m.risk_mean - e.sgd_risk).abs() / m.risk_stderr);
    }
    Ok(outcome(
        "monte carlo consistency",
        worst <= 3.0,
        format!("{repeats} repeats, worst deviation {worst:.3} stderr"),
    ))
}

/// `‖X(I−ηΣ)^k − (I−ηA/n)^k X‖_F <= 1e-8·‖X‖_F·k` on `n=8, d=16`, `η = 0.1/λ₁`.
pub fn commuting_identity(instances: usize) -> Result<CheckOutcome> {
    let s = Spectrum::logpoly(16)?;
    let eta = 0.1 / s.largest();
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (_, data) = instance(&s, 8, 1.0, 200 + i as u64)?;
        for k in [1u64, 10, 100] {
            let r = commuting_identity_residual(&data, eta, k);
            worst = worst.max(r / (data.x().norm() * k as f64));
        }
    }
    Ok(outcome(
        "commuting identity",
        worst <= 1e-8,
        format!("{instances} instances, worst residual/(‖X‖·k) {worst:e}"),
    ))
}

/// Both sandwich gaps `>= −1e-9·λ_max(A)` on `n=16, d=64`, `η = 0.5/λ₁`,
/// `t ∈ {1, 10, 100, 1000}`.
pub fn psd_sandwich(instances: usize) -> Result<CheckOutcome> {
    let s = Spectrum::logpoly(64)?;
    let eta = 0.5 / s.largest();
    let mut worst = f64::INFINITY;
    for i in 0..instances {
        let (_, data) = instance(&s, 16, 1.0, 300 + i as u64)?;
        let scale = data.gram_eig().max();
        for t in [1u64, 10, 100, 1000] {
            let g = tilde_a_sandwich_check(&data, eta, t)?;
            worst = worst.min(g.lower_gap.min(g.upper_gap) / scale);
        }
    }
    Ok(outcome(
        "psd sandwich",
        worst >= -1e-9,
        format!("{instances} instances, smallest gap/λ_max(A) {worst:e}"),
    ))
}

/// `(M − M̃)∘J ⪰ 0` and self-adjointness of `G`, `M`, `M̃` on random PSD `J`
/// (`d = 8`).
pub fn psd_mapping_and_adjointness(samples: usize) -> Result<CheckOutcome> {
    let s = Spectrum::logpoly(8)?;
    let (_, data) = instance(&s, 4, 1.0, 400)?;
    let eta = 0.5 / data.sigma_max();
    let sigma = data.sigma();
    let mut rng = rng_for(401, 0);
    let (mut worst_psd, mut worst_adj) = (f64::INFINITY, 0.0f64);
    for _ in 0..samples {
        let j = random_psd(&mut rng, 8);
        let diff = apply_m(&data, &j) - apply_m_tilde(sigma, &j);
        worst_psd = worst_psd.min(min_eigenvalue(&diff) / j.trace());
        let k = random_psd(&mut rng, 8);
        let pairs = [
            (frob(&apply_g(sigma, eta, &j), &k), frob(&j, &apply_g(sigma, eta, &k))),
            (frob(&apply_m(&data, &j), &k), frob(&j, &apply_m(&data, &k))),
            (frob(&apply_m_tilde(sigma, &j), &k), frob(&j, &apply_m_tilde(sigma, &k))),
        ];
        for (l, r) in pairs {
            worst_adj = worst_adj.max((l - r).abs() / l.abs().max(r.abs()));
        }
    }
    let ok = worst_psd >= -1e-10 && worst_adj <= 1e-10;
    Ok(outcome(
        "psd mapping and adjointness",
        ok,
        format!("{samples} samples, min eig/tr(J) {worst_psd:e}, worst adjointness gap {worst_adj:e}"),
    ))
}

/// Closed-form GD against explicit iteration for every `t <= t_max`.
pub fn gd_closed_form(instances: usize, t_max: u64) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let d = 12 + 4 * (i % 3);
        let n = 4 + i % 5;
        let s = if i % 2 == 0 { Spectrum::logpoly(d)? } else { Spectrum::poly(d, 1.0)? };
        let (_, data) = instance(&s, n, 1.0, 500 + i as u64)?;
        let eta = (0.5 + 0.5 * (i % 3) as f64) / data.sigma_max();
        let nf = n as f64;
        let mut w = DVector::zeros(d);
        let scale = 1.0 + data.w_hat().norm();
        for t in 1..=t_max {
            let resid = data.x() * &w - data.y();
            w -= data.x().tr_mul(&resid) * (eta / nf);
            let closed = gd_iterate(&data, eta, t);
            worst = worst.max((closed - &w).norm() / scale);
        }
    }
    Ok(outcome(
        "gd closed form",
        worst <= 1e-8,
        format!("{instances} instances, t <= {t_max}, worst ‖closed − loop‖/(1+‖ŵ‖) {worst:e}"),
    ))
}

/// `½√(tη) <= k* <= 2√(tη)` for `λ_i = i^{-2}`, `d = 4096`, `tη ∈ {2⁴..2¹⁸}`.
pub fn kstar_rate(ns: &[usize]) -> Result<CheckOutcome> {
    let s = Spectrum::poly(4096, 1.0)?;
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = 0.0f64;
    for &n in ns {
        for e in 4..=18 {
            let te = 2f64.powi(e);
            let k = effective_dim_kstar(&s, n, te, 1)? as f64;
            worst_lo = worst_lo.min(k / te.sqrt());
            worst_hi = worst_hi.max(k / te.sqrt());
        }
    }
    Ok(outcome(
        "k* rate",
        worst_lo >= 0.5 && worst_hi <= 2.0,
        format!("n ∈ {ns:?}, k*/√(tη) within [{worst_lo:.4}, {worst_hi:.4}]"),
    ))
}

/// `√n·(bias + variance)` at `tη = n` stays in a factor-4 band over
/// `n ∈ {2⁶..2¹²}` for `λ_i = i^{-2}`, `d = 4096`.
pub fn gd_rate_band() -> Result<CheckOutcome> {
    let s = Spectrum::poly(4096, 1.0)?;
    let mut vals = vec![];
    for e in 6..=12 {
        let n = 1usize << e;
        let b = gd_risk_bound(&s, n, 1.0, n as u64, 1.0, 1.0)?;
        vals.push(b.total() * (n as f64).sqrt());
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(0.0, f64::max);
    Ok(outcome(
        "gd rate band",
        hi / lo <= 4.0,
        format!("√n·bound ∈ [{lo:.4}, {hi:.4}], ratio {:.4}", hi / lo),
    ))
}

/// The full suite at the sizes used by the acceptance tests.
pub fn run_all() -> Vec<Result<CheckOutcome>> {
    vec![
        micro_case(),
        decomposition_exactness(20),
        monte_carlo_consistency(5000),
        commuting_identity(10),
        psd_sandwich(10),
        kstar_rate(&[1024, 4096]),
        gd_rate_band(),
        psd_mapping_and_adjointness(100),
        gd_closed_form(10, 1000),
    ]
}

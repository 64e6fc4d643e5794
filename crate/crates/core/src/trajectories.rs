//! GD, multi-pass SGD and ridge on a fixed [`Dataset`], all started at `w₀ = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{Dataset, ProblemInstance};
use crate::seed::{rng_for, STREAM_SGD};
use crate::spectra::Spectrum;

/// Constant used for the "η ≤ c/tr(H)" warning; the theory leaves it unspecified.
pub const THEORY_STEPSIZE_CONSTANT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgoConfig {
    pub eta: f64,
    pub t_max: u64,
    pub seed: u64,
    pub repeats: usize,
}

/// Stepsize warnings. Neither flag is fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepsizeFlags {
    /// `η > 1/λ_max(Σ)`.
    pub beyond_stability: bool,
    /// `η > c/tr(H)` with `c = THEORY_STEPSIZE_CONSTANT`.
    pub beyond_theory: bool,
}

impl AlgoConfig {
    pub fn new(eta: f64, t_max: u64, seed: u64, repeats: usize) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("stepsize must be positive, got {eta}")));
        }
        if repeats == 0 {
            return Err(Error::invalid("repeats must be >= 1"));
        }
        Ok(AlgoConfig {
            eta,
            t_max,
            seed,
            repeats,
        })
    }

    pub fn flags(&self, data: &Dataset, spectrum: &Spectrum) -> StepsizeFlags {
        stepsize_flags(data, spectrum, self.eta)
    }
}

pub fn stepsize_flags(data: &Dataset, spectrum: &Spectrum, eta: f64) -> StepsizeFlags {
    StepsizeFlags {
        beyond_stability: eta > 1.0 / data.sigma_max(),
        beyond_theory: eta > THEORY_STEPSIZE_CONSTANT / spectrum.trace(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoTag {
    Gd,
    SgdMc,
    SgdExact,
    Ridge,
}

impl AlgoTag {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgoTag::Gd => "gd",
            AlgoTag::SgdMc => "sgd_mc",
            AlgoTag::SgdExact => "sgd_exact",
            AlgoTag::Ridge => "ridge",
        }
    }

    /// Single-example gradients spent by `t` iterations.
    pub fn gradient_evals(self, n: usize, t: u64) -> u64 {
        match self {
            AlgoTag::Gd | AlgoTag::Ridge => n as u64 * t,
            AlgoTag::SgdMc | AlgoTag::SgdExact => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPoint {
    pub t: u64,
    pub risk_mean: f64,
    pub risk_stderr: f64,
    pub gradient_evals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub algo: AlgoTag,
    pub eta: f64,
    pub points: Vec<RiskPoint>,
}

fn check_checkpoints(ts: &[u64]) -> Result<()> {
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints must be strictly increasing"));
    }
    Ok(())
}

/// `base^t` for integer `t`, exact sign for negative bases.
pub(crate) fn powu(base: f64, t: u64) -> f64 {
    if t <= i32::MAX as u64 {
        base.powi(t as i32)
    } else {
        base.powf(t as f64)
    }
}

/// Closed-form GD iterate `(I − (I−ηΣ)^t) ŵ`, evaluated on the nonzero
/// eigenpairs of `Σ` (the null space carries no component of `ŵ`).
pub fn gd_iterate(data: &Dataset, eta: f64, t: u64) -> DVector<f64> {
    let rs = data.row_space();
    let mut coef = rs.basis.tr_mul(data.w_hat());
    for (c, s) in coef.iter_mut().zip(rs.scales.iter()) {
        *c *= 1.0 - powu(1.0 - eta * s, t);
    }
    &rs.basis * coef
}

/// `t` explicit full-batch steps from zero.
pub fn gd_iterate_loop(data: &Dataset, eta: f64, t: u64) -> DVector<f64> {
    let n = data.n() as f64;
    let x = data.x();
    let mut w = DVector::zeros(data.d());
    for _ in 0..t {
        let resid = x * &w - data.y();
        w -= x.tr_mul(&resid) * (eta / n);
    }
    w
}

/// Excess risk of the GD iterate at each checkpoint.
pub fn gd_risk_curve(problem: &ProblemInstance, data: &Dataset, eta: f64, ts: &[u64]) -> Result<RiskCurve> {
    check_checkpoints(ts)?;
    let points = ts
        .iter()
        .map(|&t| RiskPoint {
            t,
            risk_mean: problem.risk_of(&gd_iterate(data, eta, t)),
            risk_stderr: 0.0,
            gradient_evals: AlgoTag::Gd.gradient_evals(data.n(), t),
        })
        .collect();
    Ok(RiskCurve {
        algo: AlgoTag::Gd,
        eta,
        points,
    })
}

/// One SGD trajectory with replacement.
struct SgdPath<'a> {
    data: &'a Dataset,
    eta: f64,
    w: Vec<f64>,
    t: u64,
}

impl<'a> SgdPath<'a> {
    fn new(data: &'a Dataset, eta: f64) -> Self {
        SgdPath {
            data,
            eta,
            w: vec![0.0; data.d()],
            t: 0,
        }
    }

    fn step(&mut self, i: usize) {
        let d = self.data.d();
        let x = &self.data.xt().as_slice()[i * d..(i + 1) * d];
        let pred: f64 = x.iter().zip(&self.w).map(|(a, b)| a * b).sum();
        let g = self.eta * (pred - self.data.y()[i]);
        for (wj, xj) in self.w.iter_mut().zip(x) {
            *wj -= g * xj;
        }
        self.t += 1;
    }

    fn advance_to<R: Rng>(&mut self, t: u64, rng: &mut R) {
        let n = self.data.n();
        while self.t < t {
            let i = rng.random_range(0..n);
            self.step(i);
        }
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }
}

/// SGD iterate after `t` steps. Uses the same index stream as repeat 0 of
/// [`sgd_mc_risk`] with the same seed.
pub fn sgd_run(data: &Dataset, eta: f64, t: u64, seed: u64) -> DVector<f64> {
    let mut rng = rng_for(seed, STREAM_SGD);
    let mut path = SgdPath::new(data, eta);
    path.advance_to(t, &mut rng);
    path.weights()
}

/// Excess risk along one path at the given checkpoints.
fn path_risks(problem: &ProblemInstance, data: &Dataset, eta: f64, ts: &[u64], stream: u64, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, stream);
    let mut path = SgdPath::new(data, eta);
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        path.advance_to(t, &mut rng);
        let w = path.weights();
        let r = problem.risk_of(&w);
        out.push(if r.is_finite() { r } else { f64::INFINITY });
    }
    out
}

/// Count, mean and sum of squared deviations; merges are order-dependent only
/// through the fixed reduction tree in [`Moments::tree_reduce`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn single(x: f64) -> Self {
        Moments {
            count: 1.0,
            mean: x,
            m2: 0.0,
        }
    }

    pub fn merge(a: Moments, b: Moments) -> Moments {
        if a.count == 0.0 {
            return b;
        }
        if b.count == 0.0 {
            return a;
        }
        let count = a.count + b.count;
        let delta = b.mean - a.mean;
        let mean = a.mean + delta * (b.count / count);
        let m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / count);
        Moments { count, mean, m2 }
    }

    /// Pairwise reduction over a balanced binary tree of the inputs in order.
    pub fn tree_reduce(xs: &[f64]) -> Moments {
        match xs.len() {
            0 => Moments {
                count: 0.0,
                mean: 0.0,
                m2: 0.0,
            },
            1 => Moments::single(xs[0]),
            len => {
                let (l, r) = xs.split_at(len / 2);
                Moments::merge(Self::tree_reduce(l), Self::tree_reduce(r))
            }
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        let var = self.m2 / (self.count - 1.0);
        (var.max(0.0) / self.count).sqrt()
    }
}

/// Monte Carlo estimate of `E_sgd[risk(w_t)]` with standard errors.
pub fn sgd_mc_risk(
    problem: &ProblemInstance,
    data: &Dataset,
    eta: f64,
    ts: &[u64],
    repeats: usize,
    seed: u64,
) -> Result<RiskCurve> {
    if repeats < 2 {
        return Err(Error::invalid("Monte Carlo needs at least 2 repeats"));
    }
    check_checkpoints(ts)?;
    let per_repeat: Vec<Vec<f64>> = (0..repeats as u64)
        .into_par_iter()
        .map(|r| path_risks(problem, data, eta, ts, STREAM_SGD + r, seed))
        .collect();
    let points = ts
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let column: Vec<f64> = per_repeat.iter().map(|v| v[j]).collect();
            let m = Moments::tree_reduce(&column);
            let (mean, se) = if m.mean.is_finite() {
                (m.mean, m.stderr())
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            RiskPoint {
                t,
                risk_mean: mean,
                risk_stderr: se,
                gradient_evals: AlgoTag::SgdMc.gradient_evals(data.n(), t),
            }
        })
        .collect();
    Ok(RiskCurve {
        algo: AlgoTag::SgdMc,
        eta,
        points,
    })
}

/// Ridge solution `Xᵀ(A + λI)⁻¹ y`.
pub fn ridge_solution(data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge parameter must be positive, got {lambda}")));
    }
    let n = data.n();
    let reg = data.gram() + DMatrix::identity(n, n) * lambda;
    let alpha = linalg::spd_solve(&reg, data.y())?;
    Ok(data.x().tr_mul(&alpha))
}

//! Covariance eigenspectra.
//!
//! A [`Spectrum`] holds the eigenvalues of the population covariance `H`,
//! sorted non-increasing and truncated to a finite dimension `d`. Tail sums
//! are precomputed since the effective-dimension scans query them for every
//! `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which generator produced a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectrumFamily {
    /// `λ_i = i^{-(1+r)}`.
    Poly { r: f64 },
    /// `λ_i = i^{-1} ln(i+10)^{-2}`.
    LogPoly,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    family: SpectrumFamily,
    // tails[k] = sum_{i > k} λ_i (1-based), tails[d] = 0
    tails: Vec<f64>,
}

impl Spectrum {
    /// Polynomially decaying spectrum `λ_i = i^{-(1+r)}`, `i = 1..=d`.
    pub fn poly(d: usize, r: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("spectrum dimension d must be >= 1"));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("poly spectrum needs r > 0, got {r}")));
        }
        let vals = (1..=d).map(|i| (i as f64).powf(-(1.0 + r))).collect();
        Ok(Self::build(vals, SpectrumFamily::Poly { r }))
    }

    /// `λ_i = i^{-1} ln(i+10)^{-2}`.
    pub fn logpoly(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("spectrum dimension d must be >= 1"));
        }
        let vals = (1..=d)
            .map(|i| {
                let x = i as f64;
                1.0 / (x * (x + 10.0).ln().powi(2))
            })
            .collect();
        Ok(Self::build(vals, SpectrumFamily::LogPoly))
    }

    /// User-supplied eigenvalues; must be finite, positive and non-increasing.
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("custom spectrum must be non-empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "custom spectrum values must be finite and positive, got {v}"
            )));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("custom spectrum must be sorted non-increasing"));
        }
        Ok(Self::build(values, SpectrumFamily::Custom))
    }

    fn build(eigenvalues: Vec<f64>, family: SpectrumFamily) -> Self {
        let d = eigenvalues.len();
        let mut tails = vec![0.0; d + 1];
        for k in (0..d).rev() {
            tails[k] = tails[k + 1] + eigenvalues[k];
        }
        Spectrum {
            eigenvalues,
            family,
            tails,
        }
    }

    pub fn family(&self) -> SpectrumFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ_i` with 1-based index; `λ_{d+1} = 0` by convention.
    pub fn lambda(&self, i: usize) -> f64 {
        assert!(i >= 1, "eigenvalue index is 1-based");
        self.eigenvalues.get(i - 1).copied().unwrap_or(0.0)
    }

    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn trace(&self) -> f64 {
        self.tails[0]
    }

    /// `Σ_{i>k} λ_i` over the truncated spectrum.
    pub fn tail_sum(&self, k: usize) -> Result<f64> {
        self.tails.get(k).copied().ok_or_else(|| {
            Error::invalid(format!("tail index {k} exceeds dimension {}", self.dim()))
        })
    }

    /// Infallible variant for callers that already clamp `k <= d`.
    pub(crate) fn tail(&self, k: usize) -> f64 {
        self.tails[k.min(self.dim())]
    }

    /// `Σ_{i>k} λ_i^2`.
    pub fn tail_sum_sq(&self, k: usize) -> f64 {
        self.eigenvalues.iter().skip(k).map(|v| v * v).sum()
    }

    /// `Σ_{i<=k} 1/λ_i`.
    pub fn head_inverse_sum(&self, k: usize) -> f64 {
        self.eigenvalues.iter().take(k).map(|v| 1.0 / v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn poly_values() {
        let s = Spectrum::poly(4, 1.0).unwrap();
        let want = [1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0];
        for (a, b) in s.eigenvalues().iter().zip(want) {
            assert!(close(*a, b, 1e-15));
        }
        assert_eq!(Spectrum::poly(1, 2.0).unwrap().eigenvalues(), &[1.0]);
        let s = Spectrum::poly(3, 0.5).unwrap();
        assert!(close(s.lambda(2), 2f64.powf(-1.5), 1e-15));
        assert!(close(s.lambda(3), 3f64.powf(-1.5), 1e-15));
    }

    #[test]
    fn poly_rejects_bad_input() {
        assert!(Spectrum::poly(0, 1.0).is_err());
        assert!(Spectrum::poly(4, 0.0).is_err());
        assert!(Spectrum::poly(4, -1.0).is_err());
        assert!(Spectrum::logpoly(0).is_err());
    }

    #[test]
    fn logpoly_values() {
        let s = Spectrum::logpoly(1).unwrap();
        assert!(close(s.largest(), 0.173_916_015_497_025_8, 1e-14));
        let s = Spectrum::logpoly(2).unwrap();
        let ratio = s.lambda(1) / s.lambda(2);
        assert!(close(ratio, 2.147_779_679_762_988, 1e-13), "{ratio}");
        let s = Spectrum::logpoly(300).unwrap();
        assert!(s.eigenvalues().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn tail_sums() {
        let s = Spectrum::poly(4, 1.0).unwrap();
        assert!(close(s.tail_sum(1).unwrap(), 0.423_611_111_111_111, 1e-14));
        assert_eq!(s.tail_sum(4).unwrap(), 0.0);
        assert!(close(s.tail_sum(0).unwrap(), s.trace(), 0.0));
        assert!(s.tail_sum(5).is_err());
    }

    #[test]
    fn custom_validation() {
        assert!(Spectrum::custom(vec![]).is_err());
        assert!(Spectrum::custom(vec![1.0, 2.0]).is_err());
        assert!(Spectrum::custom(vec![1.0, 0.0]).is_err());
        assert!(Spectrum::custom(vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn poly_tail_rate() {
        // tail(k) * k^r stays within fixed positive bounds
        let d = 2048;
        for r in [0.5, 1.0, 2.0] {
            let s = Spectrum::poly(d, r).unwrap();
            let scaled: Vec<f64> =
                (2..=d / 2).map(|k| s.tail(k) * (k as f64).powf(r)).collect();
            let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = scaled.iter().cloned().fold(0.0, f64::max);
            assert!(lo > 0.0 && hi / lo < 10.0, "r={r} lo={lo} hi={hi}");
        }
    }

    proptest! {
        #[test]
        fn tail_differences_are_eigenvalues(d in 1usize..64, r in 0.1f64..3.0) {
            let s = Spectrum::poly(d, r).unwrap();
            for k in 0..d {
                let diff = s.tail_sum(k).unwrap() - s.tail_sum(k + 1).unwrap();
                prop_assert!((diff - s.lambda(k + 1)).abs() <= 1e-12);
                prop_assert!(s.tail_sum(k + 1).unwrap() <= s.tail_sum(k).unwrap());
            }
        }
    }
}

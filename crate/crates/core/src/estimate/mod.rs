//! GMWM estimation: weighted least-squares matching of empirical and model
//! wavelet variance, sandwich covariance and parametric bootstrap.

mod bootstrap;
mod fit;
mod inference;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{model_wv_unchecked, ModelSpec, ParamVector, Transform};
use crate::wavelet::WvEstimate;

pub(crate) use bootstrap::quantile_sorted;
pub use bootstrap::{bootstrap_ci, BootstrapResult};
pub use fit::{fit, fit_signal};
pub use inference::{asymptotic_cov, jacobian};

/// Choice of the weighting matrix Ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingChoice {
    Identity,
    /// diag(V̂)⁻¹
    #[default]
    Diag,
    /// V̂⁻¹
    Full,
}

impl fmt::Display for WeightingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingChoice::Identity => "identity",
            WeightingChoice::Diag => "diag",
            WeightingChoice::Full => "full",
        })
    }
}

impl FromStr for WeightingChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(WeightingChoice::Identity),
            "diag" | "diaginverse" => Ok(WeightingChoice::Diag),
            "full" | "fullinverse" => Ok(WeightingChoice::Full),
            other => Err(Error::Config(format!(
                "unknown weighting `{other}` (identity|diag|full)"
            ))),
        }
    }
}

/// Condition number at or above which V̂ is not inverted.
pub const MAX_WEIGHT_CONDITION: f64 = 1e12;

/// A resolved weighting matrix together with Lᵀ, where Ω = LLᵀ.
#[derive(Debug, Clone)]
pub struct Weight {
    pub requested: WeightingChoice,
    pub used: WeightingChoice,
    pub omega: DMatrix<f64>,
    pub(crate) l_t: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl Weight {
    /// Wraps an explicit SPD Ω.
    pub fn from_matrix(omega: DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::Shape(format!(
                "Ω must be square, got {}x{}",
                omega.nrows(),
                omega.ncols()
            )));
        }
        let chol = omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Input("Ω is not positive definite".into()))?;
        Ok(Weight {
            requested: WeightingChoice::Full,
            used: WeightingChoice::Full,
            l_t: chol.l().transpose(),
            omega,
            warnings: Vec::new(),
        })
    }

    fn diag(requested: WeightingChoice, used: WeightingChoice, w: Vec<f64>, warnings: Vec<String>) -> Self {
        let omega = DMatrix::from_diagonal(&w.clone().into());
        let l_t = DMatrix::from_diagonal(&w.iter().map(|v| v.sqrt()).collect::<Vec<_>>().into());
        Weight {
            requested,
            used,
            omega,
            l_t,
            warnings,
        }
    }
}

/// Builds Ω for `choice` from the estimate. V̂ is T times the stored
/// covariance of ν̂; without a covariance the diagonal choices fall back to
/// diag(1/ν̂²).
pub fn weight_matrix(est: &WvEstimate, choice: WeightingChoice) -> Result<Weight> {
    let j = est.nu_hat.len();
    if choice == WeightingChoice::Identity {
        return Ok(Weight::diag(choice, choice, vec![1.0; j], Vec::new()));
    }
    let mut warnings = Vec::new();
    let Some(cov) = est.cov_matrix() else {
        if let Some(i) = est.nu_hat.iter().position(|&v| v <= 0.0) {
            return Err(Error::Input(format!(
                "nu_hat[{i}] is zero; relative weights are undefined"
            )));
        }
        warnings.push(format!(
            "no WV covariance available; {choice} weighting uses diag(1/nu_hat^2)"
        ));
        let w = est.nu_hat.iter().map(|v| 1.0 / (v * v)).collect();
        return Ok(Weight::diag(choice, WeightingChoice::Diag, w, warnings));
    };
    let v = cov * est.length as f64;
    if let Some(i) = (0..j).find(|&i| v[(i, i)] <= 0.0) {
        return Err(Error::Input(format!(
            "WV covariance has a zero variance at level {}",
            i + 1
        )));
    }
    let diag_weights = || (0..j).map(|i| 1.0 / v[(i, i)]).collect::<Vec<_>>();
    if choice == WeightingChoice::Diag {
        return Ok(Weight::diag(choice, choice, diag_weights(), warnings));
    }

    let eig = v.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max / min >= MAX_WEIGHT_CONDITION {
        warnings.push(format!(
            "V_hat is not safely invertible (eigenvalues in [{min:.3e}, {max:.3e}]); falling back to diag weighting"
        ));
        return Ok(Weight::diag(choice, WeightingChoice::Diag, diag_weights(), warnings));
    }
    let omega = symmetric_inverse(&v).ok_or_else(|| Error::Input("V_hat inversion failed".into()))?;
    let mut w = Weight::from_matrix(omega)?;
    w.requested = choice;
    w.warnings = warnings;
    Ok(w)
}

/// Inverse of an SPD matrix through diagonal equilibration and Cholesky.
pub(crate) fn symmetric_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|i| 1.0 / m[(i, i)].sqrt()).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(n, n, |r, c| m[(r, c)] * d[r] * d[c]);
    let inv = scaled.cholesky()?.inverse();
    let out = DMatrix::from_fn(n, n, |r, c| inv[(r, c)] * d[r] * d[c]);
    Some((&out + out.transpose()) * 0.5)
}

/// ‖ν̂ − ν(θ)‖²_Ω.
pub fn objective(est: &WvEstimate, model: &ModelSpec, theta: &ParamVector, omega: &DMatrix<f64>) -> Result<f64> {
    let j = est.nu_hat.len();
    if omega.nrows() != j || omega.ncols() != j {
        return Err(Error::Shape(format!(
            "Ω is {}x{}, expected {j}x{j}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    model.validate(theta)?;
    let mut nu = vec![0.0; j];
    model_wv_unchecked(model, theta.values(), &est.scales.taus_f64(), &mut nu);
    let r = DVector::from_iterator(j, est.nu_hat.iter().zip(&nu).map(|(a, b)| a - b));
    Ok((r.transpose() * omega * &r)[(0, 0)].max(0.0))
}

/// Tuning of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub weighting: WeightingChoice,
    pub transform: Transform,
    /// Grid points for each sinusoid frequency in the initial screen.
    pub beta_grid: usize,
    /// Number of screened candidates refined by local descent.
    pub max_refine: usize,
    pub rel_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Compute Ξ̂ and Wald intervals when a WV covariance is available.
    pub inference: bool,
    /// Level of the Wald intervals.
    pub ci_level: f64,
    /// Batch length for V̂ when fitting a raw signal.
    pub batch_len: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            weighting: WeightingChoice::Diag,
            transform: Transform::default(),
            beta_grid: 32,
            max_refine: 32,
            rel_tol: 1e-10,
            step_tol: 1e-8,
            max_iter: 5000,
            inference: true,
            ci_level: 0.95,
            batch_len: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Grid combinations scored in the initial screen.
    pub screened: usize,
    /// Starts refined by local descent.
    pub starts: usize,
    pub converged_starts: usize,
    /// Local-descent iterations of the winning start.
    pub iterations: usize,
    pub converged: bool,
    /// Wall-clock time; kept out of serialized output so files are reproducible.
    #[serde(skip)]
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub parameters: Vec<String>,
    pub theta_hat: ParamVector,
    pub objective: f64,
    pub weighting: WeightingChoice,
    pub weighting_used: WeightingChoice,
    pub omega: Vec<Vec<f64>>,
    pub length: usize,
    pub levels: usize,
    pub nu_hat: Vec<f64>,
    pub nu_fitted: Vec<f64>,
    /// Ξ̂, the asymptotic covariance of √T(θ̂ − θ₀).
    pub xi_hat: Option<Vec<Vec<f64>>>,
    pub ci_level: f64,
    pub cis: Option<Vec<Interval>>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScaleSet;

    fn estimate(nu: Vec<f64>, cov: Option<Vec<Vec<f64>>>) -> WvEstimate {
        let j = nu.len();
        WvEstimate {
            scales: ScaleSet::new(j).unwrap(),
            length: 1000,
            counts: (1..=j).map(|k| 1000 - (1 << k) + 1).collect(),
            nu_hat: nu,
            cov,
        }
    }

    #[test]
    fn objective_zero_and_unit_direction() {
        let m: ModelSpec = "WN,RW".parse().unwrap();
        let theta: ParamVector = vec![1.0, 0.01].into();
        let nu = crate::model::model_wv(&m, &theta, &ScaleSet::new(4).unwrap()).unwrap();
        let omega = DMatrix::from_fn(4, 4, |r, c| if r == c { 2.0 } else { 0.3 });
        assert_eq!(objective(&estimate(nu.clone(), None), &m, &theta, &omega).unwrap(), 0.0);
        let mut bumped = nu;
        bumped[0] += 0.125;
        let f = objective(&estimate(bumped, None), &m, &theta, &DMatrix::identity(4, 4)).unwrap();
        assert!((f - 0.125f64.powi(2)).abs() < 1e-15);
        assert!(matches!(
            objective(&estimate(vec![1.0; 4], None), &m, &theta, &DMatrix::identity(3, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn weighting_parse_and_fallbacks() {
        assert_eq!("FULL".parse::<WeightingChoice>().unwrap(), WeightingChoice::Full);
        assert!("nope".parse::<WeightingChoice>().is_err());

        let est = estimate(vec![2.0, 0.5], None);
        let w = weight_matrix(&est, WeightingChoice::Full).unwrap();
        assert_eq!(w.used, WeightingChoice::Diag);
        assert_eq!(w.omega[(0, 0)], 0.25);
        assert_eq!(w.omega[(1, 1)], 4.0);
        assert!(!w.warnings.is_empty());
        assert!(weight_matrix(&estimate(vec![0.0, 1.0], None), WeightingChoice::Diag).is_err());
        assert!(weight_matrix(&estimate(vec![0.0, 1.0], None), WeightingChoice::Identity).is_ok());

        // Singular covariance: full falls back to diag.
        let cov = vec![vec![1e-3, 1e-3], vec![1e-3, 1e-3]];
        let w = weight_matrix(&estimate(vec![1.0, 1.0], Some(cov)), WeightingChoice::Full).unwrap();
        assert_eq!(w.used, WeightingChoice::Diag);
        assert!((w.omega[(0, 0)] - 1.0).abs() < 1e-12);

        let cov = vec![vec![2e-3, 5e-4], vec![5e-4, 1e-3]];
        let w = weight_matrix(&estimate(vec![1.0, 1.0], Some(cov.clone())), WeightingChoice::Full).unwrap();
        assert_eq!(w.used, WeightingChoice::Full);
        let v = DMatrix::from_fn(2, 2, |r, c| cov[r][c] * 1000.0);
        let prod = &w.omega * v;
        assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-12);
        let l = w.l_t.transpose();
        assert!((&l * l.transpose() - &w.omega).amax() < 1e-12 * w.omega.amax());
    }

    #[test]
    fn quadratic_form_matches_naive_loop() {
        let m: ModelSpec = "WN".parse().unwrap();
        let theta: ParamVector = vec![0.7].into();
        let nu_hat = vec![0.9, 0.1, 0.4, 0.05, 0.2];
        let g = DMatrix::from_fn(5, 5, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0 - 0.4);
        let omega = &g * g.transpose() + DMatrix::identity(5, 5) * 0.1;
        let f = objective(&estimate(nu_hat.clone(), None), &m, &theta, &omega).unwrap();
        let r: Vec<f64> = nu_hat
            .iter()
            .enumerate()
            .map(|(j, v)| v - 0.7 / (1u64 << (j + 1)) as f64)
            .collect();
        let mut naive = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                naive += r[a] * omega[(a, b)] * r[b];
            }
        }
        assert!((f - naive).abs() <= 1e-12 * naive);
    }
}

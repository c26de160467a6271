use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector, ScaleSet};
use crate::simulate::{simulate_model, SeedSpec};

use super::{fit_signal, FitOptions, FitResult, Interval};

/// Smallest accepted number of bootstrap replications.
pub const MIN_BOOTSTRAP_REPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub model: ModelSpec,
    pub parameters: Vec<String>,
    pub theta_hat: ParamVector,
    pub level: f64,
    pub intervals: Vec<Interval>,
    pub replicates: usize,
    pub dropped: usize,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile intervals from refits of signals simulated at θ̂.
///
/// Replicate `b` is simulated from `SeedSpec::new(seed, b)` with the same
/// length, scales and weighting as the original fit.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci(
    model: &ModelSpec,
    theta_hat: &ParamVector,
    length: usize,
    scales: Option<ScaleSet>,
    reps: usize,
    level: f64,
    seed: u64,
    opts: &FitOptions,
) -> Result<BootstrapResult> {
    if reps < MIN_BOOTSTRAP_REPS {
        return Err(Error::Input(format!(
            "at least {MIN_BOOTSTRAP_REPS} replications are required, got {reps}"
        )));
    }
    model.validate(theta_hat)?;
    let scales = match scales {
        Some(s) => s,
        None => ScaleSet::default_for_length(length)?,
    };
    scales.check_length(length)?;
    let refit_opts = FitOptions {
        inference: false,
        ..opts.clone()
    };
    bootstrap_from_replicates(model, theta_hat, reps, level, |b| {
        let signal = simulate_model(model, theta_hat, length, SeedSpec::new(seed, b as u64))?;
        fit_signal(&signal, model, Some(scales), &refit_opts)
    })
}

/// Shared driver: `refit(b)` produces the b-th bootstrap estimate.
pub(crate) fn bootstrap_from_replicates<F>(
    model: &ModelSpec,
    theta_hat: &ParamVector,
    reps: usize,
    level: f64,
    refit: F,
) -> Result<BootstrapResult>
where
    F: Fn(usize) -> Result<FitResult> + Sync,
{
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::Input(format!("level must lie in (0.5, 1), got {level}")));
    }
    if reps == 0 {
        return Err(Error::Input("no replications requested".into()));
    }
    log::info!("bootstrap: {reps} refits of {model}");
    let outcomes: Vec<Result<FitResult>> = (0..reps).into_par_iter().map(&refit).collect();
    let mut estimates = Vec::with_capacity(reps);
    let mut dropped = 0;
    for outcome in outcomes {
        match outcome {
            Ok(r) => estimates.push(r.theta_hat),
            Err(Error::NonConvergence { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if dropped * 10 > reps {
        return Err(Error::Bootstrap { dropped, total: reps });
    }
    let p = model.n_params();
    let intervals = (0..p)
        .map(|i| {
            let mut col: Vec<f64> = estimates.iter().map(|t| t.values()[i]).collect();
            col.sort_by(f64::total_cmp);
            Interval {
                lower: quantile_sorted(&col, (1.0 - level) / 2.0),
                upper: quantile_sorted(&col, (1.0 + level) / 2.0),
            }
        })
        .collect();
    Ok(BootstrapResult {
        model: model.clone(),
        parameters: model.param_names(),
        theta_hat: theta_hat.clone(),
        level,
        intervals,
        replicates: reps,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::fit;
    use crate::model::model_wv;
    use crate::wavelet::WvEstimate;

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn noise_free_refits_give_zero_width() {
        let m: ModelSpec = "WN,RW".parse().unwrap();
        let theta: ParamVector = vec![1.0, 4e-4].into();
        let scales = ScaleSet::new(12).unwrap();
        let nu = model_wv(&m, &theta, &scales).unwrap();
        let est = WvEstimate {
            scales,
            length: 100_000,
            counts: scales.taus().iter().map(|t| 100_000 - *t as usize + 1).collect(),
            nu_hat: nu,
            cov: None,
        };
        let res = bootstrap_from_replicates(&m, &theta, 5, 0.95, |_| fit(&est, &m, &FitOptions::default())).unwrap();
        for (iv, t) in res.intervals.iter().zip(theta.values()) {
            assert!((iv.upper - iv.lower).abs() <= 1e-6 * t);
            assert!((iv.lower - t).abs() <= 1e-6 * t);
        }
        assert_eq!(res.dropped, 0);
    }

    #[test]
    fn argument_checks() {
        let m: ModelSpec = "WN".parse().unwrap();
        let t: ParamVector = vec![1.0].into();
        let o = FitOptions::default();
        assert!(bootstrap_ci(&m, &t, 1000, None, 10, 0.95, 1, &o).is_err());
        assert!(bootstrap_ci(&m, &t, 1000, None, 100, 0.4, 1, &o).is_err());
    }

    #[test]
    fn excessive_failures_are_reported() {
        let m: ModelSpec = "WN".parse().unwrap();
        let t: ParamVector = vec![1.0].into();
        let err = bootstrap_from_replicates(&m, &t, 10, 0.9, |b| {
            if b < 2 {
                let scales = ScaleSet::new(2).unwrap();
                let est = WvEstimate {
                    scales,
                    length: 100,
                    counts: vec![99, 97],
                    nu_hat: vec![0.5, 0.25],
                    cov: None,
                };
                let best = fit(&est, &m, &FitOptions::default()).unwrap();
                Err(Error::NonConvergence { best: Box::new(best) })
            } else {
                Ok(fit(
                    &WvEstimate {
                        scales: ScaleSet::new(2).unwrap(),
                        length: 100,
                        counts: vec![99, 97],
                        nu_hat: vec![0.5, 0.25],
                        cov: None,
                    },
                    &m,
                    &FitOptions::default(),
                )
                .unwrap())
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Bootstrap { dropped: 2, total: 10 }));
    }
}

//! Numeric identifiability probe.
//!
//! Two complementary searches look for distinct parameter vectors with
//! indistinguishable wavelet variance at the given scales:
//!
//! * sampled pairs: points drawn in a cube of half-width `radius` around θ0 in
//!   the unconstrained coordinates, compared pairwise;
//! * level-set continuation: from each draw, a minimum-norm Gauss–Newton
//!   iteration solves ν(θ) = ν(θ0). When the map is injective this returns to
//!   θ0, otherwise it lands on a different point of the same level set.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::fd_jacobian;

use super::{model_wv_unchecked, ModelSpec, ParamVector, ScaleSet, Transform};

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub n_draws: usize,
    pub radius: f64,
    pub seed: u64,
    /// WV separation (∞-norm) below which a pair is flagged.
    pub tolerance: f64,
    /// Extra pairs evaluated verbatim alongside the sampled ones.
    pub extra_pairs: Vec<(ParamVector, ParamVector)>,
    pub transform: Transform,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            n_draws: 64,
            radius: 0.5,
            seed: 0,
            tolerance: 1e-10,
            extra_pairs: Vec::new(),
            transform: Transform::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OffendingPair {
    pub theta_a: ParamVector,
    pub theta_b: ParamVector,
    pub wv_separation: f64,
    pub param_separation: f64,
    pub source: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub model: ModelSpec,
    pub levels: usize,
    /// Smallest ‖ν(θa) − ν(θb)‖∞ over compared pairs with ‖θa − θb‖∞ > 10ε.
    pub min_separation: Option<f64>,
    pub min_separation_pair: Option<(ParamVector, ParamVector)>,
    pub pairs_checked: usize,
    pub offending_pairs: Vec<OffendingPair>,
    pub identified: bool,
}

/// Relative parameter distance a level-set solution must keep from θ0 to
/// count as a distinct preimage (the solver itself is accurate to ~1e-12).
const LEVEL_SET_MIN_SEPARATION: f64 = 1e-6;

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn identifiability_probe(
    model: &ModelSpec,
    theta0: &ParamVector,
    scales: &ScaleSet,
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    model.validate(theta0)?;
    if opts.n_draws < 2 {
        return Err(Error::Input(format!("n_draws must be >= 2, got {}", opts.n_draws)));
    }
    if !(opts.radius > 0.0 && opts.radius.is_finite()) {
        return Err(Error::Input(format!("radius must be > 0, got {}", opts.radius)));
    }
    for (a, b) in &opts.extra_pairs {
        model.validate(a)?;
        model.validate(b)?;
    }

    let taus = scales.taus_f64();
    let j = taus.len();
    let wv = |theta: &[f64]| {
        let mut out = vec![0.0; j];
        model_wv_unchecked(model, theta, &taus, &mut out);
        out
    };
    let tf = opts.transform;
    let x0 = tf.to_unconstrained(model, theta0)?;

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut points: Vec<Vec<f64>> = vec![theta0.values().to_vec()];
    let mut draws_x = Vec::with_capacity(opts.n_draws);
    for _ in 0..opts.n_draws {
        let x: Vec<f64> = x0
            .iter()
            .map(|v| v + rng.gen_range(-opts.radius..=opts.radius))
            .collect();
        points.push(tf.map_unchecked(model, &x));
        draws_x.push(x);
    }

    let mut report = ProbeReport {
        model: model.clone(),
        levels: scales.levels(),
        min_separation: None,
        min_separation_pair: None,
        pairs_checked: 0,
        offending_pairs: Vec::new(),
        identified: true,
    };
    let consider = |a: &[f64], b: &[f64], nu_a: &[f64], nu_b: &[f64], source: &'static str, rep: &mut ProbeReport| {
        let dp = sup_dist(a, b);
        if dp <= 10.0 * f64::EPSILON {
            return;
        }
        rep.pairs_checked += 1;
        let dw = sup_dist(nu_a, nu_b);
        if rep.min_separation.is_none_or(|m| dw < m) {
            rep.min_separation = Some(dw);
            rep.min_separation_pair = Some((a.to_vec().into(), b.to_vec().into()));
        }
        if dw < opts.tolerance {
            rep.offending_pairs.push(OffendingPair {
                theta_a: a.to_vec().into(),
                theta_b: b.to_vec().into(),
                wv_separation: dw,
                param_separation: dp,
                source,
            });
        }
    };

    let nus: Vec<Vec<f64>> = points.iter().map(|p| wv(p)).collect();
    for i in 0..points.len() {
        for k in i + 1..points.len() {
            consider(&points[i], &points[k], &nus[i], &nus[k], "sampled", &mut report);
        }
    }
    for (a, b) in &opts.extra_pairs {
        consider(
            a.values(),
            b.values(),
            &wv(a.values()),
            &wv(b.values()),
            "user",
            &mut report,
        );
    }

    // Level-set continuation back towards ν(θ0).
    let nu0 = &nus[0];
    let floor = nu0.iter().cloned().fold(0.0, f64::max) * 1e-12 + f64::MIN_POSITIVE;
    let weights: Vec<f64> = nu0.iter().map(|v| 1.0 / v.max(floor)).collect();
    let canon0 = model.canonicalize(theta0);
    for x_start in &draws_x {
        let residual = |x: &[f64], out: &mut [f64]| {
            let theta = tf.map_unchecked(model, x);
            model_wv_unchecked(model, &theta, &taus, out);
            for ((o, t), w) in out.iter_mut().zip(nu0).zip(&weights) {
                *o = (*o - t) * w;
            }
        };
        let Some(x_end) = min_norm_gauss_newton(&residual, x_start, j) else {
            continue;
        };
        let theta_end = model.canonicalize(&tf.map_unchecked(model, &x_end).into());
        let nu_end = wv(theta_end.values());
        let dw = sup_dist(&nu_end, nu0);
        if dw < opts.tolerance && rel_sup_dist(theta_end.values(), canon0.values()) > LEVEL_SET_MIN_SEPARATION {
            report.pairs_checked += 1;
            report.offending_pairs.push(OffendingPair {
                theta_a: canon0.clone(),
                theta_b: theta_end.clone(),
                wv_separation: dw,
                param_separation: sup_dist(theta_end.values(), canon0.values()),
                source: "level_set",
            });
        }
    }

    report.identified = report.offending_pairs.is_empty();
    Ok(report)
}

/// Gauss–Newton with pseudo-inverse steps and backtracking; returns the end
/// point when the residual is driven to (relative) machine precision.
fn min_norm_gauss_newton<R>(r: &R, x0: &[f64], m: usize) -> Option<Vec<f64>>
where
    R: Fn(&[f64], &mut [f64]),
{
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x = x0.to_vec();
    let mut res = vec![0.0; m];
    let mut trial_res = vec![0.0; m];
    r(&x, &mut res);
    let mut f = norm(&res);
    for _ in 0..200 {
        if f < 1e-13 {
            return Some(x);
        }
        let jac = fd_jacobian(r, &x, m);
        let step = jac
            .svd(true, true)
            .solve(&DVector::from_column_slice(&res), 1e-12)
            .ok()?;
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-8 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            r(&trial, &mut trial_res);
            let ft = norm(&trial_res);
            if ft.is_finite() && ft < f {
                x = trial;
                std::mem::swap(&mut res, &mut trial_res);
                f = ft;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (f < 1e-11).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    #[test]
    fn amplitude_frequency_pair_is_separated_at_second_scale() {
        let m: ModelSpec = "SIN".parse().unwrap();
        let a: ParamVector = vec![1.0, PI].into();
        let b: ParamVector = vec![SQRT_2, FRAC_PI_2].into();
        let opts = ProbeOptions {
            n_draws: 8,
            extra_pairs: vec![(a.clone(), b.clone())],
            ..Default::default()
        };
        let scales = ScaleSet::new(2).unwrap();
        let nu_a = crate::model::model_wv(&m, &a, &scales).unwrap();
        let nu_b = crate::model::model_wv(&m, &b, &scales).unwrap();
        assert!((nu_a[0] - nu_b[0]).abs() < 1e-12);
        assert!(((nu_b[1] - nu_a[1]) - 0.5).abs() < 1e-12);

        let report = identifiability_probe(&m, &vec![1.0, 1.0].into(), &scales, &opts).unwrap();
        assert!(report.identified, "{:?}", report.offending_pairs);
        assert!(report.offending_pairs.iter().all(|p| p.source != "user"));
    }

    #[test]
    fn identical_user_pair_is_excluded() {
        let m: ModelSpec = "WN".parse().unwrap();
        let a: ParamVector = vec![2.0].into();
        let opts = ProbeOptions {
            n_draws: 2,
            extra_pairs: vec![(a.clone(), a.clone())],
            ..Default::default()
        };
        let report = identifiability_probe(&m, &a, &ScaleSet::new(3).unwrap(), &opts).unwrap();
        // 3 sampled points → 3 pairs; the identical user pair is skipped.
        assert_eq!(report.pairs_checked, 3);
        assert!(report.identified);
    }

    #[test]
    fn single_scale_sinusoid_is_flagged() {
        let m: ModelSpec = "SIN".parse().unwrap();
        for theta0 in [vec![1.0, 1.0], vec![0.3, 0.05], vec![2.0, 2.5]] {
            let opts = ProbeOptions {
                n_draws: 16,
                seed: 3,
                ..Default::default()
            };
            let report = identifiability_probe(&m, &theta0.clone().into(), &ScaleSet::new(1).unwrap(), &opts).unwrap();
            assert!(!report.identified, "θ0 = {theta0:?}");
            assert!(report.offending_pairs.iter().any(|p| p.source == "level_set"));
        }
    }

    #[test]
    fn composite_model_identified_at_many_scales() {
        let m: ModelSpec = "WN,AR1,RW,SIN".parse().unwrap();
        let theta0: ParamVector = vec![1.0, 0.975, 0.03, 4e-4, 0.85, 0.35].into();
        let opts = ProbeOptions {
            n_draws: 24,
            radius: 0.3,
            seed: 11,
            ..Default::default()
        };
        let report = identifiability_probe(&m, &theta0, &ScaleSet::new(12).unwrap(), &opts).unwrap();
        assert!(report.identified, "{:?}", report.offending_pairs);
        assert!(report.min_separation.unwrap() > 0.0);
    }

    #[test]
    fn argument_errors() {
        let m: ModelSpec = "WN".parse().unwrap();
        let s = ScaleSet::new(2).unwrap();
        let bad = ProbeOptions {
            n_draws: 1,
            ..Default::default()
        };
        assert!(identifiability_probe(&m, &vec![1.0].into(), &s, &bad).is_err());
        let bad = ProbeOptions {
            radius: 0.0,
            ..Default::default()
        };
        assert!(identifiability_probe(&m, &vec![1.0].into(), &s, &bad).is_err());
        assert!(matches!(
            identifiability_probe(&m, &vec![-1.0].into(), &s, &ProbeOptions::default()),
            Err(Error::Domain(_))
        ));
    }
}

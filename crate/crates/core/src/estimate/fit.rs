use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{
    ar1_wv, block_wv_unchecked, model_wv_unchecked, sin_wv, ModelSpec, ParamVector, ProcessKind, ScaleSet,
};
use crate::optim::{levenberg_marquardt, nelder_mead, nnls, StopRule};
use crate::wavelet::{empirical_wv, empirical_wv_with_cov, Signal, WvEstimate};

use super::{
    asymptotic_cov, jacobian, matrix_rows, objective, weight_matrix, Diagnostics, FitOptions, FitResult, Interval,
    Weight, WeightingChoice,
};

/// Grid combinations above which the screen switches from exhaustive
/// enumeration to coordinate descent.
const EXHAUSTIVE_LIMIT: usize = 200_000;
/// Starting tuples for the coordinate-descent screen.
const DESCENT_STARTS: usize = 2048;
/// Relative tolerance under which two objectives tie.
const TIE_TOL: f64 = 1e-12;
/// Initial Nelder–Mead simplex edge in the unconstrained space.
const SIMPLEX_STEP: f64 = 0.5;
/// Refined starts of the unweighted pilot fit.
/// (objective, combination index, φ grid indices, β grid indices, linear coefficients)
type ScoredCombo = (f64, usize, Vec<usize>, Vec<usize>, Vec<f64>);

const PILOT_STARTS: usize = 4;

/// Estimates θ from a raw signal. V̂ is computed by batch means unless the
/// request needs neither weights nor inference from it.
pub fn fit_signal(
    signal: &Signal,
    model: &ModelSpec,
    scales: Option<ScaleSet>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let scales = match scales {
        Some(s) => s,
        None => ScaleSet::default_for_length(signal.len())?,
    };
    let est = if opts.weighting == WeightingChoice::Identity && !opts.inference {
        empirical_wv(signal, &scales)?
    } else {
        empirical_wv_with_cov(signal, &scales, opts.batch_len)?
    };
    fit(&est, model, opts)
}

/// GMWM estimate: argmin over θ of ‖ν̂ − ν(θ)‖²_Ω.
///
/// Starts come from a grid screen over the nonlinear parameters (φ of each
/// AR1 block, β of each sinusoid) in which the remaining, linear, parameters
/// are solved by non-negative least squares. The best starts are refined by
/// Nelder–Mead followed by Levenberg–Marquardt in the unconstrained space.
pub fn fit(est: &WvEstimate, model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let started = Instant::now();
    est.validate()?;
    if opts.beta_grid == 0 || opts.max_refine == 0 {
        return Err(Error::Config("beta_grid and max_refine must be positive".into()));
    }
    if !(opts.ci_level > 0.0 && opts.ci_level < 1.0) {
        return Err(Error::Config(format!(
            "ci_level must lie in (0, 1), got {}",
            opts.ci_level
        )));
    }
    let levels = est.scales.levels();
    if model.has_sinusoid() && levels < 2 {
        return Err(Error::Scale("a sinusoid block needs at least two scales".into()));
    }
    let mut warnings = Vec::new();
    if levels < model.n_params() {
        warnings.push(format!(
            "under-identified: {} parameters from {levels} wavelet variances",
            model.n_params()
        ));
    }
    let weight = weight_matrix(est, opts.weighting)?;
    warnings.extend(weight.warnings.iter().cloned());

    let problem = Problem::new(est, model, &weight, opts);
    let candidates = problem.screen()?;
    let screened = candidates.screened;
    let mut starts: Vec<Vec<f64>> = candidates.starts;
    if weight.used != WeightingChoice::Identity {
        starts.push(pilot_start(est, model, opts)?);
    }

    let rule = StopRule {
        rel_tol: opts.rel_tol,
        step_tol: opts.step_tol,
        max_iter: opts.max_iter,
    };
    let refined: Vec<Refined> = starts.par_iter().map(|theta0| problem.refine(theta0, rule)).collect();

    let converged_starts = refined.iter().filter(|r| r.converged).count();
    let pick = |only_converged: bool| select(&refined, only_converged, model);
    let (winner, converged) = match pick(true) {
        Some(i) => (i, true),
        None => (pick(false).expect("at least one start"), false),
    };
    let best = &refined[winner];
    let diagnostics = Diagnostics {
        screened,
        starts: refined.len(),
        converged_starts,
        iterations: best.iterations,
        converged,
        runtime: started.elapsed(),
    };
    let result = build_result(est, model, &weight, &best.theta, diagnostics, warnings, opts)?;
    if !converged {
        return Err(Error::NonConvergence { best: Box::new(result) });
    }
    Ok(result)
}

/// Unweighted optimum, added as one extra start to weighted fits. Strongly
/// varying weights can turn the weighted objective into a narrow valley
/// that no grid point lands in, while the unweighted one stays smooth.
fn pilot_start(est: &WvEstimate, model: &ModelSpec, opts: &FitOptions) -> Result<Vec<f64>> {
    let weight = weight_matrix(est, WeightingChoice::Identity)?;
    let pilot_opts = FitOptions {
        max_refine: opts.max_refine.min(PILOT_STARTS),
        ..opts.clone()
    };
    let problem = Problem::new(est, model, &weight, &pilot_opts);
    let rule = StopRule {
        rel_tol: opts.rel_tol,
        step_tol: opts.step_tol,
        max_iter: opts.max_iter,
    };
    let refined: Vec<Refined> = problem
        .screen()?
        .starts
        .par_iter()
        .map(|theta0| problem.refine(theta0, rule))
        .collect();
    let best = select(&refined, false, model).unwrap_or(0);
    Ok(refined.into_iter().nth(best).expect("at least one start").theta)
}

struct Refined {
    theta: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

/// Index of the lowest objective; near-ties go to the smallest ‖θ‖₂, then to
/// the earliest start.
fn select(refined: &[Refined], only_converged: bool, model: &ModelSpec) -> Option<usize> {
    let pool: Vec<usize> = (0..refined.len())
        .filter(|&i| refined[i].f.is_finite() && (!only_converged || refined[i].converged))
        .collect();
    let best = pool.iter().map(|&i| refined[i].f).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let norm = |i: usize| {
        let t = model.canonicalize(&refined[i].theta.clone().into());
        t.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    pool.into_iter()
        .filter(|&i| refined[i].f <= best + TIE_TOL * best.abs())
        .min_by(|&a, &b| norm(a).total_cmp(&norm(b)).then(a.cmp(&b)))
}

fn build_result(
    est: &WvEstimate,
    model: &ModelSpec,
    weight: &Weight,
    theta: &[f64],
    diagnostics: Diagnostics,
    mut warnings: Vec<String>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let theta_hat = model.canonicalize(&theta.to_vec().into());
    warnings.extend(model.validate(&theta_hat)?);
    let obj = objective(est, model, &theta_hat, &weight.omega)?;
    let taus = est.scales.taus_f64();
    let mut nu_fitted = vec![0.0; taus.len()];
    model_wv_unchecked(model, theta_hat.values(), &taus, &mut nu_fitted);

    let mut xi_hat = None;
    let mut cis = None;
    if let (true, Some(cov)) = (opts.inference, est.cov_matrix()) {
        let v_hat = cov * est.length as f64;
        match jacobian(model, &theta_hat, &est.scales).and_then(|a| asymptotic_cov(&a, &weight.omega, &v_hat)) {
            Ok(xi) => {
                let z = Normal::new(0.0, 1.0)
                    .expect("standard normal")
                    .inverse_cdf(0.5 + opts.ci_level / 2.0);
                let n = est.length as f64;
                cis = Some(
                    theta_hat
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(i, &t)| {
                            let half = z * (xi[(i, i)].max(0.0) / n).sqrt();
                            Interval {
                                lower: t - half,
                                upper: t + half,
                            }
                        })
                        .collect(),
                );
                xi_hat = Some(matrix_rows(&xi));
            }
            Err(e) => warnings.push(format!("no asymptotic covariance: {e}")),
        }
    }

    Ok(FitResult {
        model: model.clone(),
        parameters: model.param_names(),
        theta_hat,
        objective: obj,
        weighting: weight.requested,
        weighting_used: weight.used,
        omega: matrix_rows(&weight.omega),
        length: est.length,
        levels: est.scales.levels(),
        nu_hat: est.nu_hat.clone(),
        nu_fitted,
        xi_hat,
        ci_level: opts.ci_level,
        cis,
        diagnostics,
        warnings,
    })
}

/// Where each block's nonlinear parameter comes from in the screen.
#[derive(Clone, Copy)]
enum Slot {
    Linear,
    Phi(usize),
    Beta(usize),
}

struct Screened {
    screened: usize,
    starts: Vec<Vec<f64>>,
}

struct Problem<'a> {
    model: &'a ModelSpec,
    opts: &'a FitOptions,
    taus: Vec<f64>,
    nu_hat: Vec<f64>,
    l_t: DMatrix<f64>,
    weighted_target: DVector<f64>,
    diagonal: bool,
}

impl<'a> Problem<'a> {
    fn new(est: &WvEstimate, model: &'a ModelSpec, weight: &Weight, opts: &'a FitOptions) -> Self {
        let l_t = weight.l_t.clone();
        let diagonal = weight.used != WeightingChoice::Full;
        let target = DVector::from_column_slice(&est.nu_hat);
        Problem {
            model,
            opts,
            taus: est.scales.taus_f64(),
            nu_hat: est.nu_hat.clone(),
            weighted_target: &l_t * &target,
            l_t,
            diagonal,
        }
    }

    fn levels(&self) -> usize {
        self.taus.len()
    }

    /// Lᵀ(ν(θ(x)) − ν̂).
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let theta = self.opts.transform.map_unchecked(self.model, x);
        let mut nu = vec![0.0; self.levels()];
        model_wv_unchecked(self.model, &theta, &self.taus, &mut nu);
        for (v, t) in nu.iter_mut().zip(&self.nu_hat) {
            *v -= t;
        }
        if self.diagonal {
            for (k, o) in out.iter_mut().enumerate() {
                *o = self.l_t[(k, k)] * nu[k];
            }
        } else {
            for (k, o) in out.iter_mut().enumerate() {
                *o = (k..nu.len()).map(|c| self.l_t[(k, c)] * nu[c]).sum();
            }
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut r = vec![0.0; self.levels()];
        self.residual(x, &mut r);
        r.iter().map(|v| v * v).sum()
    }

    fn phi_grid(&self) -> Vec<f64> {
        let j = self.levels();
        let mut g: Vec<f64> = std::iter::once(0.25)
            .chain((1..=j + 1).map(|s| s as f64))
            .map(|s| 1.0 - 2f64.powf(-s))
            .rev()
            .collect();
        g.push(-0.5);
        g
    }

    fn beta_grid(&self) -> Vec<f64> {
        let n = self.opts.beta_grid;
        let tau_max = *self.taus.last().unwrap();
        let lo = self.opts.transform.beta_min.max(PI / tau_max).max(1e-300);
        let ratio = (PI / lo).ln();
        let mut g: Vec<f64> = (0..n)
            .map(|k| lo * ((k as f64 + 0.5) / n as f64 * ratio).exp())
            .collect();
        g.reverse();
        g
    }

    fn screen(&self) -> Result<Screened> {
        let mut slots = Vec::new();
        let (mut n_phi, mut n_beta) = (0, 0);
        for kind in self.model.blocks() {
            slots.push(match kind {
                ProcessKind::Ar1 => {
                    n_phi += 1;
                    Slot::Phi(n_phi - 1)
                }
                ProcessKind::Sinusoid => {
                    n_beta += 1;
                    Slot::Beta(n_beta - 1)
                }
                _ => Slot::Linear,
            });
        }
        let phis = self.phi_grid();
        let betas = self.beta_grid();
        if n_phi > phis.len() || n_beta > betas.len() {
            return Err(Error::Model(format!(
                "{n_phi} AR1 / {n_beta} SIN blocks exceed the {} / {} point start grids",
                phis.len(),
                betas.len()
            )));
        }

        let eval = |phi_idx: &[usize], beta_idx: &[usize]| -> (f64, Vec<f64>) {
            let mut cols = DMatrix::zeros(self.levels(), slots.len());
            for (b, (kind, slot)) in self.model.blocks().iter().zip(&slots).enumerate() {
                for (k, &tau) in self.taus.iter().enumerate() {
                    cols[(k, b)] = match *slot {
                        Slot::Linear => block_wv_unchecked(*kind, &[1.0], tau),
                        Slot::Phi(i) => ar1_wv(phis[phi_idx[i]], 1.0, tau),
                        Slot::Beta(i) => sin_wv(1.0, betas[beta_idx[i]], tau),
                    };
                }
            }
            let a = &self.l_t * &cols;
            let c = nnls(&a, &self.weighted_target);
            let f = (&a * &c - &self.weighted_target).norm_squared();
            let mut coeffs: Vec<f64> = c.iter().copied().collect();
            // Zero coefficients become small positive values that contribute
            // at most 1e-4 of ν̂ at any scale.
            for (b, v) in coeffs.iter_mut().enumerate() {
                if *v <= 0.0 {
                    let floor = (0..self.levels())
                        .filter(|&k| cols[(k, b)] > 0.0 && self.nu_hat[k] > 0.0)
                        .map(|k| 1e-4 * self.nu_hat[k] / cols[(k, b)])
                        .fold(f64::INFINITY, f64::min);
                    *v = if floor.is_finite() && floor > 0.0 {
                        floor
                    } else {
                        1e-300
                    };
                }
            }
            (if f.is_finite() { f } else { f64::INFINITY }, coeffs)
        };

        let phi_tuples = combinations(phis.len(), n_phi);
        let beta_tuples = combinations(betas.len(), n_beta);
        let total = phi_tuples.len().saturating_mul(beta_tuples.len());

        let mut scored: Vec<ScoredCombo> = if total <= EXHAUSTIVE_LIMIT {
            (0..total)
                .into_par_iter()
                .map(|i| {
                    let p = &phi_tuples[i / beta_tuples.len()];
                    let b = &beta_tuples[i % beta_tuples.len()];
                    let (f, c) = eval(p, b);
                    (f, i, p.clone(), b.clone(), c)
                })
                .collect()
        } else {
            self.descent_screen(&phi_tuples, &beta_tuples, phis.len(), betas.len(), &eval)
        };
        let screened = if total <= EXHAUSTIVE_LIMIT { total } else { scored.len() };
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        // Blocks whose coefficient hit the floor carry no information about
        // their nonlinear parameter: keep one start per active pattern.
        let mut seen = std::collections::HashSet::new();
        let mut starts = Vec::new();
        for (_, _, p, b, c) in scored {
            let key: Vec<Option<usize>> = slots
                .iter()
                .enumerate()
                .map(|(blk, s)| match *s {
                    Slot::Linear => None,
                    Slot::Phi(i) => (c[blk] > 1e-300).then_some(p[i]),
                    Slot::Beta(i) => (c[blk] > 1e-300).then_some(b[i]),
                })
                .collect();
            let active: Vec<bool> = c.iter().map(|v| *v > 1e-300).collect();
            if !seen.insert((key, active)) {
                continue;
            }
            starts.push(self.start_vector(&slots, &phis, &betas, &p, &b, &c));
            if starts.len() == self.opts.max_refine {
                break;
            }
        }
        Ok(Screened { screened, starts })
    }

    fn start_vector(
        &self,
        slots: &[Slot],
        phis: &[f64],
        betas: &[f64],
        p: &[usize],
        b: &[usize],
        c: &[f64],
    ) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.model.n_params());
        for (blk, slot) in slots.iter().enumerate() {
            match *slot {
                Slot::Linear => theta.push(c[blk]),
                Slot::Phi(i) => {
                    theta.push(phis[p[i]]);
                    theta.push(c[blk]);
                }
                Slot::Beta(i) => {
                    theta.push(c[blk].sqrt());
                    theta.push(betas[b[i]]);
                }
            }
        }
        theta
    }

    /// Coordinate descent over grid indices from a spread of starting tuples.
    #[allow(clippy::type_complexity)]
    fn descent_screen<E>(
        &self,
        phi_tuples: &[Vec<usize>],
        beta_tuples: &[Vec<usize>],
        n_phi_grid: usize,
        n_beta_grid: usize,
        eval: &E,
    ) -> Vec<ScoredCombo>
    where
        E: Fn(&[usize], &[usize]) -> (f64, Vec<f64>) + Sync,
    {
        let k_phi = phi_tuples[0].len();
        let spread_phi: Vec<usize> = (0..k_phi).map(|i| i * n_phi_grid / k_phi.max(1)).collect();
        let stride = (beta_tuples.len() / DESCENT_STARTS).max(1);
        let seeds: Vec<Vec<usize>> = beta_tuples
            .iter()
            .step_by(stride)
            .take(DESCENT_STARTS)
            .cloned()
            .collect();

        seeds
            .par_iter()
            .enumerate()
            .map(|(i, b0)| {
                let mut p = spread_phi.clone();
                let mut b = b0.clone();
                let (mut best, mut coeffs) = eval(&p, &b);
                for _ in 0..50 {
                    let mut moved = false;
                    for slot in 0..p.len() + b.len() {
                        let (grid_len, is_phi, idx) = if slot < p.len() {
                            (n_phi_grid, true, slot)
                        } else {
                            (n_beta_grid, false, slot - p.len())
                        };
                        for cand in 0..grid_len {
                            let tuple = if is_phi { &p } else { &b };
                            let lo_ok = idx == 0 || tuple[idx - 1] < cand;
                            let hi_ok = idx + 1 == tuple.len() || cand < tuple[idx + 1];
                            if !(lo_ok && hi_ok) || cand == tuple[idx] {
                                continue;
                            }
                            let (mut tp, mut tb) = (p.clone(), b.clone());
                            if is_phi {
                                tp[idx] = cand;
                            } else {
                                tb[idx] = cand;
                            }
                            let (f, c) = eval(&tp, &tb);
                            if f < best {
                                best = f;
                                coeffs = c;
                                p = tp;
                                b = tb;
                                moved = true;
                            }
                        }
                    }
                    if !moved {
                        break;
                    }
                }
                (best, i, p, b, coeffs)
            })
            .collect()
    }

    fn refine(&self, theta0: &[f64], rule: StopRule) -> Refined {
        let tf = self.opts.transform;
        let failed = || Refined {
            theta: theta0.to_vec(),
            f: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
        let Ok(x0) = tf.to_unconstrained(self.model, &ParamVector::new(theta0.to_vec())) else {
            return failed();
        };
        let nm = nelder_mead(|x| self.value(x), &x0, SIMPLEX_STEP, rule);
        let lm = levenberg_marquardt(
            |x: &[f64], out: &mut [f64]| self.residual(x, out),
            &nm.x,
            self.levels(),
            rule,
        );
        let (x, f) = if lm.f <= nm.f { (lm.x, lm.f) } else { (nm.x, nm.f) };
        let theta = tf.map_unchecked(self.model, &x);
        let valid = self.model.validate(&ParamVector::new(theta.clone())).is_ok();
        Refined {
            theta,
            f: if valid { f } else { f64::INFINITY },
            iterations: nm.iterations + lm.iterations,
            converged: valid && (lm.converged || nm.converged),
        }
    }
}

/// All strictly increasing k-tuples of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for t in i + 1..k {
            cur[t] = cur[t - 1] + 1;
        }
    }
}

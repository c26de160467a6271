//! Small dense optimisation routines used by the estimator and the probe.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct StopRule {
    /// Relative objective change below which a method has converged.
    pub rel_tol: f64,
    /// Step (or simplex diameter) in the unconstrained space below which a
    /// method has converged.
    pub step_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead with the dimension-adaptive coefficients of Gao & Han.
pub(crate) fn nelder_mead<F>(f: F, x0: &[f64], step: f64, rule: StopRule) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (reflect, expand, contract, shrink) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        let fp = eval(&p);
        simplex.push((p, fp));
    }

    let mut centroid = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < rule.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (best.is_finite() && spread <= rule.rel_tol * best.abs().max(f64::MIN_POSITIVE)) || diameter < rule.step_tol
        {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(reflect);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(reflect * expand);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(reflect * contract);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-contract);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for (p, fp) in simplex.iter_mut().skip(1) {
            for (v, b) in p.iter_mut().zip(&x_best) {
                *v = b + shrink * (*v - b);
            }
            *fp = eval(p);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        iterations,
        converged,
    }
}

/// Central-difference Jacobian of a vector function `r: ℝⁿ → ℝᵐ`.
pub(crate) fn fd_jacobian<R>(r: &R, x: &[f64], m: usize) -> DMatrix<f64>
where
    R: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for i in 0..n {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        r(&xp, &mut rp);
        xp[i] = x[i] - h;
        r(&xp, &mut rm);
        xp[i] = x[i];
        for k in 0..m {
            jac[(k, i)] = (rp[k] - rm[k]) / (2.0 * h);
        }
    }
    jac
}

/// Levenberg–Marquardt on ½‖r(x)‖² with a finite-difference Jacobian and
/// Marquardt (diagonal) damping.
pub(crate) fn levenberg_marquardt<R>(r: R, x0: &[f64], m: usize, rule: StopRule) -> Minimum
where
    R: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let mut x = x0.to_vec();
    let mut res = vec![0.0; m];
    r(&x, &mut res);
    let mut f = sq(&res);
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; n];
    let mut res_trial = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;

    if !f.is_finite() {
        return Minimum {
            x,
            f,
            iterations,
            converged,
        };
    }
    if f == 0.0 {
        return Minimum {
            x,
            f,
            iterations,
            converged: true,
        };
    }

    'outer: while iterations < rule.max_iter {
        iterations += 1;
        let jac = fd_jacobian(&r, &x, m);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&res);
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        converged = true;
                        break 'outer;
                    }
                    continue;
                }
            };
            for i in 0..n {
                trial[i] = x[i] + step[i];
            }
            r(&trial, &mut res_trial);
            let f_trial = sq(&res_trial);
            let step_size = step.amax();
            if f_trial.is_finite() && f_trial < f {
                let rel = (f - f_trial) / f;
                x.copy_from_slice(&trial);
                res.copy_from_slice(&res_trial);
                f = f_trial;
                lambda = (lambda / 3.0).max(1e-12);
                if rel < rule.rel_tol || step_size < rule.step_tol || f == 0.0 {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if step_size < rule.step_tol * 1e-3 || lambda > 1e16 {
                // No descent possible: x is stationary to working precision.
                converged = true;
                break 'outer;
            }
        }
    }
    Minimum {
        x,
        f,
        iterations,
        converged,
    }
}

/// Lawson–Hanson non-negative least squares: argmin ‖Ax − b‖ s.t. x ≥ 0.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1e-300) * b.amax().max(1e-300) * (a.nrows() as f64);
    let max_outer = 3 * n + 10;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let mut z = DVector::zeros(n);
        if idx.is_empty() {
            return z;
        }
        let sub = a.select_columns(&idx);
        let sol = sub
            .clone()
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        for (k, &i) in idx.iter().enumerate() {
            z[i] = sol[k];
        }
        z
    };

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        for _ in 0..max_outer {
            let z = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    let denom = x[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for i in 0..n {
                x[i] += alpha * (z[i] - x[i]);
                if passive[i] && x[i] <= 1e-300 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

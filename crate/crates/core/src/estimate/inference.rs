use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{model_wv_unchecked, ModelSpec, ParamVector, ProcessKind, ScaleSet};

/// Relative eigenvalue below which B is treated as singular.
const RANK_TOL: f64 = 1e-12;

/// A(θ) = ∂ν/∂θᵀ by central differences on the constrained scale.
///
/// Steps are h_i = 1e-6·max(1, |θ_i|). A step that would cross |φ| = 1 or
/// β = 0 is shrunk tenfold up to three times before giving up.
pub fn jacobian(model: &ModelSpec, theta: &ParamVector, scales: &ScaleSet) -> Result<DMatrix<f64>> {
    model.validate(theta)?;
    let taus = scales.taus_f64();
    let j = taus.len();
    let names = model.param_names();
    let mut hard = vec![None; theta.len()];
    for (kind, range) in model.layout() {
        match kind {
            ProcessKind::Ar1 => hard[range.start] = Some((-1.0, 1.0)),
            ProcessKind::Sinusoid => hard[range.start + 1] = Some((0.0, f64::INFINITY)),
            _ => {}
        }
    }

    let mut jac = DMatrix::zeros(j, theta.len());
    let mut x = theta.values().to_vec();
    let (mut up, mut down) = (vec![0.0; j], vec![0.0; j]);
    for i in 0..x.len() {
        let v = x[i];
        let mut h = 1e-6 * v.abs().max(1.0);
        if let Some((lo, hi)) = hard[i] {
            let mut shrinks = 0;
            while !(v - h > lo && v + h < hi) {
                if shrinks == 3 {
                    return Err(Error::Boundary {
                        param: names[i].clone(),
                    });
                }
                h /= 10.0;
                shrinks += 1;
            }
        }
        x[i] = v + h;
        model_wv_unchecked(model, &x, &taus, &mut up);
        x[i] = v - h;
        model_wv_unchecked(model, &x, &taus, &mut down);
        x[i] = v;
        for k in 0..j {
            jac[(k, i)] = (up[k] - down[k]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn describe_direction(v: &[f64]) -> String {
    let mut terms: Vec<(usize, f64)> = v.iter().copied().enumerate().filter(|(_, c)| c.abs() > 0.1).collect();
    terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    terms
        .iter()
        .map(|(i, c)| format!("{c:+.3}*theta[{i}]"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ξ̂ = (B⁻¹AᵀΩ) V̂ (B⁻¹AᵀΩ)ᵀ with B = AᵀΩA.
///
/// Rows are equilibrated by diag(V̂)^{-1/2} and B by its own diagonal before
/// any inversion; both scalings cancel exactly in exact arithmetic.
pub fn asymptotic_cov(a: &DMatrix<f64>, omega: &DMatrix<f64>, v_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (j, p) = a.shape();
    if omega.shape() != (j, j) || v_hat.shape() != (j, j) {
        return Err(Error::Shape(format!(
            "A is {j}x{p}; Ω is {}x{} and V is {}x{}",
            omega.nrows(),
            omega.ncols(),
            v_hat.nrows(),
            v_hat.ncols()
        )));
    }
    if p == 0 || p > j {
        return Err(Error::Rank {
            directions: vec![format!("{p} parameters cannot be identified from {j} moments")],
        });
    }

    let d: Vec<f64> = (0..j)
        .map(|k| {
            let s = v_hat[(k, k)];
            if s > 0.0 && s.is_finite() {
                1.0 / s.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let a_s = DMatrix::from_fn(j, p, |r, c| a[(r, c)] * d[r]);
    let o_s = DMatrix::from_fn(j, j, |r, c| omega[(r, c)] / (d[r] * d[c]));
    let v_s = DMatrix::from_fn(j, j, |r, c| v_hat[(r, c)] * d[r] * d[c]);

    let b = a_s.transpose() * &o_s * &a_s;
    let s: Vec<f64> = (0..p).map(|i| b[(i, i)]).collect();
    let zero: Vec<usize> = (0..p).filter(|&i| s[i].is_nan() || s[i] <= 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::Rank {
            directions: zero.iter().map(|i| format!("+1.000*theta[{i}]")).collect(),
        });
    }
    let s: Vec<f64> = s.iter().map(|v| 1.0 / v.sqrt()).collect();
    let b_s = DMatrix::from_fn(p, p, |r, c| b[(r, c)] * s[r] * s[c]);
    let eig = b_s.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let deficient: Vec<String> = (0..p)
        .filter(|&k| eig.eigenvalues[k] <= RANK_TOL * max)
        .map(|k| {
            let raw: Vec<f64> = (0..p).map(|i| eig.eigenvectors[(i, k)] * s[i]).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            describe_direction(&raw.iter().map(|x| x / norm).collect::<Vec<_>>())
        })
        .collect();
    if !deficient.is_empty() {
        return Err(Error::Rank { directions: deficient });
    }
    let b_s_inv = match b_s.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => b_s.try_inverse().ok_or_else(|| Error::Rank {
            directions: vec!["B is numerically singular".into()],
        })?,
    };
    let b_inv = DMatrix::from_fn(p, p, |r, c| b_s_inv[(r, c)] * s[r] * s[c]);
    let m = b_inv * a_s.transpose() * o_s;
    let xi = &m * v_s * m.transpose();
    Ok((&xi + xi.transpose()) * 0.5)
}

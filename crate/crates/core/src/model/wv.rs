use crate::error::{Error, Result};

use super::{check_block_domain, ModelSpec, ParamVector, ProcessKind, ScaleSet};

/// Closed-form Haar wavelet variance of one latent block at scale `tau`.
///
/// `params` holds the block's parameters in canonical order (see
/// [`ProcessKind::param_names`]). `tau` must be even and at least 2.
pub fn theoretical_wv_block(kind: ProcessKind, params: &[f64], tau: u64) -> Result<f64> {
    if tau < 2 || !tau.is_multiple_of(2) {
        return Err(Error::Scale(format!("tau must be even and >= 2, got {tau}")));
    }
    if params.len() != kind.n_params() {
        return Err(Error::Shape(format!(
            "{kind} takes {} parameter(s), got {}",
            kind.n_params(),
            params.len()
        )));
    }
    check_block_domain(kind, params).map_err(Error::Domain)?;
    Ok(block_wv_unchecked(kind, params, tau as f64))
}

/// ν_j(θ) for every scale in `scales`: the sum of the block wavelet variances.
pub fn model_wv(model: &ModelSpec, theta: &ParamVector, scales: &ScaleSet) -> Result<Vec<f64>> {
    model.validate(theta)?;
    let taus = scales.taus_f64();
    let mut out = vec![0.0; taus.len()];
    model_wv_unchecked(model, theta.values(), &taus, &mut out);
    Ok(out)
}

pub(crate) fn model_wv_unchecked(model: &ModelSpec, theta: &[f64], taus: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (kind, range) in model.layout() {
        let p = &theta[range];
        for (o, &tau) in out.iter_mut().zip(taus) {
            *o += block_wv_unchecked(kind, p, tau);
        }
    }
}

pub(crate) fn block_wv_unchecked(kind: ProcessKind, p: &[f64], tau: f64) -> f64 {
    match kind {
        ProcessKind::WhiteNoise => p[0] / tau,
        ProcessKind::Quantization => 6.0 * p[0] / (tau * tau),
        ProcessKind::Ar1 => ar1_wv(p[0], p[1], tau),
        ProcessKind::Drift => tau * tau * p[0] / 16.0,
        ProcessKind::RandomWalk => (tau * tau + 2.0) * p[0] / (12.0 * tau),
        ProcessKind::Sinusoid => sin_wv(p[0], p[1], tau),
    }
}

/// α²{1 − cos(βτ/2)}² / (τ²{1 − cos β}), evaluated through half-angle sines
/// so that small β does not cancel.
pub(crate) fn sin_wv(alpha: f64, beta: f64, tau: f64) -> f64 {
    let num = (beta * tau / 4.0).sin().powi(2);
    let den = (beta / 2.0).sin();
    2.0 * alpha * alpha * num * num / (tau * tau * den * den)
}

/// Switch to the series in a = −ln φ when a·τ falls below this value.
const AR1_SERIES_THRESHOLD: f64 = 0.1;

/// Coefficients of τ·ν/ς² = Σ_k a^k Σ_i C[k][i] τ^i, with a = −ln φ.
#[allow(clippy::excessive_precision)]
const AR1_SERIES: [[f64; 11]; 9] = [
    [
        0.16666666666666666,
        0.0,
        0.08333333333333333,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.16666666666666666,
        0.0,
        0.08333333333333333,
        -0.03125,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.05,
        0.0,
        0.020833333333333332,
        -0.03125,
        0.007291666666666667,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -0.005555555555555556,
        0.0,
        -0.006944444444444444,
        -0.0078125,
        0.007291666666666667,
        -0.0013020833333333333,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -0.005357142857142857,
        0.0,
        -0.0038194444444444443,
        0.0026041666666666665,
        0.0018229166666666667,
        -0.0013020833333333333,
        0.00019221230158730158,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.0001984126984126984,
        0.0,
        0.00034722222222222224,
        0.0014322916666666666,
        -0.0006076388888888889,
        -0.0003255208333333333,
        0.00019221230158730158,
        -2.44140625e-05,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.0005357142857142857,
        0.0,
        0.00043264991181657847,
        -0.00013020833333333333,
        -0.00033420138888888887,
        0.00010850694444444444,
        4.8053075396825396e-05,
        -2.44140625e-05,
        2.73420276675485e-06,
        0.0,
        0.0,
    ],
    [
        -6.613756613756614e-06,
        0.0,
        -1.3778659611992945e-05,
        -0.00016224371693121693,
        3.0381944444444444e-05,
        5.967881944444444e-05,
        -1.6017691798941797e-05,
        -6.103515625e-06,
        2.73420276675485e-06,
        -2.7449673445767195e-07,
        0.0,
    ],
    [
        -5.343614718614719e-05,
        0.0,
        -4.416060405643739e-05,
        5.166997354497354e-06,
        3.7856867283950614e-05,
        -5.4253472222222224e-06,
        -8.80973048941799e-06,
        2.0345052083333333e-06,
        6.835506916887125e-07,
        -2.7449673445767195e-07,
        2.5003178486251403e-08,
    ],
];

/// Haar WV of a stationary AR(1) with autoregressive coefficient `phi` and
/// innovation variance `s2`.
///
/// The rational closed form loses about 12/(a·τ)² ulps to cancellation as
/// φ → 1 (a = −ln φ); below [`AR1_SERIES_THRESHOLD`] a ninth-order
/// expansion in a is used instead. φ = 1 yields the random-walk limit.
pub(crate) fn ar1_wv(phi: f64, s2: f64, tau: f64) -> f64 {
    if phi > 0.0 {
        let a = -phi.ln();
        if a * tau < AR1_SERIES_THRESHOLD {
            return ar1_series(a, s2, tau);
        }
        // Same rational form with every φ^k − 1 taken through expm1.
        let e1 = (-a).exp_m1();
        let num =
            (-2.0 * a).exp_m1() * tau + 2.0 * (1.0 + e1) * ((-a * tau).exp_m1() - 4.0 * (-a * tau / 2.0).exp_m1());
        return s2 * num / (e1 * e1 * e1 * (2.0 + e1) * tau * tau);
    }
    let m = phi.abs();
    let half_exp = tau / 2.0;
    let full = m.powf(tau);
    let mut half = m.powf(half_exp);
    if phi < 0.0 && (half_exp as u64) % 2 == 1 {
        half = -half;
    }
    ar1_closed_form(phi, s2, tau, full, half)
}

fn ar1_series(a: f64, s2: f64, tau: f64) -> f64 {
    let mut acc = 0.0;
    for row in AR1_SERIES.iter().rev() {
        let poly = row.iter().rev().fold(0.0, |p, &c| p * tau + c);
        acc = acc * a + poly;
    }
    s2 * acc / tau
}

fn ar1_closed_form(phi: f64, s2: f64, tau: f64, full: f64, half: f64) -> f64 {
    let num = (phi * phi - 1.0) * tau + 2.0 * phi * (full - 4.0 * half + 3.0);
    let den = (phi - 1.0).powi(3) * (phi + 1.0) * tau * tau;
    s2 * num / den
}

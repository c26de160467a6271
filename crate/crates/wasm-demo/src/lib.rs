//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every entry point returns a JSON string; errors surface as JS exceptions
//! carrying the library's message.

use gmwm::estimate::jacobian;
use gmwm::{
    empirical_wv, empirical_wv_with_cov, fit_signal, model_wv, simulate_model, theoretical_wv_block, Error, FitOptions,
    ModelSpec, ParamVector, ScaleSet, SeedSpec, Signal, WeightingChoice,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest signal the page may request.
pub const MAX_DEMO_LENGTH: usize = 1 << 20;

#[derive(Serialize)]
struct Curve {
    label: String,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct Curves {
    taus: Vec<u64>,
    total: Vec<f64>,
    blocks: Vec<Curve>,
}

#[derive(Serialize)]
struct Empirical {
    taus: Vec<u64>,
    nu_hat: Vec<f64>,
    /// Normal 95% bounds; absent when the signal is too short for V̂.
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    theory: Vec<f64>,
}

#[derive(Serialize)]
struct Fitted {
    parameters: Vec<String>,
    theta_hat: Vec<f64>,
    objective: f64,
    weighting_used: WeightingChoice,
    taus: Vec<u64>,
    nu_hat: Vec<f64>,
    nu_fitted: Vec<f64>,
    blocks: Vec<Curve>,
    warnings: Vec<String>,
}

fn parse(model: &str, params: &str) -> Result<(ModelSpec, ParamVector), String> {
    let model: ModelSpec = model.parse().map_err(|e: Error| e.to_string())?;
    let theta: ParamVector = params.parse().map_err(|e: Error| e.to_string())?;
    model.validate(&theta).map_err(|e| e.to_string())?;
    Ok((model, theta))
}

fn block_curves(model: &ModelSpec, theta: &ParamVector, scales: &ScaleSet) -> Result<Vec<Curve>, String> {
    let names = model.param_names();
    model
        .layout()
        .map(|(kind, range)| {
            let label = match names[range.start].rsplit_once('_') {
                Some((_, k)) if k.chars().all(|c| c.is_ascii_digit()) => {
                    format!("{}_{k}", kind.token())
                }
                _ => kind.token().to_string(),
            };
            let values = scales
                .taus()
                .into_iter()
                .map(|tau| theoretical_wv_block(kind, &theta.values()[range.clone()], tau))
                .collect::<gmwm::Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            Ok(Curve { label, values })
        })
        .collect()
}

fn simulate(model: &ModelSpec, theta: &ParamVector, n: usize, seed: u64) -> Result<Signal, String> {
    if n > MAX_DEMO_LENGTH {
        return Err(format!("the demo is limited to {MAX_DEMO_LENGTH} samples"));
    }
    simulate_model(model, theta, n, SeedSpec::new(seed, 0)).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Model WV and its per-block components on scales 2..2^levels.
pub fn curves_json(model: &str, params: &str, levels: usize) -> Result<String, String> {
    let (model, theta) = parse(model, params)?;
    let scales = ScaleSet::new(levels).map_err(|e| e.to_string())?;
    let total = model_wv(&model, &theta, &scales).map_err(|e| e.to_string())?;
    to_json(&Curves {
        taus: scales.taus(),
        total,
        blocks: block_curves(&model, &theta, &scales)?,
    })
}

/// Simulates `n` samples and returns the empirical WV next to the model WV.
pub fn simulate_wv_json(model: &str, params: &str, n: usize, seed: u64) -> Result<String, String> {
    let (model, theta) = parse(model, params)?;
    let signal = simulate(&model, &theta, n, seed)?;
    let scales = ScaleSet::default_for_length(n).map_err(|e| e.to_string())?;
    let (est, bounds) = match empirical_wv_with_cov(&signal, &scales, None) {
        Ok(est) => {
            let cov = est.cov.clone().expect("covariance requested");
            let (lo, hi) = est
                .nu_hat
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let half = 1.959964 * cov[j][j].sqrt();
                    ((v - half).max(0.0), v + half)
                })
                .unzip();
            (est, Some((lo, hi)))
        }
        Err(Error::Coverage { .. }) => (empirical_wv(&signal, &scales).map_err(|e| e.to_string())?, None),
        Err(e) => return Err(e.to_string()),
    };
    let theory = model_wv(&model, &theta, &scales).map_err(|e| e.to_string())?;
    let (lower, upper) = bounds.unzip();
    to_json(&Empirical {
        taus: scales.taus(),
        nu_hat: est.nu_hat,
        lower,
        upper,
        theory,
    })
}

/// Simulates from (`model`, `params`) and fits `fit_model` to the result.
pub fn fit_json(
    model: &str,
    params: &str,
    n: usize,
    seed: u64,
    fit_model: &str,
    weighting: &str,
) -> Result<String, String> {
    let (model, theta) = parse(model, params)?;
    let fit_model: ModelSpec = fit_model.parse().map_err(|e: Error| e.to_string())?;
    let weighting: WeightingChoice = weighting.parse().map_err(|e: Error| e.to_string())?;
    let signal = simulate(&model, &theta, n, seed)?;
    let opts = FitOptions {
        weighting,
        inference: false,
        ..FitOptions::default()
    };
    let res = fit_signal(&signal, &fit_model, None, &opts).map_err(|e| e.to_string())?;
    let scales = ScaleSet::new(res.levels).map_err(|e| e.to_string())?;
    let mut warnings = res.warnings.clone();
    if jacobian(&fit_model, &res.theta_hat, &scales).is_err() {
        warnings.push("estimate sits on a parameter boundary".into());
    }
    to_json(&Fitted {
        parameters: res.parameters,
        blocks: block_curves(&fit_model, &res.theta_hat, &scales)?,
        theta_hat: res.theta_hat.into_inner(),
        objective: res.objective,
        weighting_used: res.weighting_used,
        taus: scales.taus(),
        nu_hat: res.nu_hat,
        nu_fitted: res.nu_fitted,
        warnings,
    })
}

#[wasm_bindgen]
pub fn theoretical_curves(model: &str, params: &str, levels: usize) -> Result<String, JsError> {
    curves_json(model, params, levels).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_wv(model: &str, params: &str, n: usize, seed: u64) -> Result<String, JsError> {
    simulate_wv_json(model, params, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fit_simulated(
    model: &str,
    params: &str,
    n: usize,
    seed: u64,
    fit_model: &str,
    weighting: &str,
) -> Result<String, JsError> {
    fit_json(model, params, n, seed, fit_model, weighting).map_err(|e| JsError::new(&e))
}

//! Reproducible Monte Carlo studies: RMSE against sample size and
//! standardized recovery of (possibly misspecified) fits.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_signal, quantile_sorted, FitOptions, WeightingChoice};
use crate::io::write_atomic;
use crate::model::{ModelSpec, ParamVector, ScaleSet};
use crate::simulate::{simulate_model, SeedSpec, RNG_ALGORITHM};

/// Replicate ids are `size_index * REPLICATE_STRIDE + r`.
pub const REPLICATE_STRIDE: u64 = 1_000_000;
/// Largest tolerated share of failed fits per sample size and fitted model.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Rmse,
    Recovery,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_study_id")]
    pub study_id: String,
    #[serde(default)]
    pub kind: StudyKind,
    pub model: ModelSpec,
    pub theta0: Vec<f64>,
    /// Models fitted to every simulated signal; defaults to `model`.
    #[serde(default)]
    pub fitted_models: Vec<ModelSpec>,
    pub sample_sizes: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub weighting: WeightingChoice,
    pub seed: u64,
    /// Number of scales; defaults to ⌊log₂ T⌋ − 1 for each sample size.
    #[serde(rename = "J", default)]
    pub levels: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_study_id() -> String {
    "study".into()
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fitted(&self) -> Vec<ModelSpec> {
        if self.fitted_models.is_empty() {
            vec![self.model.clone()]
        } else {
            self.fitted_models.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Config(format!("reps must be >= 2, got {}", self.reps)));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("sample_sizes is empty".into()));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sample_sizes must be strictly increasing".into()));
        }
        if self.reps as u64 >= REPLICATE_STRIDE {
            return Err(Error::Config(format!("reps must be below {REPLICATE_STRIDE}")));
        }
        self.model.validate(&ParamVector::new(self.theta0.clone()))?;
        for &n in &self.sample_sizes {
            self.scales_for(n)?.check_length(n)?;
        }
        Ok(())
    }

    fn scales_for(&self, n: usize) -> Result<ScaleSet> {
        match self.levels {
            Some(j) => ScaleSet::new(j),
            None => ScaleSet::default_for_length(n),
        }
    }
}

/// √(mean((est − truth)²)).
pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Input("rmse of an empty sample".into()));
    }
    Ok((estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub study_id: String,
    #[serde(rename = "T")]
    pub length: usize,
    pub parameter: String,
    pub rmse: f64,
    pub n_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub study_id: String,
    pub fitted_model: String,
    pub parameter: String,
    pub replicate: u64,
    pub estimate: f64,
    pub standardized: f64,
}

/// Per (fitted model, T, parameter) summary of the converged estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub fitted_model: String,
    #[serde(rename = "T")]
    pub length: usize,
    pub parameter: String,
    /// NaN when the fitted block has no counterpart in the true model.
    pub truth: f64,
    pub n_converged: usize,
    pub rmse: f64,
    pub mean: f64,
    pub sd: f64,
    pub median_bias: f64,
    pub median_standardized: f64,
    pub q1_standardized: f64,
    pub q3_standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCount {
    pub fitted_model: String,
    #[serde(rename = "T")]
    pub length: usize,
    pub converged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub study_id: String,
    pub rmse: Vec<RmseRow>,
    pub recovery: Vec<RecoveryRow>,
    pub summaries: Vec<ParameterSummary>,
    pub convergence: Vec<ConvergenceCount>,
}

impl StudyResult {
    pub fn summary(&self, fitted_model: &str, length: usize, parameter: &str) -> Option<&ParameterSummary> {
        self.summaries
            .iter()
            .find(|s| s.fitted_model == fitted_model && s.length == length && s.parameter == parameter)
    }
}

/// True value of each fitted parameter, matched by block kind and
/// occurrence; NaN when the true model has no such block.
fn truth_for(model: &ModelSpec, theta0: &[f64], fitted: &ModelSpec) -> Vec<f64> {
    let truth_blocks: Vec<_> = model
        .block_occurrences()
        .into_iter()
        .zip(model.layout().map(|(_, r)| r))
        .collect();
    let mut out = Vec::with_capacity(fitted.n_params());
    for occ in fitted.block_occurrences() {
        match truth_blocks.iter().find(|(o, _)| *o == occ) {
            Some((_, r)) => out.extend_from_slice(&theta0[r.clone()]),
            None => out.extend(std::iter::repeat_n(f64::NAN, occ.0.n_params())),
        }
    }
    out
}

/// Runs every (sample size, replicate) pair; each simulated signal is shared
/// by all fitted models.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let fitted = cfg.fitted();
    let theta0 = ParamVector::new(cfg.theta0.clone());
    let opts = FitOptions {
        weighting: cfg.weighting,
        inference: false,
        ..FitOptions::default()
    };

    let mut result = StudyResult {
        study_id: cfg.study_id.clone(),
        rmse: Vec::new(),
        recovery: Vec::new(),
        summaries: Vec::new(),
        convergence: Vec::new(),
    };
    let multi = fitted.len() > 1;

    for (ti, &n) in cfg.sample_sizes.iter().enumerate() {
        let scales = cfg.scales_for(n)?;
        log::info!(
            "{}: T = {n}, {} replicates, {} fitted model(s)",
            cfg.study_id,
            cfg.reps,
            fitted.len()
        );
        let jobs: Vec<u64> = (0..cfg.reps as u64).map(|r| ti as u64 * REPLICATE_STRIDE + r).collect();
        // estimates[r][m] is the estimate of fitted model m on replicate r.
        let estimates: Vec<Vec<Option<Vec<f64>>>> = jobs
            .par_iter()
            .map(|&rep| -> Result<Vec<Option<Vec<f64>>>> {
                let signal = simulate_model(&cfg.model, &theta0, n, SeedSpec::new(cfg.seed, rep))?;
                fitted
                    .iter()
                    .map(|m| match fit_signal(&signal, m, Some(scales), &opts) {
                        Ok(f) => Ok(Some(f.theta_hat.into_inner())),
                        Err(Error::NonConvergence { .. }) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        for (mi, m) in fitted.iter().enumerate() {
            let model_name = m.to_string();
            let ok: Vec<(u64, &Vec<f64>)> = jobs
                .iter()
                .zip(&estimates)
                .filter_map(|(&rep, e)| e[mi].as_ref().map(|v| (rep, v)))
                .collect();
            let failed = cfg.reps - ok.len();
            result.convergence.push(ConvergenceCount {
                fitted_model: model_name.clone(),
                length: n,
                converged: ok.len(),
                failed,
            });
            if failed as f64 > MAX_FAILURE_SHARE * cfg.reps as f64 {
                return Err(Error::Study {
                    study: cfg.study_id.clone(),
                    n,
                    failed,
                    total: cfg.reps,
                });
            }
            let truth = truth_for(&cfg.model, &cfg.theta0, m);
            for (pi, name) in m.param_names().into_iter().enumerate() {
                let values: Vec<f64> = ok.iter().map(|(_, v)| v[pi]).collect();
                let t = truth[pi];
                let k = values.len() as f64;
                let mean = values.iter().sum::<f64>() / k;
                let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
                let standardized: Vec<f64> = values.iter().map(|v| (v - t) / sd).collect();
                let mut sorted = standardized.clone();
                sorted.sort_by(f64::total_cmp);
                let rmse_value = if t.is_nan() || values.is_empty() {
                    f64::NAN
                } else {
                    rmse(&values, t)?
                };
                result.summaries.push(ParameterSummary {
                    fitted_model: model_name.clone(),
                    length: n,
                    parameter: name.clone(),
                    truth: t,
                    n_converged: values.len(),
                    rmse: rmse_value,
                    mean,
                    sd,
                    median_bias: median(&values.iter().map(|v| v - t).collect::<Vec<_>>()),
                    median_standardized: quantile_sorted(&sorted, 0.5),
                    q1_standardized: quantile_sorted(&sorted, 0.25),
                    q3_standardized: quantile_sorted(&sorted, 0.75),
                });
                if matches!(cfg.kind, StudyKind::Rmse | StudyKind::Both) && !t.is_nan() {
                    result.rmse.push(RmseRow {
                        study_id: cfg.study_id.clone(),
                        length: n,
                        parameter: if multi {
                            format!("{model_name}:{name}")
                        } else {
                            name.clone()
                        },
                        rmse: rmse_value,
                        n_converged: values.len(),
                    });
                }
                if matches!(cfg.kind, StudyKind::Recovery | StudyKind::Both) {
                    for ((rep, v), z) in ok.iter().zip(&standardized) {
                        result.recovery.push(RecoveryRow {
                            study_id: cfg.study_id.clone(),
                            fitted_model: model_name.clone(),
                            parameter: name.clone(),
                            replicate: *rep,
                            estimate: v[pi],
                            standardized: *z,
                        });
                    }
                }
            }
        }
    }
    Ok(result)
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Serialize)]
struct Metadata<'a> {
    study_id: &'a str,
    config: &'a StudyConfig,
    fitted_models: Vec<String>,
    rng: &'static str,
    replicate_ids: String,
    crate_version: &'static str,
    convergence: &'a [ConvergenceCount],
    summaries: &'a [ParameterSummary],
}

/// Writes `rmse.csv`, `recovery.csv` (per the study kind) and
/// `metadata.json` into `dir`. Returns the written paths.
pub fn write_study_outputs(cfg: &StudyConfig, result: &StudyResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(cfg.kind, StudyKind::Rmse | StudyKind::Both) {
        let path = dir.join("rmse.csv");
        write_atomic(
            &path,
            &csv_bytes(&result.rmse, &["study_id", "T", "parameter", "rmse", "n_converged"])?,
        )?;
        written.push(path);
    }
    if matches!(cfg.kind, StudyKind::Recovery | StudyKind::Both) {
        let path = dir.join("recovery.csv");
        let header = [
            "study_id",
            "fitted_model",
            "parameter",
            "replicate",
            "estimate",
            "standardized",
        ];
        write_atomic(&path, &csv_bytes(&result.recovery, &header)?)?;
        written.push(path);
    }
    let meta = Metadata {
        study_id: &cfg.study_id,
        config: cfg,
        fitted_models: cfg.fitted().iter().map(|m| m.to_string()).collect(),
        rng: RNG_ALGORITHM,
        replicate_ids: format!("seed {}, replicate = size_index * {REPLICATE_STRIDE} + r", cfg.seed),
        crate_version: env!("CARGO_PKG_VERSION"),
        convergence: &result.convergence,
        summaries: &result.summaries,
    };
    let path = dir.join("metadata.json");
    let mut text = serde_json::to_vec_pretty(&meta)?;
    text.push(b'\n');
    write_atomic(&path, &text)?;
    written.push(path);
    Ok(written)
}

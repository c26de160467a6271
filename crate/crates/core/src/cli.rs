//! The `gmwm` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{bootstrap_ci, fit_signal, FitOptions, FitResult, WeightingChoice};
use crate::io::{read_signal, write_atomic, write_signal, SignalFormat};
use crate::model::{identifiability_probe, ModelSpec, ParamVector, ProbeOptions, ScaleSet};
use crate::simulate::{simulate_model, SeedSpec};
use crate::studies::{run_study, write_study_outputs, StudyConfig};
use crate::wavelet::{empirical_wv, empirical_wv_with_cov, Signal, WvEstimate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "gmwm",
    version,
    about = "Wavelet-variance calibration of composite noise models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Empirical wavelet variance table (CSV) with confidence bounds.
    Wv(WvArgs),
    /// Fit a latent model; prints the result as JSON.
    Fit(FitArgs),
    /// Simulate a composite model into a signal file.
    Simulate(SimulateArgs),
    /// Parametric bootstrap intervals around a fit.
    Bootstrap(BootstrapArgs),
    /// Run a Monte Carlo study described by a JSON config.
    Study(StudyArgs),
    /// Check whether distinct parameters give the same wavelet variance.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Signal file (CSV, or raw little-endian f64 for .bin/.f64/.f64le).
    input: PathBuf,
    /// Override the format detected from the extension.
    #[arg(long)]
    format: Option<SignalFormat>,
    /// Zero-based CSV column.
    #[arg(long)]
    column: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<Signal> {
        let format = self.format.unwrap_or_else(|| SignalFormat::from_path(&self.input));
        read_signal(&self.input, format, self.column)
    }
}

#[derive(Debug, Args)]
struct WvArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of dyadic scales (default ⌊log₂ T⌋ − 1).
    #[arg(long = "J")]
    levels: Option<usize>,
    /// Confidence level of the bounds.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Batch length for the covariance estimate.
    #[arg(long)]
    batch_len: Option<usize>,
    /// Adds a scale column in seconds.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Write the table here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated blocks, e.g. WN,AR1,RW,SIN.
    #[arg(long)]
    model: ModelSpec,
    /// identity, diag or full.
    #[arg(long, default_value_t = WeightingChoice::Diag)]
    weighting: WeightingChoice,
    /// Number of dyadic scales (default ⌊log₂ T⌋ − 1).
    #[arg(long = "J")]
    levels: Option<usize>,
    /// Level of the Wald intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Batch length for the covariance estimate.
    #[arg(long)]
    batch_len: Option<usize>,
    /// Skip Ξ̂ and the Wald intervals.
    #[arg(long)]
    no_inference: bool,
    /// Write the JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Comma-separated blocks, e.g. WN,AR1,RW,SIN.
    #[arg(long)]
    model: ModelSpec,
    /// Comma-separated parameters in canonical block order.
    #[arg(long)]
    params: ParamVector,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Master seed (required).
    #[arg(long)]
    seed: u64,
    /// Replicate index; each index gives an independent stream.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Destination signal file.
    #[arg(long, short)]
    output: PathBuf,
    /// csv or f64le (default from the extension).
    #[arg(long)]
    format: Option<SignalFormat>,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    /// FitResult JSON written by `fit`.
    #[arg(long, conflicts_with_all = ["input", "model"])]
    result: Option<PathBuf>,
    /// Signal to fit first (requires --model).
    #[arg(requires = "model")]
    input: Option<PathBuf>,
    /// Model to fit to the input signal.
    #[arg(long)]
    model: Option<ModelSpec>,
    /// Override the format detected from the extension.
    #[arg(long)]
    format: Option<SignalFormat>,
    /// Zero-based CSV column.
    #[arg(long)]
    column: Option<usize>,
    /// identity, diag or full (ignored with --result).
    #[arg(long, default_value_t = WeightingChoice::Diag)]
    weighting: WeightingChoice,
    /// Number of dyadic scales (ignored with --result).
    #[arg(long = "J")]
    levels: Option<usize>,
    /// Bootstrap replications (at least 100).
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Interval level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Master seed (required).
    #[arg(long)]
    seed: u64,
    /// Write the JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study description (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// Comma-separated blocks, e.g. WN,RW.
    #[arg(long)]
    model: ModelSpec,
    /// Centre of the probed region.
    #[arg(long)]
    params: ParamVector,
    /// Number of dyadic scales.
    #[arg(long = "J", default_value_t = 10)]
    levels: usize,
    /// Master seed (required).
    #[arg(long)]
    seed: u64,
    /// Random parameter draws around --params.
    #[arg(long, default_value_t = 64)]
    draws: usize,
    /// Half-width of the sampling box in the unconstrained space.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Largest WV difference (max over scales) flagged as indistinguishable.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Write the JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Model(_)
        | Error::Domain(_)
        | Error::Scale(_)
        | Error::Transform(_)
        | Error::Shape(_)
        | Error::Config(_) => EXIT_USAGE,
        Error::NonConvergence { .. } | Error::Bootstrap { .. } | Error::Study { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_DATA,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<&'a FitResult>,
}

/// Parses `args` (including the program name) and runs the command.
/// Results and error JSON go to `stdout`, messages to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            let code = exit_code(&err);
            let _ = writeln!(stderr, "error: {err}");
            let best = match &err {
                Error::NonConvergence { best } => Some(best.as_ref()),
                _ => None,
            };
            let report = ErrorReport {
                error: ErrorBody {
                    kind: err.kind(),
                    message: err.to_string(),
                    exit_code: code,
                    best,
                },
            };
            if let Ok(text) = serde_json::to_string(&report) {
                let _ = writeln!(stdout, "{text}");
            }
            code
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Wv(a) => cmd_wv(a, stdout, stderr),
        Command::Fit(a) => cmd_fit(a, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Bootstrap(a) => cmd_bootstrap(a, stdout, stderr),
        Command::Study(a) => cmd_study(a, stdout, stderr),
        Command::Probe(a) => cmd_probe(a, stdout),
    }
}

fn emit(bytes: &[u8], output: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, bytes),
        None => Ok(stdout.write_all(bytes)?),
    }
}

fn emit_json<T: Serialize>(value: &T, output: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    emit(&text, output, stdout)
}

fn scales_for(levels: Option<usize>, n: usize, stderr: &mut dyn Write) -> Result<ScaleSet> {
    let scales = match levels {
        Some(j) => ScaleSet::new(j)?,
        None => ScaleSet::default_for_length(n)?,
    };
    if let Some(w) = scales.check_length(n)? {
        writeln!(stderr, "warning: {w}")?;
    }
    Ok(scales)
}

/// Bounds per scale: normal with the batch-means standard error, or, when
/// the signal is too short for batching, χ² with η = max(M_j/τ_j, 1)
/// equivalent degrees of freedom.
fn wv_bounds(est: &WvEstimate, level: f64) -> Result<Vec<(f64, f64, f64)>> {
    let taus = est.taus();
    match &est.cov {
        Some(cov) => {
            let z = Normal::new(0.0, 1.0)
                .expect("unit normal")
                .inverse_cdf(0.5 + level / 2.0);
            Ok((0..taus.len())
                .map(|j| {
                    let se = cov[j][j].max(0.0).sqrt();
                    let nu = est.nu_hat[j];
                    (se, (nu - z * se).max(0.0), nu + z * se)
                })
                .collect())
        }
        None => (0..taus.len())
            .map(|j| {
                let eta = (est.counts[j] as f64 / taus[j] as f64).max(1.0);
                let chi = ChiSquared::new(eta).map_err(|e| Error::Input(e.to_string()))?;
                let nu = est.nu_hat[j];
                let lo = eta * nu / chi.inverse_cdf(0.5 + level / 2.0);
                let hi = eta * nu / chi.inverse_cdf(0.5 - level / 2.0);
                Ok((nu * (2.0 / eta).sqrt(), lo, hi))
            })
            .collect(),
    }
}

fn cmd_wv(a: WvArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::Config(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let mut signal = a.input.load()?;
    if let Some(hz) = a.sample_rate {
        signal = signal.with_sample_rate(hz)?;
    }
    let scales = scales_for(a.levels, signal.len(), stderr)?;
    let est = match empirical_wv_with_cov(&signal, &scales, a.batch_len) {
        Ok(e) => e,
        Err(Error::Coverage { batches, required }) if a.batch_len.is_none() => {
            writeln!(
                stderr,
                "warning: {batches} batches (< {required}); using chi-square bounds instead of batch means"
            )?;
            empirical_wv(&signal, &scales)?
        }
        Err(e) => return Err(e),
    };
    let bounds = wv_bounds(&est, a.level)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["j", "tau"];
    if signal.sample_rate_hz().is_some() {
        header.push("tau_s");
    }
    header.extend(["nu_hat", "se", "lower", "upper", "n_coef"]);
    w.write_record(&header)?;
    for (j, tau) in est.taus().iter().enumerate() {
        let (se, lo, hi) = bounds[j];
        let mut row = vec![(j + 1).to_string(), tau.to_string()];
        if let Some(hz) = signal.sample_rate_hz() {
            row.push(format!("{:?}", *tau as f64 / hz));
        }
        row.extend([est.nu_hat[j], se, lo, hi].map(|v| format!("{v:?}")));
        row.push(est.counts[j].to_string());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    emit(&bytes, a.output.as_deref(), stdout)
}

fn cmd_fit(a: FitArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let signal = a.input.load()?;
    let scales = scales_for(a.levels, signal.len(), stderr)?;
    let opts = FitOptions {
        weighting: a.weighting,
        inference: !a.no_inference,
        ci_level: a.level,
        batch_len: a.batch_len,
        ..FitOptions::default()
    };
    let result = fit_signal(&signal, &a.model, Some(scales), &opts)?;
    for w in &result.warnings {
        writeln!(stderr, "warning: {w}")?;
    }
    emit_json(&result, a.output.as_deref(), stdout)
}

fn cmd_simulate(a: SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let signal = simulate_model(&a.model, &a.params, a.n, SeedSpec::new(a.seed, a.replicate))?;
    let format = a.format.unwrap_or_else(|| SignalFormat::from_path(&a.output));
    write_signal(&a.output, signal.values(), format)?;
    writeln!(stdout, "wrote {} samples to {}", signal.len(), a.output.display())?;
    Ok(())
}

fn cmd_bootstrap(a: BootstrapArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let (model, theta, length, scales, weighting) = match (&a.result, &a.input, &a.model) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path)?;
            let fit: FitResult = serde_json::from_str(&text)?;
            let scales = ScaleSet::new(fit.levels)?;
            (fit.model, fit.theta_hat, fit.length, scales, fit.weighting)
        }
        (None, Some(input), Some(model)) => {
            let format = a.format.unwrap_or_else(|| SignalFormat::from_path(input));
            let signal = read_signal(input, format, a.column)?;
            let scales = scales_for(a.levels, signal.len(), stderr)?;
            let opts = FitOptions {
                weighting: a.weighting,
                inference: false,
                ..FitOptions::default()
            };
            let fit = fit_signal(&signal, model, Some(scales), &opts)?;
            (fit.model, fit.theta_hat, signal.len(), scales, a.weighting)
        }
        _ => {
            return Err(Error::Config(
                "give either --result or an input file with --model".into(),
            ))
        }
    };
    let opts = FitOptions {
        weighting,
        ..FitOptions::default()
    };
    let res = bootstrap_ci(&model, &theta, length, Some(scales), a.reps, a.level, a.seed, &opts)?;
    if res.dropped > 0 {
        writeln!(
            stderr,
            "warning: {} of {} refits did not converge",
            res.dropped, res.replicates
        )?;
    }
    emit_json(&res, a.output.as_deref(), stdout)
}

fn cmd_study(a: StudyArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)?;
    let cfg = StudyConfig::from_json(&text)?;
    let dir = a
        .out_dir
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: set out_dir or pass --out-dir".into()))?;
    let result = run_study(&cfg)?;
    for c in result.convergence.iter().filter(|c| c.failed > 0) {
        writeln!(
            stderr,
            "warning: {} at T = {}: {} fits failed",
            c.fitted_model, c.length, c.failed
        )?;
    }
    for path in write_study_outputs(&cfg, &result, &dir)? {
        writeln!(stdout, "wrote {}", path.display())?;
    }
    Ok(())
}

fn cmd_probe(a: ProbeArgs, stdout: &mut dyn Write) -> Result<()> {
    let scales = ScaleSet::new(a.levels)?;
    let opts = ProbeOptions {
        n_draws: a.draws,
        radius: a.radius,
        seed: a.seed,
        tolerance: a.tolerance,
        ..ProbeOptions::default()
    };
    let report = identifiability_probe(&a.model, &a.params, &scales, &opts)?;
    emit_json(&report, a.output.as_deref(), stdout)
}

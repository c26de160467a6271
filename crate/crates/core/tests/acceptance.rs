//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the report reads top to bottom. FAIL lines are always
//! printed; the process exits non-zero on a failure only when
//! `GMWM_ACCEPTANCE_STRICT=1` is set.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gmwm::estimate::{asymptotic_cov, bootstrap_ci, jacobian};
use gmwm::model::{identifiability_probe, ProbeOptions};
use gmwm::studies::{run_study, StudyConfig, StudyKind};
use gmwm::*;
use nalgebra::DMatrix;

/// Haar WV at scale τ.
type WvOracle = Box<dyn Fn(usize) -> f64>;

/// (name, runtime budget, check)
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Var(Σ h_s X_{t−s}) for a stationary series with autocovariance `acov`,
/// summed over every pair of Haar filter taps.
fn haar_var_from_acov(tau: usize, acov: impl Fn(usize) -> f64) -> f64 {
    let h = |s: usize| {
        if s < tau / 2 {
            1.0 / tau as f64
        } else {
            -1.0 / tau as f64
        }
    };
    let mut v = 0.0;
    for s in 0..tau {
        for t in 0..tau {
            v += h(s) * h(t) * acov(s.abs_diff(t));
        }
    }
    v
}

/// Phase-averaged sinusoid WV from the half-window sums.
fn sin_mean_wv(alpha: f64, beta: f64, tau: f64) -> f64 {
    alpha * alpha * (1.0 - (beta * tau / 2.0).cos()).powi(2) / (tau * tau * (1.0 - beta.cos()))
}

fn c1_sinusoid_mean() -> Outcome {
    let model: ModelSpec = "SIN".parse().unwrap();
    let theta: ParamVector = vec![1.0, FRAC_PI_2].into();
    let scales = ScaleSet::new(3).unwrap();
    let reps = 500;
    let mut sums = [0.0; 3];
    for r in 0..reps {
        let s = simulate_model(&model, &theta, 1 << 14, SeedSpec::new(101, r)).unwrap();
        let est = empirical_wv(&s, &scales).unwrap();
        for (acc, v) in sums.iter_mut().zip(&est.nu_hat) {
            *acc += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / reps as f64).collect();
    let target = [0.25, 0.25, 0.0];
    let err = means.iter().zip(target).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
    let oracle_ok = target
        .iter()
        .enumerate()
        .all(|(j, t)| (sin_mean_wv(1.0, FRAC_PI_2, (2u64 << j) as f64) - t).abs() < 1e-15);
    outcome(
        err < 0.005 && oracle_ok,
        format!("means {:.5?}, max abs error {err:.2e} (tol 5e-3)", means),
    )
}

fn c2_basic_processes() -> Outcome {
    let n = 1 << 16;
    let reps = 200;
    let scales = ScaleSet::new(6).unwrap();
    let phi: f64 = 0.5;
    let cases: Vec<(&str, Vec<f64>, WvOracle)> = vec![
        (
            "WN",
            vec![1.0],
            Box::new(|tau| haar_var_from_acov(tau, |k| if k == 0 { 1.0 } else { 0.0 })),
        ),
        (
            "QN",
            vec![1.0],
            Box::new(|tau| {
                haar_var_from_acov(tau, |k| match k {
                    0 => 2.0,
                    1 => -1.0,
                    _ => 0.0,
                })
            }),
        ),
        (
            "AR1",
            vec![phi, 1.0],
            Box::new(move |tau| haar_var_from_acov(tau, |k| phi.powi(k as i32) / (1.0 - phi * phi))),
        ),
        (
            "RW",
            vec![1.0],
            Box::new(|tau| (tau * tau + 2) as f64 / (12.0 * tau as f64)),
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, theta, oracle) in cases {
        let model: ModelSpec = name.parse().unwrap();
        let theta: ParamVector = theta.into();
        let mut sums = [0.0; 6];
        for r in 0..reps {
            let s = simulate_model(&model, &theta, n, SeedSpec::new(202, r)).unwrap();
            for (acc, v) in sums.iter_mut().zip(empirical_wv(&s, &scales).unwrap().nu_hat) {
                *acc += v;
            }
        }
        let rel = (1..=6)
            .map(|j| (sums[j - 1] / reps as f64 / oracle(1 << j) - 1.0).abs())
            .fold(0.0, f64::max);
        worst = worst.max(rel);
        parts.push(format!("{name} {rel:.4}"));
    }
    outcome(worst < 0.02, format!("max rel error: {} (tol 0.02)", parts.join(", ")))
}

fn c3_fixed_phase() -> Outcome {
    let t_len = 512usize;
    let alpha = 1.3;
    let scales = ScaleSet::new(5).unwrap();
    let mut worst = 0.0f64;
    for (beta, u) in [(1.1, 0.7), (0.3, 2.0), (2.5, 4.1), (0.05, 5.9)] {
        let x: Vec<f64> = (1..=t_len).map(|t| alpha * (beta * t as f64 + u).sin()).collect();
        let est = empirical_wv(&Signal::new(x).unwrap(), &scales).unwrap();
        for j in 1..=5 {
            let tau = (1usize << j) as f64;
            let nn = t_len as f64 - tau + 1.0;
            let boundary = (beta * nn).sin() / (nn * beta.sin()) * (beta * (t_len as f64 + 1.0) + 2.0 * u).cos();
            let oracle = sin_mean_wv(alpha, beta, tau) * (1.0 + boundary);
            worst = worst.max((est.nu_hat[j - 1] / oracle - 1.0).abs());
        }
    }
    outcome(worst < 1e-8, format!("max rel error {worst:.2e} (tol 1e-8)"))
}

fn table2() -> (ModelSpec, Vec<f64>) {
    (
        "WN,AR1,RW,SIN".parse().unwrap(),
        vec![1.0, 0.975, 0.03, 4e-4, 0.85, 0.35],
    )
}

fn c4_rmse_decreases() -> Outcome {
    let (model, theta0) = table2();
    let cfg = StudyConfig {
        study_id: "rmse-composite".into(),
        kind: StudyKind::Rmse,
        model,
        theta0,
        fitted_models: Vec::new(),
        sample_sizes: vec![10_000, 40_000, 160_000],
        reps: 100,
        weighting: WeightingChoice::Diag,
        seed: 404,
        levels: None,
        out_dir: None,
    };
    let res = match run_study(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let rmse = |t: usize, p: &str| {
        res.rmse
            .iter()
            .find(|r| r.length == t && r.parameter == p)
            .unwrap()
            .rmse
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for p in ["sigma2", "phi", "varsigma2", "gamma2"] {
        let (a, b) = (rmse(10_000, p), rmse(160_000, p));
        ok &= b < a;
        parts.push(format!("{p} {a:.3e}->{b:.3e}"));
    }
    outcome(ok, parts.join(", "))
}

fn recovery_config(id: &str, model: &str, theta0: Vec<f64>, fitted: &[&str], seed: u64) -> StudyConfig {
    StudyConfig {
        study_id: id.into(),
        kind: StudyKind::Recovery,
        model: model.parse().unwrap(),
        theta0,
        fitted_models: fitted.iter().map(|m| m.parse().unwrap()).collect(),
        sample_sizes: vec![1_000_000],
        reps: 50,
        weighting: WeightingChoice::Diag,
        seed,
        levels: None,
        out_dir: None,
    }
}

fn c5_recovery() -> Outcome {
    let cfg = recovery_config(
        "recovery-composite",
        "WN,AR1,RW,SIN",
        vec![8e-4, 0.9997083, 9e-9, 3e-11, 0.025, 0.056],
        &[],
        505,
    );
    let res = match run_study(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let z: Vec<(String, f64)> = res
        .summaries
        .iter()
        .map(|s| (s.parameter.clone(), s.median_standardized))
        .collect();
    let ok = z.iter().all(|(_, v)| v.abs() <= 0.3);
    let text: Vec<String> = z.iter().map(|(p, v)| format!("{p} {v:+.3}")).collect();
    outcome(ok, format!("median standardized bias: {} (tol 0.3)", text.join(", ")))
}

fn c6_misspecification() -> Outcome {
    let cfg = recovery_config(
        "misspecification",
        "AR1,RW,SIN,SIN",
        vec![
            0.1851173,
            3.559081e-2,
            8.692479e-10,
            0.3235864,
            1.199147,
            0.1359012,
            0.1357501,
        ],
        &["AR1,RW", "AR1,RW,SIN,SIN"],
        606,
    );
    let res = match run_study(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let bias = |m: &str| res.summary(m, 1_000_000, "phi").unwrap().median_bias.abs();
    let (mis, correct) = (bias("AR1,RW"), bias("AR1,RW,SIN,SIN"));
    outcome(
        mis > correct,
        format!("|median bias phi|: AR1+RW {mis:.4e}, full model {correct:.4e}"),
    )
}

fn c7_sandwich() -> Outcome {
    let model: ModelSpec = "WN,RW".parse().unwrap();
    let theta0 = [1.0, 1e-4];
    let n = 100_000;
    let scales = ScaleSet::new(8).unwrap();
    let opts = FitOptions::default();
    let mut est = vec![Vec::new(); 2];
    let mut xi_diag = vec![Vec::new(); 2];
    for r in 0..200 {
        let s = simulate_model(&model, &theta0.to_vec().into(), n, SeedSpec::new(707, r)).unwrap();
        let f = match fit_signal(&s, &model, Some(scales), &opts) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("fit {r} failed: {e}")),
        };
        let Some(xi) = f.xi_hat else {
            return outcome(false, format!("fit {r} has no Xi: {:?}", f.warnings));
        };
        for i in 0..2 {
            est[i].push((n as f64).sqrt() * (f.theta_hat.values()[i] - theta0[i]));
            xi_diag[i].push(xi[i][i]);
        }
    }
    let ratios: Vec<f64> = (0..2).map(|i| sample_var(&est[i]) / median(&xi_diag[i])).collect();
    let mc_ok = ratios.iter().all(|r| (0.5..=2.0).contains(r));

    // Efficient weighting: Ξ̂ must reduce to B⁻¹ = (AᵀV̂⁻¹A)⁻¹.
    let s = simulate_model(&model, &theta0.to_vec().into(), n, SeedSpec::new(708, 0)).unwrap();
    let wv = empirical_wv_with_cov(&s, &scales, None).unwrap();
    let v_hat = wv.cov_matrix().unwrap() * n as f64;
    let full = FitOptions {
        weighting: WeightingChoice::Full,
        ..FitOptions::default()
    };
    let f = fit(&wv, &model, &full).unwrap();
    let a = jacobian(&model, &f.theta_hat, &scales).unwrap();
    let omega = v_hat.clone().try_inverse().unwrap();
    let xi = asymptotic_cov(&a, &omega, &v_hat).unwrap();
    let b_inv: DMatrix<f64> = (a.transpose() * &omega * &a).try_inverse().unwrap();
    let rel = (&xi - &b_inv).amax() / b_inv.amax();
    outcome(
        mc_ok && rel < 1e-8 && f.weighting_used == WeightingChoice::Full,
        format!(
            "var/median(Xi): sigma2 {:.3}, gamma2 {:.3} (within [0.5, 2]); |Xi - B^-1| rel {rel:.2e} (tol 1e-8)",
            ratios[0], ratios[1]
        ),
    )
}

fn c8_bootstrap_coverage() -> Outcome {
    let model: ModelSpec = "WN".parse().unwrap();
    let n = 10_000;
    let outer = 200;
    let opts = FitOptions {
        inference: false,
        ..FitOptions::default()
    };
    let mut covered = 0;
    for r in 0..outer {
        let s = simulate_model(&model, &vec![1.0].into(), n, SeedSpec::new(808, r)).unwrap();
        let f = fit_signal(&s, &model, None, &opts).unwrap();
        let scales = ScaleSet::new(f.levels).unwrap();
        let b = match bootstrap_ci(&model, &f.theta_hat, n, Some(scales), 200, 0.95, 80_800 + r, &opts) {
            Ok(b) => b,
            Err(e) => return outcome(false, format!("bootstrap {r} failed: {e}")),
        };
        let iv = &b.intervals[0];
        covered += (iv.lower <= 1.0 && 1.0 <= iv.upper) as usize;
    }
    let cov = covered as f64 / outer as f64;
    outcome(
        (0.90..=0.98).contains(&cov),
        format!("coverage {cov:.3} over {outer} outer reps (B = 200)"),
    )
}

fn c9_identifiability() -> Outcome {
    let model: ModelSpec = "SIN".parse().unwrap();
    let scales = ScaleSet::new(2).unwrap();
    let a = model_wv(&model, &vec![1.0, PI].into(), &scales).unwrap();
    let b = model_wv(&model, &vec![2f64.sqrt(), FRAC_PI_2].into(), &scales).unwrap();
    let d1 = (a[0] - b[0]).abs();
    let d2 = ((a[1] - b[1]).abs() - 0.5).abs();
    let probe = identifiability_probe(
        &model,
        &vec![1.0, 1.0].into(),
        &ScaleSet::new(1).unwrap(),
        &ProbeOptions {
            seed: 909,
            ..ProbeOptions::default()
        },
    )
    .unwrap();
    outcome(
        d1 < 1e-12 && d2 < 1e-12 && !probe.identified,
        format!(
            "|dnu1| {d1:.1e}, ||dnu2| - 0.5| {d2:.1e}, J=1 probe identified = {} ({} offending pairs)",
            probe.identified,
            probe.offending_pairs.len()
        ),
    )
}

fn c10_performance() -> Outcome {
    let (model, theta0) = table2();
    let s = simulate_model(&model, &theta0.into(), 160_000, SeedSpec::new(1010, 0)).unwrap();
    let t = Instant::now();
    let fitted = fit_signal(&s, &model, None, &FitOptions::default());
    let fit_time = t.elapsed();

    let big = simulate_model(
        &"WN,RW".parse().unwrap(),
        &vec![1.0, 1e-6].into(),
        10_000_000,
        SeedSpec::new(1010, 1),
    )
    .unwrap();
    let t = Instant::now();
    let wv = empirical_wv(&big, &ScaleSet::new(20).unwrap());
    let wv_time = t.elapsed();
    outcome(
        fitted.is_ok() && wv.is_ok() && fit_time < Duration::from_secs(5) && wv_time < Duration::from_secs(10),
        format!(
            "6-parameter fit at T=1.6e5: {:.3} s (< 5 s); WV of 1e7 samples at J=20: {:.3} s (< 10 s)",
            fit_time.as_secs_f64(),
            wv_time.as_secs_f64()
        ),
    )
}

fn gmwm(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_gmwm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run gmwm");
    assert!(
        out.status.success(),
        "gmwm {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn c11_determinism() -> Outcome {
    let run = || -> Vec<(String, Vec<u8>)> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        let mut files = Vec::new();
        gmwm(
            &[
                "simulate",
                "--model",
                "WN,AR1,RW,SIN",
                "--params",
                "1,0.975,0.03,4e-4,0.85,0.35",
                "--n",
                "20000",
                "--seed",
                "11",
                "-o",
                "sig.f64",
            ],
            p,
        );
        gmwm(&["fit", "sig.f64", "--model", "WN,AR1,RW,SIN", "-o", "fit.json"], p);
        gmwm(&["wv", "sig.f64", "-o", "wv.csv"], p);
        gmwm(
            &[
                "bootstrap",
                "--result",
                "fit.json",
                "--reps",
                "100",
                "--seed",
                "12",
                "-o",
                "boot.json",
            ],
            p,
        );
        gmwm(
            &[
                "probe",
                "--model",
                "WN,RW",
                "--params",
                "1,1e-4",
                "--seed",
                "13",
                "-o",
                "probe.json",
            ],
            p,
        );
        std::fs::write(
            p.join("study.json"),
            r#"{"study_id": "det", "model": "WN,RW", "theta0": [1.0, 1e-4], "sample_sizes": [4000, 8000], "reps": 5, "seed": 14, "out_dir": "study"}"#,
        )
        .unwrap();
        gmwm(&["study", "--config", "study.json"], p);
        for f in [
            "sig.f64",
            "fit.json",
            "wv.csv",
            "boot.json",
            "probe.json",
            "study/rmse.csv",
            "study/recovery.csv",
            "study/metadata.json",
        ] {
            files.push((f.to_string(), std::fs::read(p.join(f)).unwrap()));
        }
        files
    };
    let (a, b) = (run(), run());
    // The fit JSON carries no timing, so every file must match byte for byte.
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} output files bit-identical across reruns", a.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (
            "sinusoid WV mean, T=2^14, R=500",
            Some(Duration::from_secs(30)),
            c1_sinusoid_mean,
        ),
        (
            "WN/QN/AR1/RW WV means, T=2^16, R=200",
            Some(Duration::from_secs(120)),
            c2_basic_processes,
        ),
        ("fixed-phase sinusoid oracle, T=512", None, c3_fixed_phase),
        (
            "RMSE decreases with T (WN+AR1+RW+SIN)",
            Some(Duration::from_secs(600)),
            c4_rmse_decreases,
        ),
        (
            "standardized recovery at T=1e6 (WN+AR1+RW+SIN)",
            Some(Duration::from_secs(900)),
            c5_recovery,
        ),
        ("misspecification bias in phi (AR1+RW+2 SIN)", None, c6_misspecification),
        ("sandwich covariance, WN+RW, T=1e5", None, c7_sandwich),
        ("bootstrap coverage, WN, T=1e4", None, c8_bootstrap_coverage),
        ("sinusoid identifiability", None, c9_identifiability),
        ("performance", None, c10_performance),
        ("determinism of CLI pipelines", None, c11_determinism),
    ];
    let only: Option<usize> = std::env::var("GMWM_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let mut o = run();
        let elapsed = start.elapsed();
        if let Some(b) = budget {
            if elapsed >= *b {
                o.pass = false;
                o.detail.push_str(&format!("; over budget {:.0} s", b.as_secs_f64()));
            }
        }
        failed += (!o.pass) as usize;
        ran += 1;
        println!(
            "{} [{:>2}] {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    let strict = std::env::var_os("GMWM_ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}

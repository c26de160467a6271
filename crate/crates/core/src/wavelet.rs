//! Haar maximal-overlap wavelet coefficients, empirical wavelet variance and
//! a batch-means estimate of its covariance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScaleSet;

/// Minimum number of batches accepted by [`estimate_wv_covariance`].
pub const MIN_BATCHES: usize = 8;

/// An observed (or simulated) error signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
    sample_rate_hz: Option<f64>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::Input(format!(
                "signal needs at least 4 samples, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("sample {i} is not finite ({})", values[i])));
        }
        Ok(Signal {
            values,
            sample_rate_hz: None,
        })
    }

    pub fn with_sample_rate(mut self, hz: f64) -> Result<Self> {
        if !(hz > 0.0 && hz.is_finite()) {
            return Err(Error::Input(format!("sample rate must be > 0, got {hz}")));
        }
        self.sample_rate_hz = Some(hz);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample_rate_hz(&self) -> Option<f64> {
        self.sample_rate_hz
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Empirical wavelet variance at scales τ_1..τ_J.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WvEstimate {
    pub scales: ScaleSet,
    /// Signal length T.
    pub length: usize,
    pub nu_hat: Vec<f64>,
    /// Number of coefficients per scale, T − τ_j + 1.
    pub counts: Vec<usize>,
    /// Covariance of ν̂ (that is V̂/T), row-major J×J.
    pub cov: Option<Vec<Vec<f64>>>,
}

impl WvEstimate {
    pub fn taus(&self) -> Vec<u64> {
        self.scales.taus()
    }

    pub fn cov_matrix(&self) -> Option<DMatrix<f64>> {
        let j = self.nu_hat.len();
        self.cov.as_ref().map(|rows| DMatrix::from_fn(j, j, |r, c| rows[r][c]))
    }

    /// Checks internal consistency; used when an estimate comes from a file.
    pub fn validate(&self) -> Result<()> {
        let j = self.scales.levels();
        if self.nu_hat.len() != j || self.counts.len() != j {
            return Err(Error::Shape(format!(
                "WV estimate has {} levels but {} values and {} counts",
                j,
                self.nu_hat.len(),
                self.counts.len()
            )));
        }
        if let Some(i) = self.nu_hat.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input(format!(
                "nu_hat[{i}] = {} is not a finite nonnegative value",
                self.nu_hat[i]
            )));
        }
        if let Some(rows) = &self.cov {
            if rows.len() != j || rows.iter().any(|r| r.len() != j) {
                return Err(Error::Shape(format!("covariance must be {j}x{j}")));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Input("covariance has non-finite entries".into()));
            }
        }
        Ok(())
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Double-double cumulative sums of the signal centred on its first sample,
/// shared by every level.
struct PrefixSums {
    hi: Vec<f64>,
    lo: Vec<f64>,
}

impl PrefixSums {
    fn new(x: &[f64]) -> Self {
        let origin = x[0];
        let mut hi = Vec::with_capacity(x.len() + 1);
        let mut lo = Vec::with_capacity(x.len() + 1);
        let (mut h, mut l) = (0.0f64, 0.0f64);
        hi.push(h);
        lo.push(l);
        for &v in x {
            let (s, e) = two_sum(h, v - origin);
            let (s2, e2) = two_sum(s, l + e);
            h = s2;
            l = e2;
            hi.push(h);
            lo.push(l);
        }
        PrefixSums { hi, lo }
    }

    /// Haar coefficient ending at sample `t` (0-based, t ≥ τ − 1):
    /// (S[t+1] − 2S[t+1−m] + S[t+1−τ]) / τ with m = τ/2.
    #[inline]
    fn coefficient(&self, t: usize, m: usize, tau: f64) -> f64 {
        let (a, b, c) = (t + 1, t + 1 - m, t + 1 - 2 * m);
        let (s1, e1) = two_sum(self.hi[a], self.hi[c]);
        let (s2, e2) = two_sum(s1, -2.0 * self.hi[b]);
        let tail = e1 + e2 + (self.lo[a] - 2.0 * self.lo[b] + self.lo[c]);
        (s2 + tail) / tau
    }
}

fn check_scales(n: usize, scales: &ScaleSet) -> Result<()> {
    if let Some(w) = scales.check_length(n)? {
        log::warn!("{w}");
    }
    Ok(())
}

/// Haar coefficients w_{j,t} for t = τ_j..T (1-based), i.e. T − τ_j + 1 values.
pub fn haar_coefficients(signal: &Signal, level: usize) -> Result<Vec<f64>> {
    let scales = ScaleSet::new(level)?;
    let n = signal.len();
    let tau = scales.tau(level) as usize;
    if tau >= n {
        return Err(Error::Scale(format!(
            "tau = {tau} must be smaller than the signal length {n}"
        )));
    }
    let ps = PrefixSums::new(signal.values());
    let m = tau / 2;
    Ok((tau - 1..n).map(|t| ps.coefficient(t, m, tau as f64)).collect())
}

/// Per-level mean of squared coefficients and, optionally, batch sums over
/// the range shared by all levels and over the level's own range.
struct LevelPass {
    nu: f64,
    count: usize,
    batch_sums: Vec<f64>,
    own_len: usize,
    own_sums: Vec<f64>,
}

/// Own-range batch length of a level: the larger of √M_j and 2τ_j.
fn own_batch_len(count: usize, tau: usize) -> usize {
    let root = (count as f64).sqrt().floor() as usize;
    (root.max(2 * tau) & !1).max(2)
}

fn level_pass(ps: &PrefixSums, n: usize, tau: usize, batches: Option<(usize, usize, usize)>) -> LevelPass {
    let m = tau / 2;
    let tf = tau as f64;
    let count = n - tau + 1;
    let own_len = own_batch_len(count, tau);
    let (mut batch_sums, mut own_sums) = match batches {
        Some((_, _, nb)) => (vec![0.0; nb], vec![0.0; count / own_len]),
        None => (Vec::new(), Vec::new()),
    };
    // Neumaier-compensated running total.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (k, t) in (tau - 1..n).enumerate() {
        let w = ps.coefficient(t, m, tf);
        let v = w * w;
        let next = sum + v;
        comp += if sum.abs() >= v {
            (sum - next) + v
        } else {
            (v - next) + sum
        };
        sum = next;
        if let Some((start, len, nb)) = batches {
            if t >= start && (t - start) / len < nb {
                batch_sums[(t - start) / len] += v;
            }
            if let Some(slot) = own_sums.get_mut(k / own_len) {
                *slot += v;
            }
        }
    }
    LevelPass {
        nu: (sum + comp) / count as f64,
        count,
        batch_sums,
        own_len,
        own_sums,
    }
}

/// ν̂_j = mean of squared Haar coefficients at each scale. No covariance.
pub fn empirical_wv(signal: &Signal, scales: &ScaleSet) -> Result<WvEstimate> {
    check_scales(signal.len(), scales)?;
    let ps = PrefixSums::new(signal.values());
    let n = signal.len();
    let passes: Vec<LevelPass> = scales
        .taus()
        .into_par_iter()
        .map(|tau| level_pass(&ps, n, tau as usize, None))
        .collect();
    Ok(WvEstimate {
        scales: *scales,
        length: n,
        nu_hat: passes.iter().map(|p| p.nu).collect(),
        counts: passes.iter().map(|p| p.count).collect(),
        cov: None,
    })
}

/// Default batch length for a common range of `n_common` coefficients at a
/// coarsest scale `tau_max`: the larger of √N and 2·τ_J, capped so that at
/// least [`MIN_BATCHES`] batches fit, rounded down to an even number.
pub fn default_batch_len(n_common: usize, tau_max: usize) -> usize {
    let root = (n_common as f64).sqrt().floor() as usize;
    let len = root.max(2 * tau_max).min(n_common / MIN_BATCHES);
    (len & !1).max(2)
}

fn batch_layout(n: usize, scales: &ScaleSet, batch_len: Option<usize>) -> Result<(usize, usize, usize)> {
    let tau_max = scales.tau(scales.levels()) as usize;
    let n_common = n - tau_max + 1;
    let len = match batch_len {
        Some(0) => return Err(Error::Input("batch length must be positive".into())),
        Some(b) => b,
        None => default_batch_len(n_common, tau_max),
    };
    let nb = n_common / len;
    if nb < MIN_BATCHES {
        return Err(Error::Coverage {
            batches: nb,
            required: MIN_BATCHES,
        });
    }
    Ok((tau_max - 1, len, nb))
}

/// Empirical WV together with its batch-means covariance.
///
/// Cross-level terms come from batches over the range shared by all levels.
/// With the default batch length each variance is then re-estimated on the
/// level's own range (see `rescale_diagonal`); an explicit `batch_len` uses
/// the shared batches for every entry.
pub fn empirical_wv_with_cov(signal: &Signal, scales: &ScaleSet, batch_len: Option<usize>) -> Result<WvEstimate> {
    check_scales(signal.len(), scales)?;
    let n = signal.len();
    let layout = batch_layout(n, scales, batch_len)?;
    let ps = PrefixSums::new(signal.values());
    let passes: Vec<LevelPass> = scales
        .taus()
        .into_par_iter()
        .map(|tau| level_pass(&ps, n, tau as usize, Some(layout)))
        .collect();
    let mut cov = batch_covariance(&passes, layout);
    if batch_len.is_none() {
        rescale_diagonal(&mut cov, &passes, scales);
    }
    Ok(WvEstimate {
        scales: *scales,
        length: n,
        nu_hat: passes.iter().map(|p| p.nu).collect(),
        counts: passes.iter().map(|p| p.count).collect(),
        cov: Some(cov),
    })
}

/// Between-batch covariance of the batch means divided by the batch count,
/// rescaled from the common range to each level's full coefficient count.
fn batch_covariance(passes: &[LevelPass], (_, len, nb): (usize, usize, usize)) -> Vec<Vec<f64>> {
    let j = passes.len();
    let means: Vec<Vec<f64>> = passes
        .iter()
        .map(|p| p.batch_sums.iter().map(|s| s / len as f64).collect())
        .collect();
    let centers: Vec<f64> = means.iter().map(|m| m.iter().sum::<f64>() / nb as f64).collect();
    let n_common = (nb * len) as f64;
    let scale: Vec<f64> = passes
        .iter()
        .map(|p| (n_common / p.count as f64).min(1.0).sqrt())
        .collect();
    let mut cov = vec![vec![0.0; j]; j];
    for a in 0..j {
        for b in a..j {
            let s: f64 = (0..nb)
                .map(|k| (means[a][k] - centers[a]) * (means[b][k] - centers[b]))
                .sum();
            let v = s / (nb as f64 - 1.0) / nb as f64 * scale[a] * scale[b];
            cov[a][b] = v;
            cov[b][a] = v;
        }
    }
    cov
}

/// Replaces each variance by a per-level estimate while keeping the
/// cross-level correlations of the common batches.
///
/// A level with at least [`MIN_BATCHES`] own batches of length
/// max(√M_j, 2τ_j) uses their batch means. Otherwise batches shorter than
/// τ_j understate the variance, so it is raised to at least 2ν̂_j²/η_j with
/// η_j = max(M_j/τ_j, 1) equivalent degrees of freedom.
fn rescale_diagonal(cov: &mut [Vec<f64>], passes: &[LevelPass], scales: &ScaleSet) {
    let var: Vec<f64> = passes
        .iter()
        .zip(scales.taus())
        .enumerate()
        .map(|(j, (p, tau))| {
            let nb = p.own_sums.len();
            if nb >= MIN_BATCHES {
                let means: Vec<f64> = p.own_sums.iter().map(|s| s / p.own_len as f64).collect();
                let c = means.iter().sum::<f64>() / nb as f64;
                let s2 = means.iter().map(|m| (m - c).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
                s2 * p.own_len as f64 / p.count as f64
            } else {
                let eta = (p.count as f64 / tau as f64).max(1.0);
                cov[j][j].max(2.0 * p.nu * p.nu / eta)
            }
        })
        .collect();
    let sd_old: Vec<f64> = (0..var.len()).map(|j| cov[j][j].sqrt()).collect();
    for a in 0..var.len() {
        for b in 0..var.len() {
            cov[a][b] = if a == b {
                var[a]
            } else if sd_old[a] > 0.0 && sd_old[b] > 0.0 {
                cov[a][b] / (sd_old[a] * sd_old[b]) * (var[a] * var[b]).sqrt()
            } else {
                0.0
            };
        }
    }
}

/// Batch-means estimate of Cov(ν̂) on its own.
pub fn estimate_wv_covariance(signal: &Signal, scales: &ScaleSet, batch_len: Option<usize>) -> Result<DMatrix<f64>> {
    let est = empirical_wv_with_cov(signal, scales, batch_len)?;
    Ok(est.cov_matrix().expect("covariance requested"))
}

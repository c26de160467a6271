//! Composite latent noise models: block declarations, parameter layout,
//! theoretical Haar wavelet variance and the unconstrained reparameterisation
//! used by the optimiser.

mod probe;
mod transform;
mod wv;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use probe::{identifiability_probe, OffendingPair, ProbeOptions, ProbeReport};
pub use transform::{Transform, DEFAULT_BETA_MIN};
pub(crate) use wv::{ar1_wv, block_wv_unchecked, model_wv_unchecked, sin_wv};
pub use wv::{model_wv, theoretical_wv_block};

/// Elementary latent process. Declaration order is the canonical block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessKind {
    /// White noise, parameter σ².
    WhiteNoise,
    /// Quantization noise, parameter Q².
    Quantization,
    /// First-order autoregressive process, parameters (φ, ς²).
    Ar1,
    /// Deterministic drift, parameter ω² (squared slope).
    Drift,
    /// Random walk, parameter γ².
    RandomWalk,
    /// Sinusoid with uniform random phase, parameters (α, β).
    Sinusoid,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 6] = [
        ProcessKind::WhiteNoise,
        ProcessKind::Quantization,
        ProcessKind::Ar1,
        ProcessKind::Drift,
        ProcessKind::RandomWalk,
        ProcessKind::Sinusoid,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ProcessKind::WhiteNoise => "WN",
            ProcessKind::Quantization => "QN",
            ProcessKind::Ar1 => "AR1",
            ProcessKind::Drift => "DR",
            ProcessKind::RandomWalk => "RW",
            ProcessKind::Sinusoid => "SIN",
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            ProcessKind::Ar1 | ProcessKind::Sinusoid => 2,
            _ => 1,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ProcessKind::WhiteNoise => &["sigma2"],
            ProcessKind::Quantization => &["q2"],
            ProcessKind::Ar1 => &["phi", "varsigma2"],
            ProcessKind::Drift => &["omega2"],
            ProcessKind::RandomWalk => &["gamma2"],
            ProcessKind::Sinusoid => &["alpha", "beta"],
        }
    }

    /// Whether a model may hold more than one block of this kind.
    pub fn repeatable(self) -> bool {
        matches!(self, ProcessKind::Ar1 | ProcessKind::Sinusoid)
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim().to_ascii_uppercase();
        ProcessKind::ALL
            .into_iter()
            .find(|k| k.token() == token)
            .ok_or_else(|| Error::Model(format!("unknown process token `{}`", s.trim())))
    }
}

/// Ordered set of latent blocks whose sum makes up the observed error.
///
/// Blocks are always held in canonical order (WN, QN, AR1…, DR, RW, SIN…),
/// which fixes the position of every parameter in θ.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    blocks: Vec<ProcessKind>,
    offsets: Vec<usize>,
    n_params: usize,
}

impl ModelSpec {
    pub fn new(mut blocks: Vec<ProcessKind>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Model("a model needs at least one block".into()));
        }
        blocks.sort();
        for kind in ProcessKind::ALL {
            if !kind.repeatable() && blocks.iter().filter(|&&k| k == kind).count() > 1 {
                return Err(Error::Model(format!("at most one {kind} block is allowed")));
            }
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut n_params = 0;
        for kind in &blocks {
            offsets.push(n_params);
            n_params += kind.n_params();
        }
        Ok(ModelSpec {
            blocks,
            offsets,
            n_params,
        })
    }

    pub fn blocks(&self) -> &[ProcessKind] {
        &self.blocks
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn count(&self, kind: ProcessKind) -> usize {
        self.blocks.iter().filter(|&&k| k == kind).count()
    }

    pub fn has_sinusoid(&self) -> bool {
        self.count(ProcessKind::Sinusoid) > 0
    }

    /// `(kind, index range in θ)` for every block, in canonical order.
    pub fn layout(&self) -> impl Iterator<Item = (ProcessKind, Range<usize>)> + '_ {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .map(|(&k, &o)| (k, o..o + k.n_params()))
    }

    /// Human-readable parameter names, e.g. `phi`, `sin_2.beta`.
    ///
    /// Repeatable blocks get a 1-based occurrence suffix only when the model
    /// holds more than one of them.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params);
        for (kind, occurrence) in self.block_occurrences() {
            let suffix = if self.count(kind) > 1 {
                format!("_{}", occurrence + 1)
            } else {
                String::new()
            };
            for name in kind.param_names() {
                names.push(format!("{name}{suffix}"));
            }
        }
        names
    }

    /// `(kind, occurrence index among blocks of that kind)` per block.
    pub fn block_occurrences(&self) -> Vec<(ProcessKind, usize)> {
        let mut seen = [0usize; 6];
        self.blocks
            .iter()
            .map(|&k| {
                let slot = ProcessKind::ALL.iter().position(|&a| a == k).unwrap();
                let occ = seen[slot];
                seen[slot] += 1;
                (k, occ)
            })
            .collect()
    }

    /// Checks θ against the block domains. Returns non-fatal warnings
    /// (currently only φ = 0, which the optimiser cannot exclude).
    pub fn validate(&self, theta: &ParamVector) -> Result<Vec<String>> {
        if theta.len() != self.n_params {
            return Err(Error::Shape(format!(
                "model {self} has {} parameters, got {}",
                self.n_params,
                theta.len()
            )));
        }
        let mut warnings = Vec::new();
        let names = self.param_names();
        for (kind, range) in self.layout() {
            let p = &theta.values()[range.clone()];
            if let Some(i) = p.iter().position(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{} is not finite", names[range.start + i])));
            }
            check_block_domain(kind, p)
                .map_err(|msg| Error::Domain(format!("{msg} (block {kind} at θ[{}..{}])", range.start, range.end)))?;
            if kind == ProcessKind::Ar1 && p[0] == 0.0 {
                warnings.push(format!("{} = 0 makes the AR1 block a white noise", names[range.start]));
            }
        }
        Ok(warnings)
    }

    /// Reorders repeatable blocks so AR1 blocks have decreasing φ and SIN
    /// blocks decreasing β. Both orderings leave ν(θ) unchanged.
    pub fn canonicalize(&self, theta: &ParamVector) -> ParamVector {
        let mut out = theta.values().to_vec();
        for kind in [ProcessKind::Ar1, ProcessKind::Sinusoid] {
            let key = if kind == ProcessKind::Ar1 { 0 } else { 1 };
            let ranges: Vec<Range<usize>> = self.layout().filter(|(k, _)| *k == kind).map(|(_, r)| r).collect();
            let mut pairs: Vec<[f64; 2]> = ranges.iter().map(|r| [out[r.start], out[r.start + 1]]).collect();
            pairs.sort_by(|a, b| b[key].total_cmp(&a[key]));
            for (r, p) in ranges.iter().zip(pairs) {
                out[r.start] = p[0];
                out[r.start + 1] = p[1];
            }
        }
        ParamVector::new(out)
    }
}

fn check_block_domain(kind: ProcessKind, p: &[f64]) -> std::result::Result<(), String> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 {
            Ok(())
        } else {
            Err(format!("{name} must be > 0, got {v}"))
        }
    };
    match kind {
        ProcessKind::WhiteNoise => positive("sigma2", p[0]),
        ProcessKind::Quantization => positive("q2", p[0]),
        ProcessKind::Drift => positive("omega2", p[0]),
        ProcessKind::RandomWalk => positive("gamma2", p[0]),
        ProcessKind::Ar1 => {
            if !(p[0] > -1.0 && p[0] < 1.0) {
                return Err(format!("phi must lie in (-1, 1), got {}", p[0]));
            }
            positive("varsigma2", p[1])
        }
        ProcessKind::Sinusoid => {
            positive("alpha", p[0])?;
            if !(p[1] > 0.0 && p[1] <= std::f64::consts::PI) {
                return Err(format!("beta must lie in (0, pi], got {}", p[1]));
            }
            Ok(())
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<&str> = self.blocks.iter().map(|k| k.token()).collect();
        f.write_str(&tokens.join(","))
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Parses comma-separated block tokens, case-insensitive, e.g. `wn,AR1,rw,SIN,SIN`.
    fn from_str(s: &str) -> Result<Self> {
        let blocks = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(ProcessKind::from_str)
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(blocks)
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Flat parameter vector θ laid out in canonical block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl FromStr for ParamVector {
    type Err = Error;

    /// Comma-separated reals in canonical block order.
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad parameter value `{}`: {e}", t.trim())))
            })
            .collect::<Result<Vec<_>>>()
            .map(ParamVector)
    }
}

/// Dyadic Haar scales τ_j = 2^j for j = 1..=J.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    levels: usize,
}

/// Below this many coefficients at the coarsest level a warning is raised.
pub const MIN_TOP_SCALE_COEFFICIENTS: usize = 128;

impl ScaleSet {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 || levels > 62 {
            return Err(Error::Scale(format!(
                "number of levels must be in 1..=62, got {levels}"
            )));
        }
        Ok(ScaleSet { levels })
    }

    /// ⌊log₂ T⌋ − 1 levels (at least one).
    pub fn default_for_length(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::Scale(format!("signal of length {n} is too short")));
        }
        let log2 = usize::BITS - 1 - n.leading_zeros();
        ScaleSet::new((log2 as usize - 1).max(1))
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn tau(&self, j: usize) -> u64 {
        1u64 << j
    }

    pub fn taus(&self) -> Vec<u64> {
        (1..=self.levels).map(|j| self.tau(j)).collect()
    }

    pub(crate) fn taus_f64(&self) -> Vec<f64> {
        self.taus().into_iter().map(|t| t as f64).collect()
    }

    /// Errors when τ_J ≥ T; returns a warning when the coarsest level has
    /// fewer than [`MIN_TOP_SCALE_COEFFICIENTS`] coefficients.
    pub fn check_length(&self, n: usize) -> Result<Option<String>> {
        let top = self.tau(self.levels);
        if top >= n as u64 {
            return Err(Error::Scale(format!(
                "coarsest scale τ_J = {top} must be smaller than the signal length {n}"
            )));
        }
        let m = n - top as usize + 1;
        Ok((m < MIN_TOP_SCALE_COEFFICIENTS)
            .then(|| format!("only {m} coefficients at the coarsest scale τ_J = {top}; its WV estimate is noisy")))
    }
}

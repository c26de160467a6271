//! Exact generators for the latent processes and their sums.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector, ProcessKind};
use crate::wavelet::Signal;

/// Name of the generator and sub-stream rule, recorded in output metadata.
pub const RNG_ALGORITHM: &str =
    "ChaCha20 (rand_chacha 0.3); key from seed_from_u64(seed), stream = (replicate << 8) | block";

/// Highest replicate index that fits the sub-stream layout.
pub const MAX_REPLICATE: u64 = (1 << 56) - 1;

/// Master seed plus replicate index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub seed: u64,
    pub replicate: u64,
}

impl SeedSpec {
    pub fn new(seed: u64, replicate: u64) -> Self {
        SeedSpec { seed, replicate }
    }

    /// Independent stream for block `block` (at most 256 blocks).
    pub fn block_rng(&self, block: usize) -> ChaCha20Rng {
        assert!(block < 256, "block index {block} exceeds the sub-stream layout");
        assert!(self.replicate <= MAX_REPLICATE, "replicate index too large");
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream((self.replicate << 8) | block as u64);
        rng
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// One realisation of length `n` of a single latent block.
pub fn simulate_block<R: Rng + ?Sized>(kind: ProcessKind, params: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Input("length must be at least 1".into()));
    }
    if params.len() != kind.n_params() {
        return Err(Error::Shape(format!(
            "{kind} takes {} parameter(s), got {}",
            kind.n_params(),
            params.len()
        )));
    }
    ModelSpec::new(vec![kind])?.validate(&params.to_vec().into())?;

    let out = match kind {
        ProcessKind::WhiteNoise => {
            let s = params[0].sqrt();
            (0..n).map(|_| s * normal(rng)).collect()
        }
        ProcessKind::Quantization => {
            let s = params[0].sqrt();
            let mut prev = s * normal(rng);
            (0..n)
                .map(|_| {
                    let z = s * normal(rng);
                    let q = z - prev;
                    prev = z;
                    q
                })
                .collect()
        }
        ProcessKind::Ar1 => {
            let (phi, s2) = (params[0], params[1]);
            let s = s2.sqrt();
            let mut y = (s2 / (1.0 - phi * phi)).sqrt() * normal(rng);
            (0..n)
                .map(|_| {
                    y = phi * y + s * normal(rng);
                    y
                })
                .collect()
        }
        ProcessKind::Drift => {
            let omega = params[0].sqrt();
            (1..=n).map(|t| omega * t as f64).collect()
        }
        ProcessKind::RandomWalk => {
            let s = params[0].sqrt();
            let mut r = 0.0;
            (0..n)
                .map(|_| {
                    r += s * normal(rng);
                    r
                })
                .collect()
        }
        ProcessKind::Sinusoid => {
            let (alpha, beta) = (params[0], params[1]);
            let phase = rng.gen::<f64>() * TAU;
            (1..=n).map(|t| alpha * (beta * t as f64 + phase).sin()).collect()
        }
    };
    Ok(out)
}

/// Sum of independent block realisations; block `b` draws from
/// `seed.block_rng(b)`.
pub fn simulate_model(model: &ModelSpec, theta: &ParamVector, n: usize, seed: SeedSpec) -> Result<Signal> {
    if n < 4 {
        return Err(Error::Input(format!("length must be at least 4, got {n}")));
    }
    model.validate(theta)?;
    let mut total = vec![0.0; n];
    for (b, (kind, range)) in model.layout().enumerate() {
        let mut rng = seed.block_rng(b);
        let block = simulate_block(kind, &theta.values()[range], n, &mut rng)?;
        for (t, v) in total.iter_mut().zip(block) {
            *t += v;
        }
    }
    Signal::new(total)
}

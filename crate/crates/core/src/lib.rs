//! Stochastic calibration of measurement-error signals with the generalized
//! method of wavelet moments (GMWM).
//!
//! A signal is modelled as a sum of latent blocks (white noise, quantization
//! noise, AR(1), drift, random walk and random-phase sinusoids). The Haar
//! wavelet variance of the signal is matched to its closed-form model
//! counterpart by weighted least squares.
//!
//! ```
//! use gmwm::{model_wv, ModelSpec, ScaleSet};
//!
//! let model: ModelSpec = "WN,RW".parse().unwrap();
//! let nu = model_wv(&model, &vec![1.0, 12.0].into(), &ScaleSet::new(1).unwrap()).unwrap();
//! assert!((nu[0] - 3.5).abs() < 1e-12);
//! ```

pub mod cli;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
mod optim;
pub mod simulate;
pub mod studies;
pub mod wavelet;

pub use error::{Error, Result};
pub use estimate::{fit, fit_signal, FitOptions, FitResult, WeightingChoice};
pub use model::{model_wv, theoretical_wv_block, ModelSpec, ParamVector, ProcessKind, ScaleSet, Transform};
pub use simulate::{simulate_model, SeedSpec};
pub use wavelet::{empirical_wv, empirical_wv_with_cov, Signal, WvEstimate};

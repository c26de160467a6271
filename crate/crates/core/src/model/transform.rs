use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::{ModelSpec, ParamVector, ProcessKind};

/// Default lower end of the frequency domain (rad/sample).
pub const DEFAULT_BETA_MIN: f64 = 1e-5;

/// Largest logistic probability the β inverse map returns; keeps β = π at a
/// finite preimage.
const P_MAX: f64 = 1.0 - 1e-13;

/// Smooth bijection between the constrained parameter space and ℝᵖ.
///
/// Positive parameters use `ln`, φ uses `atanh` onto (−1, 1), and β a
/// logistic map onto (β_min, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub beta_min: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Transform {
            beta_min: DEFAULT_BETA_MIN,
        }
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Positive,
    Correlation,
    Frequency,
}

fn coords(model: &ModelSpec) -> impl Iterator<Item = Coord> + '_ {
    model.blocks().iter().flat_map(|k| match k {
        ProcessKind::Ar1 => vec![Coord::Correlation, Coord::Positive],
        ProcessKind::Sinusoid => vec![Coord::Positive, Coord::Frequency],
        _ => vec![Coord::Positive],
    })
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Transform {
    pub fn new(beta_min: f64) -> Result<Self> {
        if !(0.0..PI).contains(&beta_min) {
            return Err(Error::Transform(format!(
                "beta_min must lie in [0, pi), got {beta_min}"
            )));
        }
        Ok(Transform { beta_min })
    }

    pub fn to_unconstrained(&self, model: &ModelSpec, theta: &ParamVector) -> Result<Vec<f64>> {
        if theta.len() != model.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                model.n_params(),
                theta.len()
            )));
        }
        coords(model)
            .zip(theta.values())
            .map(|(c, &v)| {
                if !v.is_finite() {
                    return Err(Error::Transform(format!("non-finite parameter {v}")));
                }
                match c {
                    Coord::Positive if v > 0.0 => Ok(v.ln()),
                    Coord::Correlation if v > -1.0 && v < 1.0 => Ok(v.atanh()),
                    Coord::Frequency if v > self.beta_min && v <= PI => {
                        let p = ((v - self.beta_min) / (PI - self.beta_min)).min(P_MAX);
                        Ok((p / (1.0 - p)).ln())
                    }
                    _ => Err(Error::Transform(format!("parameter {v} outside the transform domain"))),
                }
            })
            .collect()
    }

    pub fn from_unconstrained(&self, model: &ModelSpec, x: &[f64]) -> Result<ParamVector> {
        if x.len() != model.n_params() {
            return Err(Error::Shape(format!(
                "expected {} coordinates, got {}",
                model.n_params(),
                x.len()
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Transform(format!("non-finite coordinate {v}")));
        }
        Ok(ParamVector::new(self.map_unchecked(model, x)))
    }

    /// Inverse map without finiteness checks; used in the optimiser's hot loop.
    pub(crate) fn map_unchecked(&self, model: &ModelSpec, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.map_into(model, x, &mut out);
        out
    }

    pub(crate) fn map_into(&self, model: &ModelSpec, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(coords(model).zip(x).map(|(c, &v)| match c {
            Coord::Positive => v.exp(),
            Coord::Correlation => v.tanh().clamp(-1.0 + f64::EPSILON, 1.0 - f64::EPSILON / 2.0),
            Coord::Frequency => self.beta_min + (PI - self.beta_min) * logistic(v),
        }));
    }
}

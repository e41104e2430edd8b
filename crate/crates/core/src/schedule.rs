//! Depth-dependent interpolation ratios.
//!
//! The ratio for an insertion after block `l` of an `N`-block model is a
//! logistic curve in relative depth:
//!
//! ```text
//! alpha(l) = 1 / (1 + exp(-k * (l / N - c)))
//! ```
//!
//! Shallow insertions lean toward the lower flanking block, deep insertions
//! toward the upper one, and `l / N == c` gives exactly one half.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEEPNESS: f64 = 4.0;
pub const DEFAULT_CENTER: f64 = 0.375;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Steepness of the logistic curve.
    pub k: f64,
    /// Relative depth at which the ratio is one half.
    pub c: f64,
    /// Block count of the model before insertion.
    pub n: usize,
}

impl ScheduleParams {
    pub fn new(k: f64, c: f64, n: usize) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidSchedule(format!("k must be positive, got {k}")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidSchedule(format!("c must lie in [0, 1], got {c}")));
        }
        if n < 2 {
            return Err(Error::InvalidSchedule(format!("need at least 2 layers, got {n}")));
        }
        Ok(Self { k, c, n })
    }

    /// Default steepness and center for an `n`-block model.
    pub fn with_defaults(n: usize) -> Result<Self> {
        Self::new(DEFAULT_STEEPNESS, DEFAULT_CENTER, n)
    }

    /// Ratio for an insertion following block `position`.
    pub fn alpha(&self, position: usize) -> Result<f64> {
        schedule_alpha(position, self)
    }
}

pub fn schedule_alpha(position: usize, params: &ScheduleParams) -> Result<f64> {
    if position >= params.n {
        return Err(Error::PositionOutOfRange { position, max: params.n - 1 });
    }
    let depth = position as f64 / params.n as f64;
    Ok(1.0 / (1.0 + (-params.k * (depth - params.c)).exp()))
}

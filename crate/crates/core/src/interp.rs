//! Vector interpolation kernels.
//!
//! All kernels work on `f64` slices. Weights stored at lower precision are
//! decoded before interpolation and re-encoded only when a checkpoint is
//! written, so results do not depend on the storage format.
//!
//! Every kernel returns exact copies of its endpoints at `alpha == 0` and
//! `alpha == 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Dtype;
use crate::error::{Error, Result};

/// Below this angle (radians) the spherical weights `1 / sin(theta)` lose
/// precision and [`slerp`] falls back to [`lerp`]. Within the same distance
/// of `pi` the vectors are treated as antipodal.
pub const PARALLEL_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationMethod {
    Slerp,
    Lerp,
    #[serde(rename = "bcerp")]
    BCerp,
}

impl InterpolationMethod {
    pub const ALL: [InterpolationMethod; 3] = [Self::Slerp, Self::Lerp, Self::BCerp];

    pub fn apply(self, p: &[f64], q: &[f64], alpha: f64) -> Result<Vec<f64>> {
        match self {
            Self::Slerp => slerp(p, q, alpha),
            Self::Lerp => lerp(p, q, alpha),
            Self::BCerp => bcerp(p, q, alpha),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Slerp => "slerp",
            Self::Lerp => "lerp",
            Self::BCerp => "bcerp",
        }
    }
}

impl fmt::Display for InterpolationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterpolationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slerp" => Ok(Self::Slerp),
            "lerp" => Ok(Self::Lerp),
            "bcerp" => Ok(Self::BCerp),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// One named weight tensor, flattened and decoded to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub name: String,
    pub values: Vec<f64>,
    pub source_dtype: Dtype,
    pub shape: Vec<usize>,
}

impl ParameterVector {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        source_dtype: Dtype,
        shape: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("{} values for shape {:?}", values.len(), shape),
            });
        }
        Ok(Self { name, values, source_dtype, shape })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Interpolates toward `other`, keeping this vector's name, dtype and shape.
    pub fn interpolate(
        &self,
        other: &ParameterVector,
        alpha: f64,
        method: InterpolationMethod,
    ) -> Result<ParameterVector> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                name: self.name.clone(),
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let values = method.apply(&self.values, &other.values, alpha)?;
        Ok(ParameterVector {
            name: self.name.clone(),
            values,
            source_dtype: self.source_dtype,
            shape: self.shape.clone(),
        })
    }
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: q.len() });
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("interpolation operand".into()));
    }
    Ok(())
}

fn check_ratio(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidRatio(alpha))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn angle_unchecked(p: &[f64], q: &[f64]) -> Result<f64> {
    let (np, nq) = (norm(p), norm(q));
    if np == 0.0 || nq == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a / np) * (b / nq))
        .sum::<f64>()
        .clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Angle in `[0, pi]` between the directions of `p` and `q`.
pub fn angle_between(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    angle_unchecked(p, q)
}

/// Spherical interpolation.
///
/// The angle is measured between the normalized vectors, but the sine
/// weights are applied to the raw vectors, so magnitude changes smoothly
/// along the arc instead of being forced to unit length.
pub fn slerp(p: &[f64], q: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    check_ratio(alpha)?;
    if alpha == 0.0 {
        return Ok(p.to_vec());
    }
    if alpha == 1.0 {
        return Ok(q.to_vec());
    }
    let theta = angle_unchecked(p, q)?;
    if std::f64::consts::PI - theta < PARALLEL_EPSILON {
        return Err(Error::AntipodalVectors { theta });
    }
    if theta < PARALLEL_EPSILON {
        return lerp(p, q, alpha);
    }
    let sin_theta = theta.sin();
    let wp = ((1.0 - alpha) * theta).sin() / sin_theta;
    let wq = (alpha * theta).sin() / sin_theta;
    Ok(p.iter().zip(q).map(|(a, b)| wp * a + wq * b).collect())
}

pub fn lerp(p: &[f64], q: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    check_ratio(alpha)?;
    if alpha == 0.0 {
        return Ok(p.to_vec());
    }
    if alpha == 1.0 {
        return Ok(q.to_vec());
    }
    Ok(p.iter().zip(q).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect())
}

/// Quadratic Bezier interpolation with the midpoint `(p + q) / 2` as control
/// point. Evaluated term by term; the result coincides with [`lerp`] up to
/// rounding.
pub fn bcerp(p: &[f64], q: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    check_ratio(alpha)?;
    if alpha == 0.0 {
        return Ok(p.to_vec());
    }
    if alpha == 1.0 {
        return Ok(q.to_vec());
    }
    let w_lo = (1.0 - alpha) * (1.0 - alpha);
    let w_mid = 2.0 * alpha * (1.0 - alpha);
    let w_hi = alpha * alpha;
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| {
            let control = (a + b) / 2.0;
            w_lo * a + w_mid * control + w_hi * b
        })
        .collect())
}

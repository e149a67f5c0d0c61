use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::wrap_angle;

/// Spectral restriction on the admissible sinusoidal inputs. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrequencyBand {
    /// `[-pi, pi]`
    Full,
    /// `[-theta0, theta0]`
    Low { theta0: f64 },
    /// `[-pi, -theta0] U [theta0, pi]`
    High { theta0: f64 },
    /// `[theta1, theta2]`
    Middle { theta1: f64, theta2: f64 },
}

impl FrequencyBand {
    pub fn low(theta0: f64) -> Result<Self> {
        Self::Low { theta0 }.validated()
    }

    pub fn high(theta0: f64) -> Result<Self> {
        Self::High { theta0 }.validated()
    }

    pub fn middle(theta1: f64, theta2: f64) -> Result<Self> {
        Self::Middle { theta1, theta2 }.validated()
    }

    /// Checks the angle ranges; a middle band spanning the whole circle
    /// becomes [`FrequencyBand::Full`].
    pub fn validated(self) -> Result<Self> {
        match self {
            FrequencyBand::Full => Ok(self),
            FrequencyBand::Low { theta0 } | FrequencyBand::High { theta0 } => {
                if theta0.is_finite() && theta0 > 0.0 && theta0 < PI {
                    Ok(self)
                } else {
                    Err(Error::InvalidBand(format!("theta0 must lie in (0, pi), got {theta0}")))
                }
            }
            FrequencyBand::Middle { theta1, theta2 } => {
                if !(theta1.is_finite() && theta2.is_finite()) || theta1 < -PI || theta2 > PI || theta1 >= theta2 {
                    return Err(Error::InvalidBand(format!(
                        "middle band needs -pi <= theta1 < theta2 <= pi, got [{theta1}, {theta2}]"
                    )));
                }
                if theta2 - theta1 >= 2.0 * PI {
                    Ok(FrequencyBand::Full)
                } else {
                    Ok(self)
                }
            }
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, FrequencyBand::Full)
    }

    /// Whether `theta` (any real, taken modulo 2 pi) lies in the band up to `tol`.
    pub fn contains(&self, theta: f64, tol: f64) -> bool {
        let t = wrap_angle(theta);
        match *self {
            FrequencyBand::Full => true,
            FrequencyBand::Low { theta0 } => t.abs() <= theta0 + tol,
            FrequencyBand::High { theta0 } => t.abs() >= theta0 - tol,
            FrequencyBand::Middle { theta1, theta2 } => {
                let center = 0.5 * (theta1 + theta2);
                wrap_angle(t - center).abs() <= 0.5 * (theta2 - theta1) + tol
            }
        }
    }

    /// Closed intervals covering the band, in ascending order.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        match *self {
            FrequencyBand::Full => vec![(-PI, PI)],
            FrequencyBand::Low { theta0 } => vec![(-theta0, theta0)],
            FrequencyBand::High { theta0 } => vec![(-PI, -theta0), (theta0, PI)],
            FrequencyBand::Middle { theta1, theta2 } => vec![(theta1, theta2)],
        }
    }

    /// A frequency inside the band, used when every frequency is optimal.
    pub fn representative(&self) -> f64 {
        match *self {
            FrequencyBand::Full | FrequencyBand::Low { .. } => 0.0,
            FrequencyBand::High { .. } => PI,
            FrequencyBand::Middle { theta1, theta2 } => 0.5 * (theta1 + theta2),
        }
    }
}

impl std::fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrequencyBand::Full => write!(f, "full"),
            FrequencyBand::Low { theta0 } => write!(f, "low({theta0})"),
            FrequencyBand::High { theta0 } => write!(f, "high({theta0})"),
            FrequencyBand::Middle { theta1, theta2 } => write!(f, "middle({theta1}, {theta2})"),
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};

/// Offset `δ` in `log(δ + r̄_s)`; keeps the utility finite at zero rate.
pub const DEFAULT_LOG_OFFSET: f64 = 1e-6;

/// Separable concave utility of the SU rate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `Σ w_s r̄_s`.
    WeightedSum { weights: Vec<f64> },
    /// `Σ log(offset + r̄_s)`.
    LogUtility { offset: f64 },
    /// Applies `inner` to `min(caps_s, r̄_s)` (throughput under exogenous arrivals).
    Saturated {
        inner: Box<Objective>,
        caps: Vec<f64>,
    },
}

impl Objective {
    pub fn sum_rate(num_sus: usize) -> Self {
        Objective::WeightedSum {
            weights: vec![1.0; num_sus],
        }
    }

    pub fn log_utility() -> Self {
        Objective::LogUtility {
            offset: DEFAULT_LOG_OFFSET,
        }
    }

    pub fn saturated(inner: Objective, caps: Vec<f64>) -> Self {
        Objective::Saturated {
            inner: Box::new(inner),
            caps,
        }
    }

    pub fn validate(&self, num_sus: usize) -> Result<()> {
        match self {
            Objective::WeightedSum { weights } => {
                if weights.len() != num_sus {
                    return Err(CoopError::InvalidObjective(format!(
                        "{} weights for {num_sus} SUs",
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(CoopError::InvalidObjective(
                        "weights must be finite and nonnegative (negative weights are not concave-increasing)".into(),
                    ));
                }
            }
            Objective::LogUtility { offset } => {
                if !(offset.is_finite() && *offset > 0.0) {
                    return Err(CoopError::InvalidObjective("log offset must be > 0".into()));
                }
            }
            Objective::Saturated { inner, caps } => {
                if matches!(**inner, Objective::Saturated { .. }) {
                    return Err(CoopError::InvalidObjective("nested saturation".into()));
                }
                inner.validate(num_sus)?;
                if caps.len() != num_sus {
                    return Err(CoopError::InvalidObjective(format!(
                        "{} caps for {num_sus} SUs",
                        caps.len()
                    )));
                }
                if caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return Err(CoopError::InvalidObjective("caps must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Linear in the rates (after saturation is lifted into auxiliary variables).
    pub fn is_linear(&self) -> bool {
        match self {
            Objective::WeightedSum { .. } => true,
            Objective::LogUtility { .. } => false,
            Objective::Saturated { inner, .. } => inner.is_linear(),
        }
    }

    /// The utility applied to (possibly capped) rates.
    pub fn utility(&self) -> &Objective {
        match self {
            Objective::Saturated { inner, .. } => inner,
            other => other,
        }
    }

    pub fn caps(&self) -> Option<&[f64]> {
        match self {
            Objective::Saturated { caps, .. } => Some(caps),
            _ => None,
        }
    }

    /// Per-SU term `f_s(r)`.
    pub fn su_term(&self, su: usize, rate: f64) -> f64 {
        match self {
            Objective::WeightedSum { weights } => weights[su] * rate,
            Objective::LogUtility { offset } => (offset + rate).ln(),
            Objective::Saturated { inner, caps } => inner.su_term(su, rate.min(caps[su])),
        }
    }

    /// `f_s'(r)` of the unsaturated utility.
    pub fn su_derivative(&self, su: usize, rate: f64) -> f64 {
        match self {
            Objective::WeightedSum { weights } => weights[su],
            Objective::LogUtility { offset } => 1.0 / (offset + rate),
            Objective::Saturated { inner, .. } => inner.su_derivative(su, rate),
        }
    }

    /// `f_s''(r)` of the unsaturated utility.
    pub fn su_curvature(&self, su: usize, rate: f64) -> f64 {
        match self {
            Objective::WeightedSum { .. } => 0.0,
            Objective::LogUtility { offset } => -1.0 / ((offset + rate) * (offset + rate)),
            Objective::Saturated { inner, .. } => inner.su_curvature(su, rate),
        }
    }

    pub fn value(&self, rates: &[f64]) -> f64 {
        rates
            .iter()
            .enumerate()
            .map(|(s, &r)| self.su_term(s, r))
            .sum()
    }

    /// Gradient of [`value`](Self::value); a saturated term has slope 0 at
    /// and above its cap.
    pub fn gradient(&self, rates: &[f64]) -> Vec<f64> {
        rates
            .iter()
            .enumerate()
            .map(|(s, &r)| match self {
                Objective::Saturated { caps, .. } if r >= caps[s] => 0.0,
                _ => self.su_derivative(s, r),
            })
            .collect()
    }
}

//! Scalar M-estimator kernels.
//!
//! Each estimator is described by its loss `g(r)` and influence function
//! `g'(r)`. The Cauchy estimator `g(r) = ln(1 + r²/γ²)` has a bounded,
//! redescending influence `2r / (γ² + r²)`, which is what makes the
//! factorization solvers tolerant of extreme observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which M-estimator governs residual weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    L2,
    L1,
    Cauchy { gamma: f64 },
}

impl LossKind {
    pub fn cauchy(gamma: f64) -> Result<Self> {
        let kind = LossKind::Cauchy { gamma };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Cauchy { gamma } if !(gamma.is_finite() && gamma > 0.0) => Err(
                Error::Domain(format!("Cauchy scale must be positive and finite, got {gamma}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
            LossKind::Cauchy { .. } => "cauchy",
        }
    }

    /// `g(r)` without argument checks.
    #[inline]
    pub(crate) fn value_unchecked(&self, r: f64) -> f64 {
        match *self {
            LossKind::L2 => 0.5 * r * r,
            LossKind::L1 => r.abs(),
            LossKind::Cauchy { gamma } => (r / gamma).powi(2).ln_1p(),
        }
    }

    /// `g'(r)` without argument checks. L1 uses the zero subgradient at `r = 0`.
    #[inline]
    pub(crate) fn influence_unchecked(&self, r: f64) -> f64 {
        match *self {
            LossKind::L2 => r,
            LossKind::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Cauchy { gamma } => 2.0 * r / (gamma * gamma + r * r),
        }
    }
}

fn check_residual(r: f64) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("residual must be finite, got {r}")))
    }
}

/// Loss `g(r)`: `½r²` for L2, `|r|` for L1, `ln(1 + r²/γ²)` for Cauchy.
pub fn loss_value(kind: LossKind, r: f64) -> Result<f64> {
    kind.validate()?;
    check_residual(r)?;
    Ok(kind.value_unchecked(r))
}

/// Influence `g'(r)`: `r` for L2, `sign(r)` for L1 (0 at 0), `2r/(γ² + r²)` for Cauchy.
pub fn influence(kind: LossKind, r: f64) -> Result<f64> {
    kind.validate()?;
    check_residual(r)?;
    Ok(kind.influence_unchecked(r))
}

/// Per-entry Cauchy weight `1/(γ² + r²)` used by the multiplicative tensor updates.
pub fn cauchy_weight(gamma: f64, r: f64) -> Result<f64> {
    LossKind::Cauchy { gamma }.validate()?;
    check_residual(r)?;
    Ok(1.0 / (gamma * gamma + r * r))
}

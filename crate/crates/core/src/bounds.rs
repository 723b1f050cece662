//! Closed-form reference curves for expected sample sizes.

use crate::error::{Error, Result};

/// `ln(1/α) / klinf`: the floor on the expected stopping time of any α-correct test.
///
/// Returns `+∞` when `klinf == 0`.
pub fn lb_expected_samples(alpha: f64, klinf: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain("alpha", alpha, "must lie in (0, 1]"));
    }
    if !(klinf >= 0.0) {
        return Err(Error::domain("klinf", klinf, "must be nonnegative"));
    }
    let num = -alpha.ln();
    if klinf == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / klinf)
}

/// Gap complexity `Δ⁻² ln ln Δ⁻¹` for `Δ ∈ (0, 1/e)`.
pub fn f_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < (-1.0f64).exp()) {
        return Err(Error::domain("delta", delta, "must lie in (0, 1/e)"));
    }
    Ok((1.0 / delta).ln().ln() / (delta * delta))
}

/// KL_inf between unit-variance Gaussians: `(m_p − m_q)² / 2`.
pub fn klinf_gaussian(m_q: f64, m_p: f64) -> f64 {
    let d = m_p - m_q;
    0.5 * d * d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundKind {
    /// Samples as a function of α at a fixed KL_inf.
    AlphaRegime { klinf: f64 },
    /// Samples as a function of the gap Δ.
    GapRegime,
}

/// A reference curve evaluated pointwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCurve {
    pub kind: BoundKind,
}

impl BoundCurve {
    pub fn alpha_regime(klinf: f64) -> Self {
        Self {
            kind: BoundKind::AlphaRegime { klinf },
        }
    }

    pub fn gap_regime() -> Self {
        Self {
            kind: BoundKind::GapRegime,
        }
    }

    /// Evaluates at α (alpha regime) or Δ (gap regime).
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        match self.kind {
            BoundKind::AlphaRegime { klinf } => lb_expected_samples(x, klinf),
            BoundKind::GapRegime => f_delta(x),
        }
    }
}

//! Robust cost functions applied to squared normalized residuals.

use serde::{Deserialize, Serialize};

use super::FactorError;

/// Huber efficiency constant used when no parameter is given.
pub const HUBER_DEFAULT_K: f64 = 1.345;
/// Cauchy scale used when no parameter is given.
pub const CAUCHY_DEFAULT_K: f64 = 1.0;

/// Robust loss applied to `v = eᵀ Λ e`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "k", rename_all = "lowercase")]
pub enum RobustKind {
    #[default]
    None,
    Huber(f64),
    Cauchy(f64),
}

impl RobustKind {
    pub fn huber() -> Self {
        RobustKind::Huber(HUBER_DEFAULT_K)
    }

    pub fn cauchy() -> Self {
        RobustKind::Cauchy(CAUCHY_DEFAULT_K)
    }

    /// `(ρ(v), ρ'(v))`, without argument checks.
    #[inline]
    pub fn eval(&self, v: f64) -> (f64, f64) {
        match *self {
            RobustKind::None => (v, 1.0),
            RobustKind::Huber(k) => {
                let k2 = k * k;
                if v < k2 {
                    (v, 1.0)
                } else {
                    let s = v.sqrt();
                    (2.0 * k * s - k2, k / s)
                }
            }
            RobustKind::Cauchy(k) => {
                let k2 = k * k;
                let r = v / k2;
                (k2 * r.ln_1p(), 1.0 / (1.0 + r))
            }
        }
    }
}

/// Cost and IRLS weight of a squared normalized residual `v`.
pub fn robust_weight(kind: RobustKind, v: f64) -> Result<(f64, f64), FactorError> {
    if !(v >= 0.0) {
        return Err(FactorError::NegativeSquaredResidual(v));
    }
    match kind {
        RobustKind::Huber(k) | RobustKind::Cauchy(k) if !(k > 0.0) => {
            Err(FactorError::InvalidRobustParameter(k))
        }
        _ => Ok(kind.eval(v)),
    }
}

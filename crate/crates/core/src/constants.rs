//! Shared numeric constants. The policies and the audits must agree on these
//! to the last bit, so both read them from here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Golden ratio, `(1 + sqrt 5) / 2`.
pub fn phi() -> f64 {
    (1.0 + 5.0_f64.sqrt()) / 2.0
}

/// `sqrt 3`, the EDF threshold with a proven bound on 4-bounded instances.
pub fn sqrt3() -> f64 {
    3.0_f64.sqrt()
}

/// Constant triple for the 1-lookahead algorithm on 2-bounded instances and
/// its audit:
///
/// * `alpha = (sqrt 13 + 3) / 4`, the scheduling threshold,
/// * `delta = (5 - sqrt 13) / 6`, the chain charge split,
/// * `ratio = (sqrt 13 - 1) / 2`, the competitive ratio being certified.
///
/// The triple is the unique positive solution of
///
/// ```text
/// (1)  2 - delta - (ratio + 2 delta - 1) / alpha = ratio
/// (2)  1 - 2 delta + 2 alpha delta            = ratio
/// (3)  1 + 1 / (2 alpha)                      = ratio
/// ```
///
/// and additionally satisfies
///
/// ```text
/// (4)  2 - ratio - 3 delta = 0
/// (5)  2 - ratio - 2 delta > 0
/// (6)  1 - delta - (ratio - 1 + 2 delta) / (2 alpha) > 0
/// (7)  1 - ratio / (2 alpha) > 0
/// (8)  3 alpha delta < ratio
/// (9)  2 - ratio / alpha < ratio
/// ```
///
/// [`LcConstants::validate`] checks (1)-(4) to a residual below `1e-12` and
/// (5)-(9) strictly; [`lc_constants`] evaluates the closed forms and is
/// therefore infallible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcConstants {
    pub alpha: f64,
    pub delta: f64,
    pub ratio: f64,
}

pub const EQUATION_RESIDUAL: f64 = 1e-12;

impl LcConstants {
    pub fn validate(&self) -> Result<(), ConstantsError> {
        let LcConstants { alpha, delta, ratio } = *self;
        let residuals = [
            ("2 - d - (R + 2d - 1)/a = R", 2.0 - delta - (ratio + 2.0 * delta - 1.0) / alpha - ratio),
            ("1 - 2d + 2ad = R", 1.0 - 2.0 * delta + 2.0 * alpha * delta - ratio),
            ("1 + 1/(2a) = R", 1.0 + 1.0 / (2.0 * alpha) - ratio),
            ("2 - R - 3d = 0", 2.0 - ratio - 3.0 * delta),
        ];
        for (name, r) in residuals {
            if r.abs() >= EQUATION_RESIDUAL {
                return Err(ConstantsError::Equation { name, residual: r });
            }
        }
        let strict = [
            ("2 - R - 2d > 0", 2.0 - ratio - 2.0 * delta),
            ("1 - d - (R - 1 + 2d)/(2a) > 0", 1.0 - delta - (ratio - 1.0 + 2.0 * delta) / (2.0 * alpha)),
            ("1 - R/(2a) > 0", 1.0 - ratio / (2.0 * alpha)),
            ("3ad < R", ratio - 3.0 * alpha * delta),
            ("2 - R/a < R", ratio - (2.0 - ratio / alpha)),
        ];
        for (name, v) in strict {
            if v <= 0.0 {
                return Err(ConstantsError::Property { name, value: v });
            }
        }
        Ok(())
    }
}

/// The standard constant triple from the closed forms.
pub fn lc_constants() -> LcConstants {
    let s13 = 13.0_f64.sqrt();
    let c = LcConstants {
        alpha: (s13 + 3.0) / 4.0,
        delta: (5.0 - s13) / 6.0,
        ratio: (s13 - 1.0) / 2.0,
    };
    c.validate().expect("closed-form constants satisfy their defining equations");
    c
}

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error("constant equation `{name}` violated, residual {residual:e}")]
    Equation { name: &'static str, residual: f64 },
    #[error("constant property `{name}` violated, slack {value:e}")]
    Property { name: &'static str, value: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_satisfies_its_quadratic() {
        let p = phi();
        assert!((p * p - p - 1.0).abs() < 1e-15);
        // identity used by the marking policy's charge rules
        assert!((1.0 / p + 1.0 / (p * p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standard_triple_validates() {
        let c = lc_constants();
        assert!((c.alpha - 1.651387818865997).abs() < 1e-12);
        assert!((c.delta - 0.232408120756002).abs() < 1e-12);
        assert!((c.ratio - 1.302775637731995).abs() < 1e-12);
    }

    #[test]
    fn perturbed_triples_are_rejected() {
        let mut c = lc_constants();
        c.delta += 1e-6;
        assert!(matches!(c.validate(), Err(ConstantsError::Equation { .. })));
    }
}

use crate::error::{PnError, Result};

/// Branch selector for [`lambert_w`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Principal branch, `W ≥ −1`, defined for `x ≥ −1/e`.
    Principal,
    /// Lower branch, `W ≤ −1`, defined for `−1/e ≤ x < 0`.
    Lower,
}

const MAX_ITER: usize = 50;
const INV_E: f64 = 0.367_879_441_171_442_33;

/// Solves `W·e^W = x` on the requested branch with Halley's method.
pub fn lambert_w(branch: Branch, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(PnError::Domain(format!("lambert_w argument {x} is not finite")));
    }
    // tolerate rounding in a caller's computation of -1/e
    let branch_pt = -INV_E;
    if x < branch_pt - 1e-15 {
        return Err(PnError::Domain(format!("lambert_w argument {x} is below -1/e")));
    }
    match branch {
        Branch::Principal => {}
        Branch::Lower => {
            if x >= 0.0 {
                return Err(PnError::Domain(format!(
                    "lambert_w lower branch needs -1/e <= x < 0, got {x}"
                )));
            }
        }
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x <= branch_pt {
        return Ok(-1.0);
    }

    let mut w = initial_guess(branch, x);
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = w - step;
        let next = match branch {
            Branch::Principal => next.max(-1.0),
            Branch::Lower => next.min(-1.0),
        };
        let done = (next - w).abs() <= 1e-16 * (1.0 + w.abs());
        w = next;
        if done {
            break;
        }
    }
    let resid = (w * w.exp() - x).abs();
    if resid > 1e-12 * x.abs().max(1.0) {
        return Err(PnError::NoConvergence {
            iterations: MAX_ITER,
            detail: format!("lambert_w({branch:?}, {x}) residual {resid:.3e}"),
        });
    }
    Ok(w)
}

fn initial_guess(branch: Branch, x: f64) -> f64 {
    // series in p = sqrt(2(e·x + 1)) near the branch point
    let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
    match branch {
        Branch::Principal => {
            if x < -0.25 {
                -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
            } else if x < 3.0 {
                let l = x.ln_1p();
                l * (1.0 - l.ln_1p() / (2.0 + l))
            } else {
                let l1 = x.ln();
                let l2 = l1.ln();
                l1 - l2 + l2 / l1
            }
        }
        Branch::Lower => {
            if x < -0.25 {
                -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
            } else {
                let l1 = (-x).ln();
                let l2 = (-l1).ln();
                l1 - l2 + l2 / l1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn resid(w: f64, x: f64) -> f64 {
        (w * w.exp() - x).abs() / x.abs().max(1.0)
    }

    #[test]
    fn exact_points() {
        assert_eq!(lambert_w(Branch::Principal, 0.0).unwrap(), 0.0);
        assert!((lambert_w(Branch::Principal, E).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambert_w(Branch::Lower, -1.0 / E).unwrap(), -1.0);
        assert_eq!(lambert_w(Branch::Principal, -1.0 / E).unwrap(), -1.0);
    }

    #[test]
    fn omega_constant() {
        let w = lambert_w(Branch::Principal, 1.0).unwrap();
        assert!(resid(w, 1.0) < 1e-15);
        assert!((w - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(lambert_w(Branch::Principal, -0.5).is_err());
        assert!(lambert_w(Branch::Lower, 0.0).is_err());
        assert!(lambert_w(Branch::Lower, 0.1).is_err());
        assert!(lambert_w(Branch::Principal, f64::NAN).is_err());
    }

    #[test]
    fn branches_near_branch_point() {
        for k in 1..60 {
            let x = -1.0 / E + 10f64.powi(-(k % 16)) * 0.3;
            if x >= 0.0 {
                continue;
            }
            let w0 = lambert_w(Branch::Principal, x).unwrap();
            let w1 = lambert_w(Branch::Lower, x).unwrap();
            assert!(w0 >= -1.0 && w1 <= -1.0);
            assert!(resid(w0, x) <= 1e-12);
            assert!(resid(w1, x) <= 1e-12);
        }
    }

    #[test]
    fn lower_branch_tiny_argument() {
        let x = -1e-300;
        let w = lambert_w(Branch::Lower, x).unwrap();
        assert!(w < -600.0);
        assert!(resid(w, x) <= 1e-12);
    }
}

//! Finite-difference gradient verification.
//!
//! The checker is deliberately independent of the tape: it only re-runs a
//! user-supplied forward closure with perturbed parameter entries, so it can
//! falsify bugs in any backward rule. Routed models are piecewise smooth;
//! [`check_param_entry`] reports when the two perturbed evaluations landed on
//! different routing branches so callers can skip those points.

use crate::numerics::tensor::Tensor;

/// Outcome of checking one parameter entry against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdOutcome {
    /// |analytic - numeric| within tolerance.
    Match { analytic: f64, numeric: f64 },
    /// Tolerances exceeded.
    Mismatch { analytic: f64, numeric: f64, rel_err: f64 },
    /// The ±h evaluations disagreed on a discrete branch (e.g. routing flip);
    /// the derivative does not exist here.
    Discontinuous,
}

/// Relative-error comparison with an absolute floor near zero.
pub fn within_tolerance(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if diff <= abs_tol {
        return true;
    }
    diff <= rel_tol * analytic.abs().max(numeric.abs())
}

/// Central-difference check of `d loss / d param[index]`.
///
/// `eval` recomputes the scalar loss from scratch and returns it together
/// with an opaque branch signature (argmax decisions, routing choices);
/// differing signatures at ±h mean the point sits on a discontinuity.
pub fn check_param_entry<F>(
    param: &Tensor,
    index: usize,
    analytic: f64,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
    mut eval: F,
) -> FdOutcome
where
    F: FnMut() -> (f64, Vec<usize>),
{
    let original = param.data()[index];

    let mut poke = |value: f64| {
        param.update_data(|d| d[index] = value);
        eval()
    };
    let (loss_plus, branch_plus) = poke(original + h);
    let (loss_minus, branch_minus) = poke(original - h);
    param.update_data(|d| d[index] = original);

    if branch_plus != branch_minus {
        return FdOutcome::Discontinuous;
    }
    let numeric = (loss_plus - loss_minus) / (2.0 * h);
    if within_tolerance(analytic, numeric, rel_tol, abs_tol) {
        FdOutcome::Match { analytic, numeric }
    } else {
        let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-300);
        FdOutcome::Mismatch { analytic, numeric, rel_err }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches() {
        let w = Tensor::from_vec(&[1], vec![2.0]).unwrap().as_param();
        let eval = || {
            let x = w.data()[0];
            (x * x, Vec::new())
        };
        // d(x^2)/dx at 2 is 4.
        let out = check_param_entry(&w, 0, 4.0, 1e-5, 1e-6, 1e-9, eval);
        assert!(matches!(out, FdOutcome::Match { .. }), "{out:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let w = Tensor::from_vec(&[1], vec![2.0]).unwrap().as_param();
        let eval = || (w.data()[0] * w.data()[0], Vec::new());
        let out = check_param_entry(&w, 0, 3.5, 1e-5, 1e-6, 1e-9, eval);
        assert!(matches!(out, FdOutcome::Mismatch { .. }), "{out:?}");
    }

    #[test]
    fn branch_flip_is_reported() {
        let w = Tensor::from_vec(&[1], vec![0.0]).unwrap().as_param();
        let eval = || {
            let x = w.data()[0];
            (x.abs(), vec![usize::from(x > 0.0)])
        };
        let out = check_param_entry(&w, 0, 0.0, 1e-5, 1e-6, 1e-9, eval);
        assert_eq!(out, FdOutcome::Discontinuous);
    }
}

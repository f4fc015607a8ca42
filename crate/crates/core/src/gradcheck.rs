//! Central finite-difference gradient checking.
//!
//! The checker is deliberately independent of every analytic gradient path in
//! this crate: it only ever calls the supplied value closure, so it can serve
//! as the oracle for the hand-written backward passes.

use alloc::vec::Vec;

/// Result of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Coordinate at which the maximum occurred.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

/// Check `analytic` against central differences of `value` at `point`.
///
/// `value` must be a pure function of its argument. `step` is the absolute
/// finite-difference step; `floor` guards the relative-error denominator
/// (pass roughly the loss scale, e.g. `1e-3`).
pub fn check_gradient(
    point: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
    mut value: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    assert_eq!(point.len(), analytic.len());
    let mut buf: Vec<f64> = point.to_vec();
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in 0..point.len() {
        let orig = buf[i];
        buf[i] = orig + step;
        let fp = value(&buf);
        buf[i] = orig - step;
        let fm = value(&buf);
        buf[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let err = rel_err(analytic[i], numeric, floor);
        if err >= worst.max_rel_err {
            worst = GradCheck {
                max_rel_err: err,
                worst_index: i,
                analytic_at_worst: analytic[i],
                numeric_at_worst: numeric,
            };
        }
    }
    worst
}

/// Like [`check_gradient`] but only probes `indices`, for expensive values.
pub fn check_gradient_at(
    point: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    floor: f64,
    mut value: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    assert_eq!(point.len(), analytic.len());
    let mut buf: Vec<f64> = point.to_vec();
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for &i in indices {
        let orig = buf[i];
        buf[i] = orig + step;
        let fp = value(&buf);
        buf[i] = orig - step;
        let fm = value(&buf);
        buf[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let err = rel_err(analytic[i], numeric, floor);
        if err >= worst.max_rel_err {
            worst = GradCheck {
                max_rel_err: err,
                worst_index: i,
                analytic_at_worst: analytic[i],
                numeric_at_worst: numeric,
            };
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_gradient_passes() {
        // f(x) = sum(x_i^2), grad = 2x.
        let point = vec![0.3, -1.2, 2.0];
        let analytic = vec![0.6, -2.4, 4.0];
        let res = check_gradient(&point, &analytic, 1e-6, 1e-6, |x| {
            x.iter().map(|v| v * v).sum()
        });
        assert!(res.max_rel_err < 1e-8, "{res:?}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let point = vec![1.0];
        let analytic = vec![3.0]; // true gradient is 2.0
        let res = check_gradient(&point, &analytic, 1e-6, 1e-6, |x| x[0] * x[0]);
        assert!(res.max_rel_err > 0.1);
    }
}

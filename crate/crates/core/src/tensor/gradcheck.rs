//! Central finite-difference verification of analytic gradients.
//!
//! The error for one coordinate is `|a - n| / max(|a|, |n|, SCALE_FLOOR)`
//! where `a` is the analytic and `n` the numerical derivative. The floor
//! keeps coordinates whose true derivative is ~0 from reporting noise as a
//! relative error.

use serde::Serialize;

pub const FD_STEP: f64 = 1e-5;
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_rel_error.is_finite()
    }

    /// Combine reports from several checks of the same tolerance.
    pub fn merge(mut self, other: GradCheckReport) -> Self {
        self.checked += other.checked;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
        self
    }

    pub fn empty(tolerance: f64) -> Self {
        GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Compare `analytic` against central differences of the scalar function
/// `f` around `point`, on the coordinates `coords` (all when `None`).
pub fn check_gradient(
    f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    tolerance: f64,
) -> GradCheckReport {
    check_gradient_with_step(f, point, analytic, coords, tolerance, FD_STEP)
}

/// Same as [`check_gradient`] with an explicit central-difference step.
pub fn check_gradient_with_step(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    tolerance: f64,
    step: f64,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "gradient length must match point");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport::empty(tolerance);
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic[i], numeric);
        report.checked += 1;
        if rel.is_nan() || rel > report.max_rel_error {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
        }
        if !(rel < tolerance) {
            report.failures.push(Mismatch {
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: rel,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let good = check_gradient(f, &[2.0, -1.0], &[4.0, 3.0], None, 1e-6);
        assert!(good.passed(), "{good:?}");
        let bad = check_gradient(f, &[2.0, -1.0], &[4.0, 2.0], None, 1e-6);
        assert!(!bad.passed());
        assert_eq!(bad.failures[0].index, 1);
    }
}

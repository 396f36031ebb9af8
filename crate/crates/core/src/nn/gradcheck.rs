//! Central finite-difference gradient checking.

use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` with central differences of `loss_fn` around `params`.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], opts: FdOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: params.len(),
        tolerance: opts.tolerance,
        passed: true,
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + opts.step;
        let plus = loss_fn(&p);
        p[i] = orig - opts.step;
        let minus = loss_fn(&p);
        p[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(opts.abs_floor);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches() {
        let p = [0.3, -1.5, 2.0, 1e-3];
        let analytic: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = finite_diff_check(|q| q.iter().map(|x| x * x).sum(), &p, &analytic, FdOptions::default());
        assert!(r.passed);
        assert!(r.max_abs_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_detected() {
        let p = [1.0, 2.0];
        let r = finite_diff_check(|q| q[0] * q[1], &p, &[2.0, 2.0], FdOptions::default());
        assert!(!r.passed);
        assert_eq!(r.worst_index, 1);
    }
}

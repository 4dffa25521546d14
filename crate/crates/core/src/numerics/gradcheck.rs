use super::Scalar;
use crate::{Error, Result};

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate at which `max_rel_error` was attained.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps coordinates whose true
/// gradient is (numerically) zero from dividing noise by noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares `analytic` against central differences `(f(p+ε) − f(p−ε)) / 2ε`
/// taken coordinate by coordinate at `point`, and returns the worst relative error.
pub fn finite_diff_check<T, F>(point: &[T], analytic: &[f64], eps: T, floor: f64, mut f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if point.len() != analytic.len() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            left: vec![point.len()],
            right: vec![analytic.len()],
        });
    }
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: point.len(),
    };
    let two_eps = (eps + eps).as_f64();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x)?;
        x[i] = orig - eps;
        let down = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i}: f(p+ε)={up:?}, f(p−ε)={down:?}"
            )));
        }
        let numeric = (up.as_f64() - down.as_f64()) / two_eps;
        let rel = relative_error(analytic[i], numeric, floor);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

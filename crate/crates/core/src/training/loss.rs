//! Training objectives. Every loss also returns its gradient with respect to
//! the network output it consumes.

use crate::error::{Result, TseError};
use crate::metrics::energy;

const DB: f64 = 10.0 / std::f64::consts::LN_10;
pub const BCE_CLAMP: f64 = 1e-7;

/// `τ = 10^(−snr_max_db / 10)`.
pub fn snr_threshold(snr_max_db: f64) -> f64 {
    10f64.powf(-snr_max_db / 10.0)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(TseError::LengthMismatch { expected: a, actual: b });
    }
    Ok(())
}

/// Negative thresholded SNR, `10·log10(‖s−ŝ‖² + τ‖s‖²) − 10·log10‖s‖²`, and `∂/∂ŝ`.
pub fn tse_loss_with_grad(target: &[f64], estimate: &[f64], snr_max_db: f64) -> Result<(f64, Vec<f64>)> {
    check_len(target.len(), estimate.len())?;
    let e_s = energy(target);
    if !(e_s > 0.0) {
        return Err(TseError::ZeroReference);
    }
    let tau = snr_threshold(snr_max_db);
    let err: Vec<f64> = target.iter().zip(estimate).map(|(s, e)| s - e).collect();
    let denom = energy(&err) + tau * e_s;
    let loss = DB * (denom.ln() - e_s.ln());
    let grad = err.iter().map(|d| -2.0 * DB * d / denom).collect();
    Ok((loss, grad))
}

pub fn tse_loss(target: &[f64], estimate: &[f64], snr_max_db: f64) -> Result<f64> {
    tse_loss_with_grad(target, estimate, snr_max_db).map(|(l, _)| l)
}

/// Loss for an all-zero target, referenced to the mixture energy:
/// `10·log10(‖ŝ‖² + τ‖x‖²) − 10·log10(τ‖x‖²)`, and `∂/∂ŝ`. Zero when `ŝ = 0`.
pub fn zero_target_loss_with_grad(mixture: &[f64], estimate: &[f64], snr_max_db: f64) -> Result<(f64, Vec<f64>)> {
    check_len(mixture.len(), estimate.len())?;
    let floor = snr_threshold(snr_max_db) * energy(mixture);
    if !(floor > 0.0) {
        return Err(TseError::ZeroMixture);
    }
    let denom = energy(estimate) + floor;
    let loss = DB * (denom.ln() - floor.ln());
    let grad = estimate.iter().map(|e| 2.0 * DB * e / denom).collect();
    Ok((loss, grad))
}

pub fn zero_target_loss(mixture: &[f64], estimate: &[f64], snr_max_db: f64) -> Result<f64> {
    zero_target_loss_with_grad(mixture, estimate, snr_max_db).map(|(l, _)| l)
}

/// Dispatches to the zero-target branch when the target is silent.
pub fn extraction_loss_with_grad(
    target: &[f64],
    estimate: &[f64],
    mixture: &[f64],
    snr_max_db: f64,
) -> Result<(f64, Vec<f64>)> {
    if energy(target) > 0.0 {
        tse_loss_with_grad(target, estimate, snr_max_db)
    } else {
        check_len(target.len(), estimate.len())?;
        zero_target_loss_with_grad(mixture, estimate, snr_max_db)
    }
}

/// Mean binary cross-entropy over classes with probabilities clamped to
/// `[1e-7, 1 − 1e-7]`, and `∂/∂p` (zero where the clamp is active).
pub fn cls_loss_with_grad(probs: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(TseError::ShapeMismatch(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    let c = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let inside = q == p;
        if y {
            loss -= q.ln();
            grad.push(if inside { -1.0 / (q * c) } else { 0.0 });
        } else {
            loss -= (1.0 - q).ln();
            grad.push(if inside { 1.0 / ((1.0 - q) * c) } else { 0.0 });
        }
    }
    Ok((loss / c, grad))
}

pub fn cls_loss(probs: &[f64], labels: &[bool]) -> Result<f64> {
    cls_loss_with_grad(probs, labels).map(|(l, _)| l)
}

/// `L = L_tse + λ·L_cls`.
pub fn total_loss(tse: f64, cls: f64, lambda: f64) -> f64 {
    tse + lambda * cls
}

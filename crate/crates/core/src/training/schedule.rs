//! Linear warm-up followed by cosine decay to zero, interpolated per step.

/// Learning rate after `step` optimizer updates.
pub fn lr_at(step: usize, steps_per_epoch: usize, peak_lr: f64, warmup_epochs: usize, epochs: usize) -> f64 {
    let warmup = (warmup_epochs * steps_per_epoch) as f64;
    let total = (epochs * steps_per_epoch) as f64;
    let s = step as f64;
    if s < warmup {
        return peak_lr * s / warmup;
    }
    let span = total - warmup;
    if span <= 0.0 {
        return peak_lr;
    }
    let progress = ((s - warmup) / span).min(1.0);
    peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

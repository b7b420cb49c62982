//! Closed-form parameter and multiply-accumulate counts.

use serde::{Deserialize, Serialize};

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub params: usize,
    /// Multiply-accumulates per second of input audio.
    pub macs_per_second: f64,
}

struct Count {
    params: usize,
    macs_per_frame: usize,
}

fn tcn(cfg: &ModelConfig, blocks: usize, stacks: usize, affine: bool) -> Count {
    let (b, h, sc, p) = (cfg.bottleneck, cfg.hidden, cfg.skip, cfg.kernel);
    let off = usize::from(affine);
    let norm = if affine { 2 * h } else { h };
    let mut params = 0;
    let mut macs = 0;
    for s in 0..stacks {
        for i in 0..blocks {
            params += h * b + off * h + 1 + norm + h * p + off * h + 1 + norm + sc * h + off * sc;
            macs += h * b + h * p + sc * h;
            if s + 1 < stacks || i + 1 < blocks {
                params += b * h + off * b;
                macs += b * h;
            }
        }
    }
    Count { params, macs_per_frame: macs }
}

fn gru(input: usize, hidden: usize) -> Count {
    Count { params: 3 * hidden * (input + hidden) + 6 * hidden, macs_per_frame: 3 * hidden * (input + hidden) }
}

/// Counts every trainable parameter and the MACs of one forward pass,
/// normalised to one second of audio at the configured sample rate.
///
/// One MAC is one multiply-add in a convolution, recurrent or linear layer;
/// the query conditioning and mask application add one multiply per element.
/// Normalisation and activation arithmetic is not counted.
pub fn count_params_macs(cfg: &ModelConfig) -> Complexity {
    let (d, w, n) = (cfg.filters, cfg.window(), cfg.feature_dim);
    let mut params = 0;
    let mut macs = 0;

    params += d * w;
    macs += d * w;

    params += 2 * d + cfg.bottleneck * d + cfg.bottleneck;
    macs += cfg.bottleneck * d;
    let shared = tcn(cfg, cfg.shared_blocks, cfg.shared_stacks, true);
    params += shared.params;
    macs += shared.macs_per_frame;

    params += n * cfg.classes;
    macs += n;

    let mask = tcn(cfg, cfg.mask_blocks, cfg.mask_stacks, false);
    params += mask.params + 1 + d * cfg.skip;
    macs += mask.macs_per_frame + d * cfg.skip + d;

    params += w * d;
    macs += d * w;

    if cfg.classifier {
        let h = cfg.gru_hidden / 2;
        let width = 2 * h;
        for input in [n, width] {
            let g = gru(input, h);
            params += 2 * g.params;
            macs += 2 * g.macs_per_frame;
        }
        params += cfg.classes * width + cfg.classes;
        macs += cfg.classes * width;
    }

    let frames_per_second = cfg.sample_rate as f64 / cfg.hop() as f64;
    Complexity { params, macs_per_second: macs as f64 * frames_per_second }
}

//! Per-epoch multipliers for the KL and auxiliary terms.

use super::config::LossWeights;

/// Epochs during which auxiliary terms are switched off.
pub const AUX_DELAY: f64 = 3.0;
/// Epochs over which auxiliary terms ramp from 0 to 1 after the delay.
pub const AUX_RAMP: f64 = 10.0;

/// Cyclical β: each of `weights.cycles` cycles rises linearly from 0 to
/// `β_max` over its first half and holds `β_max` over the second half.
///
/// `epoch` may be fractional.
pub fn beta_schedule(epoch: f64, total_epochs: usize, weights: &LossWeights) -> f64 {
    let cycle_len = total_epochs as f64 / weights.cycles.max(1) as f64;
    if cycle_len <= 0.0 {
        return weights.beta_max;
    }
    let pos = epoch.max(0.0).rem_euclid(cycle_len) / cycle_len;
    weights.beta_max * (2.0 * pos).min(1.0)
}

/// 0 before epoch 3, linear over the next 10 epochs, 1 from epoch 13 on.
pub fn aux_ramp(epoch: f64) -> f64 {
    ((epoch - AUX_DELAY) / AUX_RAMP).clamp(0.0, 1.0)
}

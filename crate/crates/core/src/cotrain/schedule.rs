use super::config::TrainConfig;

/// Keep ratio after `t` completed epochs: `1 - min(t/t_k · tau, tau)`.
pub fn rate_schedule(t: usize, t_k: usize, tau: f64) -> f64 {
    1.0 - (t as f64 / t_k as f64 * tau).min(tau)
}

/// Learning rate for 0-based `epoch`: constant until `lr_decay_start`,
/// then linear towards zero at `epochs`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    if epoch < config.lr_decay_start {
        config.lr
    } else {
        let remaining = config.epochs.saturating_sub(epoch) as f64;
        config.lr * remaining / (config.epochs - config.lr_decay_start) as f64
    }
}

use crate::error::{Error, Result};

/// Number of samples kept at ratio `rate` out of `len`: `ceil(rate · len)`,
/// at least one.
pub fn keep_count(len: usize, rate: f64) -> usize {
    // guard against 0.1 * 10 = 1.0000000000000002 style round-up
    let raw = rate * len as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    (k as usize).clamp(1, len)
}

/// Indices of the `ceil(rate · len)` smallest losses, ties resolved towards
/// lower indices, returned in ascending index order.
pub fn select_small_loss(losses: &[f64], rate: f64) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(Error::Validation("small-loss selection over an empty batch".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Validation(format!("keep ratio {rate} outside (0, 1]")));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite {
            op: "select_small_loss",
            detail: format!("loss {i} is {}", losses[i]),
        });
    }
    let k = keep_count(losses.len(), rate);
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

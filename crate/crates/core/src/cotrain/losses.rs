use super::config::PseudoLabelMode;
use crate::error::{Error, Result};
use crate::ndgrad::LOG_FLOOR;

/// One-hot vector at the argmax of `probs`; ties go to the lowest index.
pub fn hard_pseudo_label(probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    if !probs.is_empty() {
        out[crate::models::argmax(probs)] = 1.0;
    }
    out
}

/// `-Σ_j target_j · ln max(p_j, 1e-12)`.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(LOG_FLOOR).ln())
        .sum()
}

fn check_rows(op: &'static str, a: &[f64], b: &[f64], c: usize) -> Result<usize> {
    if c == 0 || a.len() != b.len() || !a.len().is_multiple_of(c) {
        return Err(Error::dim(op, format!("{} and {} values with {c} classes", a.len(), b.len())));
    }
    Ok(a.len() / c)
}

/// Per-sample `CE(p_f, y) + CE(p_g, y)` over row-major `[N, C]` inputs.
pub fn classification_loss(probs_f: &[f64], probs_g: &[f64], noisy_onehot: &[f64], c: usize) -> Result<Vec<f64>> {
    let n = check_rows("classification_loss", probs_f, probs_g, c)?;
    check_rows("classification_loss", probs_f, noisy_onehot, c)?;
    Ok((0..n)
        .map(|i| {
            let r = i * c..(i + 1) * c;
            cross_entropy(&probs_f[r.clone()], &noisy_onehot[r.clone()]) + cross_entropy(&probs_g[r.clone()], &noisy_onehot[r])
        })
        .collect())
}

/// Target distribution derived from the weak-view prediction.
pub fn anchor_targets(probs_f_weak: &[f64], c: usize, mode: PseudoLabelMode) -> Vec<f64> {
    match mode {
        PseudoLabelMode::Hard => probs_f_weak.chunks(c).flat_map(hard_pseudo_label).collect(),
        PseudoLabelMode::Soft => probs_f_weak.to_vec(),
    }
}

/// Per-sample `CE(p_g, anchor(p_f))`; reads no labels.
pub fn matching_loss(probs_f_weak: &[f64], probs_g_strong: &[f64], c: usize, mode: PseudoLabelMode) -> Result<Vec<f64>> {
    let n = check_rows("matching_loss", probs_f_weak, probs_g_strong, c)?;
    let targets = anchor_targets(probs_f_weak, c, mode);
    Ok((0..n)
        .map(|i| cross_entropy(&probs_g_strong[i * c..(i + 1) * c], &targets[i * c..(i + 1) * c]))
        .collect())
}

/// `(1 - λ)·l_c + λ·l_a`, elementwise.
pub fn total_loss(l_c: &[f64], l_a: &[f64], lambda: f64) -> Vec<f64> {
    l_c.iter().zip(l_a).map(|(&c, &a)| (1.0 - lambda) * c + lambda * a).collect()
}

/// Row-major one-hot encoding.
pub fn one_hot(labels: &[usize], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        out[i * c + l] = 1.0;
    }
    out
}

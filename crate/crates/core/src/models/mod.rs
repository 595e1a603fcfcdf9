//! Network builders: an MLP for desk-scale runs and the 7-layer CIFAR CNN.
//!
//! Parameter names (`fc0.weight`, `conv3.weight`, `bn3.running_var`,
//! `head.bias`, ...) are stable and key the checkpoint format.

mod checkpoint;
mod network;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, restore_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{
    accuracy, argmax, build_cnn7, build_mlp, predict, Architecture, Layer, Mode, Network, Param, BN_MOMENTUM,
    CNN7_FLAT,
};

use crate::error::Result;
use crate::ndgrad::{grad_check, GradCheckConfig, GradCheckReport, GraphObjective, Tensor};

/// Finite-difference check of the mean cross-entropy of `network` (train
/// mode) on `inputs` / one-hot `targets`, in 64-bit precision.
pub fn grad_check_network(
    network: &Network,
    inputs: &Tensor<f32>,
    labels: &[usize],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut net = network.clone();
    net.set_mode(Mode::Train);
    let x: Tensor<f64> = inputs.cast();
    let c = net.class_count();
    let mut onehot = vec![0.0f64; labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    let target = Tensor::new([labels.len(), c], onehot)?;
    let params = net
        .trainable_names()
        .into_iter()
        .zip(net.trainable().map(|t| t.cast::<f64>()))
        .collect();
    let n = labels.len();
    let mut objective = GraphObjective::new(params, move |g, vars| {
        let xv = g.constant(x.clone());
        let (logits, _) = net.forward(g, vars, xv)?;
        let (losses, _) = g.softmax_cross_entropy(logits, &target)?;
        let total = g.sum(losses)?;
        g.scale(total, 1.0 / n as f64)
    });
    grad_check(&mut objective, config)
}

//! Weak (crop-and-flip) and strong (crop-and-flip plus RandAugment) image
//! augmentation on `[C, H, W]` tensors with values in `[0, 1]`.
//!
//! Every random draw for sample `i` comes from a stream keyed by
//! `(seed, view, epoch, step, i)`, so results do not depend on batch
//! composition or on how samples are spread over workers.

mod policy;
mod transforms;

pub use policy::{
    augment, crop_flip, flip_horizontal, rand_augment, rand_augment_traced, replay, weak_augment, AugmentKind,
    AugmentTrace, AugmentationPolicy, CropFlip, TransformStep, DEFAULT_PAD, DEFAULT_TRANSFORMS_PER_IMAGE,
};
pub use transforms::{cutout, transform_apply, TransformKind, TransformSpec, CUTOUT_FILL, CUTOUT_FRACTION};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::seed::{self, tag, Stream};

/// Which network view a stream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Weak,
    Strong,
}

/// Random stream for one sample at one training step.
pub fn sample_stream(seed: u64, view: View, epoch: usize, step: usize, index: usize) -> Stream {
    let view_tag = match view {
        View::Weak => tag::AUGMENT_WEAK,
        View::Strong => tag::AUGMENT_STRONG,
    };
    seed::stream(seed, &[view_tag, epoch as u64, step as u64, index as u64])
}

/// Augments every image of a `[B, C, H, W]` batch; `indices[b]` is the
/// dataset index of row `b`.
pub fn augment_batch(
    images: &Tensor<f32>,
    indices: &[usize],
    policy: &AugmentationPolicy,
    seed: u64,
    view: View,
    epoch: usize,
    step: usize,
) -> Result<Tensor<f32>> {
    let shape = images.shape().to_vec();
    if shape.len() != 4 || shape[0] != indices.len() {
        return Err(Error::dim(
            "augment_batch",
            format!("batch {shape:?} with {} indices", indices.len()),
        ));
    }
    if policy.kind == AugmentKind::None {
        return Ok(images.clone());
    }
    let mut data = Vec::with_capacity(images.numel());
    for (b, &i) in indices.iter().enumerate() {
        let img = Tensor::new(&shape[1..], images.row(b).to_vec())?;
        let mut rng = sample_stream(seed, view, epoch, step, i);
        data.extend_from_slice(augment(&img, policy, &mut rng)?.data());
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transforms::{cutout, transform_apply, TransformKind};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

pub const DEFAULT_PAD: usize = 4;
pub const DEFAULT_TRANSFORMS_PER_IMAGE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    None,
    Weak,
    Strong,
}

/// Description of one augmentation pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub kind: AugmentKind,
    #[serde(default = "default_pad")]
    pub pad: usize,
    #[serde(default = "default_set")]
    pub transform_set: Vec<TransformKind>,
    #[serde(default = "default_m")]
    pub transforms_per_image: usize,
    /// Overrides of the sampling range per transform.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub magnitude_ranges: BTreeMap<TransformKind, [f64; 2]>,
}

fn default_pad() -> usize {
    DEFAULT_PAD
}

fn default_set() -> Vec<TransformKind> {
    TransformKind::DEFAULT_SET.to_vec()
}

fn default_m() -> usize {
    DEFAULT_TRANSFORMS_PER_IMAGE
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self {
            kind: AugmentKind::None,
            ..Self::weak(0)
        }
    }

    pub fn weak(pad: usize) -> Self {
        Self {
            kind: AugmentKind::Weak,
            pad,
            transform_set: default_set(),
            transforms_per_image: DEFAULT_TRANSFORMS_PER_IMAGE,
            magnitude_ranges: BTreeMap::new(),
        }
    }

    pub fn strong(pad: usize, transform_set: Vec<TransformKind>, transforms_per_image: usize) -> Self {
        Self {
            kind: AugmentKind::Strong,
            pad,
            transform_set,
            transforms_per_image,
            magnitude_ranges: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != AugmentKind::Strong {
            return Ok(());
        }
        if self.transforms_per_image == 0 {
            return Err(Error::Validation("transforms_per_image must be >= 1".into()));
        }
        if self.transform_set.is_empty() {
            return Err(Error::Validation("transform_set must not be empty".into()));
        }
        for (&kind, &[lo, hi]) in &self.magnitude_ranges {
            let Some([tlo, thi]) = kind.spec().parameter_range else {
                return Err(Error::Validation(format!("{kind} takes no magnitude")));
            };
            if !(lo <= hi && lo >= tlo && hi <= thi) {
                return Err(Error::Validation(format!(
                    "{kind}: range [{lo}, {hi}] not inside [{tlo}, {thi}]"
                )));
            }
        }
        Ok(())
    }

    /// Sampling range for `kind`: the override if present, else the table range.
    pub fn range_of(&self, kind: TransformKind) -> Option<[f64; 2]> {
        self.magnitude_ranges
            .get(&kind)
            .copied()
            .or(kind.spec().parameter_range)
    }
}

/// Weak step outcome: crop offsets into the padded image and flip bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropFlip {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
}

/// One RandAugment draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformStep {
    pub kind: TransformKind,
    /// `0.0` for parameterless transforms.
    pub magnitude: f64,
    /// Cutout centre `(cy, cx)` in pixels.
    pub center: Option<(f64, f64)>,
}

/// Everything drawn while augmenting one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentTrace {
    pub crop: Option<CropFlip>,
    pub steps: Vec<TransformStep>,
}

/// Zero-pads by `pad`, crops back at `(offset_y, offset_x)` and optionally
/// mirrors horizontally.
pub fn crop_flip(image: &Tensor<f32>, pad: usize, cf: CropFlip) -> Result<Tensor<f32>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::dim("augment", format!("expected [C,H,W] image, got {:?}", image.shape())));
    };
    if cf.offset_y > 2 * pad || cf.offset_x > 2 * pad {
        return Err(Error::Validation(format!(
            "crop offset ({}, {}) exceeds 2·pad = {}",
            cf.offset_y,
            cf.offset_x,
            2 * pad
        )));
    }
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + cf.offset_y) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let cx = if cf.flip { w - 1 - x } else { x };
                let sx = (cx + cf.offset_x) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Tensor::new([c, h, w], out)
}

/// Horizontal mirror.
pub fn flip_horizontal(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    crop_flip(
        image,
        0,
        CropFlip {
            offset_y: 0,
            offset_x: 0,
            flip: true,
        },
    )
}

fn draw_crop_flip<R: Rng + ?Sized>(pad: usize, rng: &mut R) -> CropFlip {
    CropFlip {
        offset_y: rng.random_range(0..=2 * pad),
        offset_x: rng.random_range(0..=2 * pad),
        flip: rng.random_bool(0.5),
    }
}

/// Random crop from the zero-padded image followed by a coin-flip mirror.
pub fn weak_augment<R: Rng + ?Sized>(image: &Tensor<f32>, pad: usize, rng: &mut R) -> Result<Tensor<f32>> {
    let cf = draw_crop_flip(pad, rng);
    crop_flip(image, pad, cf)
}

/// Weak crop-and-flip, then `M` transforms drawn with replacement from the
/// policy's set, each at a uniformly drawn magnitude.
pub fn rand_augment<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    rand_augment_traced(image, policy, rng).map(|(img, _)| img)
}

pub fn rand_augment_traced<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<(Tensor<f32>, AugmentTrace)> {
    if policy.kind != AugmentKind::Strong {
        return Err(Error::Config("rand_augment needs a strong policy".into()));
    }
    policy.validate()?;
    let cf = draw_crop_flip(policy.pad, rng);
    let mut out = crop_flip(image, policy.pad, cf)?;
    let mut trace = AugmentTrace {
        crop: Some(cf),
        steps: Vec::with_capacity(policy.transforms_per_image),
    };
    let [h, w] = [image.shape()[1], image.shape()[2]];
    for _ in 0..policy.transforms_per_image {
        let kind = policy.transform_set[rng.random_range(0..policy.transform_set.len())];
        let magnitude = match policy.range_of(kind) {
            Some([lo, hi]) if hi > lo => rng.random_range(lo..=hi),
            Some([lo, _]) => lo,
            None => 0.0,
        };
        let step = if kind == TransformKind::Cutout {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            out = cutout(&out, cy, cx)?;
            TransformStep {
                kind,
                magnitude,
                center: Some((cy, cx)),
            }
        } else {
            out = transform_apply(kind, magnitude, &out)?;
            TransformStep {
                kind,
                magnitude,
                center: None,
            }
        };
        trace.steps.push(step);
    }
    Ok((out, trace))
}

/// Replays a trace on `image`.
pub fn replay(image: &Tensor<f32>, pad: usize, trace: &AugmentTrace) -> Result<Tensor<f32>> {
    let mut out = match trace.crop {
        Some(cf) => crop_flip(image, pad, cf)?,
        None => image.clone(),
    };
    for step in &trace.steps {
        out = match step.center {
            Some((cy, cx)) => cutout(&out, cy, cx)?,
            None => transform_apply(step.kind, step.magnitude, &out)?,
        };
    }
    Ok(out)
}

/// Applies `policy` to one image.
pub fn augment<R: Rng + ?Sized>(image: &Tensor<f32>, policy: &AugmentationPolicy, rng: &mut R) -> Result<Tensor<f32>> {
    match policy.kind {
        AugmentKind::None => Ok(image.clone()),
        AugmentKind::Weak => weak_augment(image, policy.pad, rng),
        AugmentKind::Strong => rand_augment(image, policy, rng),
    }
}

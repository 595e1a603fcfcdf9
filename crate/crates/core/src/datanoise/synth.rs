//! Desk-scale synthetic image classes: one cosine texture per class plus
//! per-sample contrast jitter and Gaussian pixel noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::seed::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_count: usize,
    pub per_class: usize,
    pub image_side: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    pub noise_std: f64,
    /// Peak deviation of a template from mid-gray.
    pub amplitude: f64,
}

impl SynthSpec {
    pub const DEFAULT_NOISE_STD: f64 = 0.25;
    pub const DEFAULT_AMPLITUDE: f64 = 0.2;

    pub fn new(class_count: usize, per_class: usize, image_side: usize, seed: u64) -> Self {
        Self {
            class_count,
            per_class,
            image_side,
            seed,
            noise_std: Self::DEFAULT_NOISE_STD,
            amplitude: Self::DEFAULT_AMPLITUDE,
        }
    }

    /// Spatial frequencies `(fx, fy)` of the class templates, ordered by
    /// total frequency. Horizontal patterns are even about the image centre,
    /// so a horizontal flip maps every template onto itself.
    fn frequencies(&self) -> Vec<(usize, usize)> {
        let max = self.image_side / 2;
        let mut out = Vec::new();
        for total in 1..=2 * max {
            for fx in (0..=total.min(max)).rev() {
                let fy = total - fx;
                if fy <= max {
                    out.push((fx, fy));
                }
            }
        }
        out
    }

    /// Template values in `[-1, 1]`, row-major `side × side`.
    pub fn template(&self, class: usize) -> Vec<f64> {
        let (fx, fy) = self.frequencies()[class];
        let s = self.image_side as f64;
        let c = (s - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.image_side * self.image_side);
        for y in 0..self.image_side {
            for x in 0..self.image_side {
                let u = (2.0 * PI * fx as f64 * (x as f64 - c) / s).cos();
                let v = (2.0 * PI * fy as f64 * (y as f64 - c) / s).cos();
                out.push(u * v);
            }
        }
        out
    }

    pub fn generate(&self) -> Result<LabeledDataset> {
        if self.class_count < 2 {
            return Err(Error::Validation("synthetic data needs at least 2 classes".into()));
        }
        if self.image_side < 2 {
            return Err(Error::Validation("image_side must be >= 2".into()));
        }
        if self.class_count > self.frequencies().len() {
            return Err(Error::Validation(format!(
                "{}x{} images support at most {} synthetic classes",
                self.image_side,
                self.image_side,
                self.frequencies().len()
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Validation("noise_std must be non-negative".into()));
        }
        let templates: Vec<Vec<f64>> = (0..self.class_count).map(|c| self.template(c)).collect();
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::Validation(e.to_string()))?;
        let n = self.class_count * self.per_class;
        let plane = self.image_side * self.image_side;
        let mut pixels = Vec::with_capacity(n * plane);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // interleave classes so any prefix is balanced
            let class = i % self.class_count;
            let mut rng = seed::stream(self.seed, &[tag::SYNTH, i as u64]);
            let contrast: f64 = rng.random_range(0.5..1.0);
            for &t in &templates[class] {
                let v = 0.5 + self.amplitude * contrast * t + noise.sample(&mut rng);
                pixels.push(v.clamp(0.0, 1.0) as f32);
            }
            labels.push(class);
        }
        let images = Tensor::new([n, 1, self.image_side, self.image_side], pixels)?;
        LabeledDataset::new(images, labels, self.class_count, Split::Train)
    }
}

/// Generates `class_count × per_class` single-channel images of side
/// `image_side` with the default noise settings.
pub fn synth_blobs(class_count: usize, per_class: usize, image_side: usize, seed: u64) -> Result<LabeledDataset> {
    SynthSpec::new(class_count, per_class, image_side, seed).generate()
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// One network, cross-entropy on the whole batch.
    Standard,
    /// One network trained on its own small-loss selection.
    StandardPlus,
    /// Two networks; each trains on the peer's small-loss selection.
    CoTeaching,
    /// Two networks on weak/strong views, classification plus matching loss,
    /// one joint update on the small-loss selection of the total loss.
    CoMatching,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::StandardPlus => "standard_plus",
            Self::CoTeaching => "co_teaching",
            Self::CoMatching => "co_matching",
        }
    }

    pub fn network_count(self) -> usize {
        match self {
            Self::Standard | Self::StandardPlus => 1,
            Self::CoTeaching | Self::CoMatching => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelMode {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Weight of the matching loss.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Final fraction of each batch left out of the update.
    pub tau: f64,
    /// Epochs over which the keep ratio ramps from 1 to `1 - tau`.
    #[serde(default = "default_t_k")]
    pub t_k: usize,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// First (0-based) epoch of the linear decay to zero.
    pub lr_decay_start: usize,
    #[serde(default = "default_mode")]
    pub pseudo_label_mode: PseudoLabelMode,
    #[serde(default)]
    pub seed: u64,
}

pub const DEFAULT_LAMBDA: f64 = 0.65;
pub const DEFAULT_T_K: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LR: f64 = 0.001;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_t_k() -> usize {
    DEFAULT_T_K
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_mode() -> PseudoLabelMode {
    PseudoLabelMode::Hard
}

impl TrainConfig {
    /// The CIFAR recipe: 200 epochs, decay from epoch 80, batch 128,
    /// lr 0.001, `T_k = 10`.
    pub fn recipe(algorithm: Algorithm, tau: f64) -> Self {
        Self {
            algorithm,
            lambda: DEFAULT_LAMBDA,
            tau,
            t_k: DEFAULT_T_K,
            epochs: 200,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            lr_decay_start: 80,
            pseudo_label_mode: PseudoLabelMode::Hard,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return fail(format!("tau {} outside [0, 1)", self.tau));
        }
        if self.t_k < 1 {
            return fail("t_k must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2".into());
        }
        if self.lr_decay_start > self.epochs {
            return fail(format!(
                "lr_decay_start {} beyond epochs {}",
                self.lr_decay_start, self.epochs
            ));
        }
        Ok(())
    }
}

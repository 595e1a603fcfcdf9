//! Training algorithms for learning from noisy labels: Standard,
//! Standard+ (own small-loss selection), Co-teaching (peer small-loss
//! cross-update) and Co-matching (weak/strong views, classification plus
//! label-free matching loss, joint small-loss update). Co-matching with
//! `lambda = 0` is the ablation without the matching loss.

mod adam;
mod config;
mod losses;
mod schedule;
mod select;
mod step;
mod trainer;

pub use adam::Adam;
pub use config::{Algorithm, PseudoLabelMode, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LAMBDA, DEFAULT_LR, DEFAULT_T_K};
pub use losses::{
    anchor_targets, classification_loss, cross_entropy, hard_pseudo_label, matching_loss, one_hot, total_loss,
};
pub use schedule::{lr_schedule, rate_schedule};
pub use select::{keep_count, select_small_loss};
pub use step::{
    co_teaching_step, comatch_step, label_precision, standard_plus_step, standard_step, train_step, StepInput,
    StepRecord, TrainState,
};
pub use trainer::{EpochRecord, Trainer, ViewPolicies};

#[cfg(test)]
mod tests;

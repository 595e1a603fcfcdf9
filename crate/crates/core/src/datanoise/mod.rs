//! Datasets, label-noise injection and noise auditing.

pub mod cifar;
mod dataset;
mod noise;
mod synth;

pub use cifar::load_cifar10;
pub use dataset::{AuditFlags, GroundTruth, LabeledDataset, Split, TrainingBatch, FLAT_MAGIC, FLAT_VERSION};
pub use noise::{
    build_transition_matrix, cifar10, cifar100, corrupt_labels, noise_audit, NoiseAudit, NoiseModel,
    TransitionMatrix,
};
pub use synth::{synth_blobs, SynthSpec};

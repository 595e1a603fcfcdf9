use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::cotrain::{TrainConfig, ViewPolicies};
use crate::datanoise::{
    build_transition_matrix, load_cifar10, LabeledDataset, NoiseModel, Split, SynthSpec, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::models::{build_cnn7, build_mlp, Network};

/// Environment variable naming the directory that relative output
/// directories are resolved against.
pub const OUT_ROOT_ENV: &str = "COMATCH_OUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synth {
        class_count: usize,
        per_class: usize,
        test_per_class: usize,
        image_side: usize,
        seed: u64,
        test_seed: u64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    Cifar10 {
        path: PathBuf,
    },
}

fn default_noise_std() -> f64 {
    SynthSpec::DEFAULT_NOISE_STD
}

fn default_amplitude() -> f64 {
    SynthSpec::DEFAULT_AMPLITUDE
}

impl DatasetSpec {
    /// Loads `(train, test)`; the train split is still uncorrupted.
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::Synth {
                class_count,
                per_class,
                test_per_class,
                image_side,
                seed,
                test_seed,
                noise_std,
                amplitude,
            } => {
                let spec = SynthSpec {
                    class_count: *class_count,
                    per_class: *per_class,
                    image_side: *image_side,
                    seed: *seed,
                    noise_std: *noise_std,
                    amplitude: *amplitude,
                };
                let test = SynthSpec {
                    per_class: *test_per_class,
                    seed: *test_seed,
                    ..spec.clone()
                };
                Ok((spec.generate()?, test.generate()?.with_split(Split::Test)?))
            }
            DatasetSpec::Cifar10 { path } => load_cifar10(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Explicit asymmetric `(source, target)` pairs; the dataset default
    /// map is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl NoiseSpec {
    pub fn matrix(&self, class_count: usize) -> Result<TransitionMatrix> {
        build_transition_matrix(self.model, self.epsilon, class_count, self.pairs.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Mlp {
        hidden_dims: Vec<usize>,
        /// Network `k` of a run is initialized from `init_seed + k`;
        /// defaults to the training seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_seed: Option<u64>,
    },
    Cnn7 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_seed: Option<u64>,
    },
}

impl ModelSpec {
    pub fn init_seed(&self) -> Option<u64> {
        match self {
            ModelSpec::Mlp { init_seed, .. } | ModelSpec::Cnn7 { init_seed } => *init_seed,
        }
    }

    pub fn set_init_seed(&mut self, seed: Option<u64>) {
        match self {
            ModelSpec::Mlp { init_seed, .. } | ModelSpec::Cnn7 { init_seed } => *init_seed = seed,
        }
    }

    /// Builds the `count` networks of one run for images of `image_shape`.
    pub fn build(&self, image_shape: [usize; 3], class_count: usize, train_seed: u64, count: usize) -> Result<Vec<Network>> {
        let base = self.init_seed().unwrap_or(train_seed);
        (0..count as u64)
            .map(|k| {
                let seed = base.wrapping_add(k);
                match self {
                    ModelSpec::Mlp { hidden_dims, .. } => {
                        build_mlp(image_shape.iter().product(), hidden_dims, class_count, seed)
                    }
                    ModelSpec::Cnn7 { .. } => {
                        if image_shape != [3, 32, 32] {
                            return Err(Error::Config(format!("cnn7 needs 3x32x32 images, got {image_shape:?}")));
                        }
                        build_cnn7(class_count, seed)
                    }
                }
            })
            .collect()
    }
}

/// Everything one run needs. Serialized back out as the run's
/// `config.snapshot`, which reproduces the run on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    /// Parent of the run directory; relative paths are resolved against
    /// `$COMATCH_OUT_ROOT` (or the working directory).
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Evaluate every `eval_every` epochs and always after the last one.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Fill the `wall_ms` column; off by default so logs are reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
    /// When set, `train.tau` is replaced by `tau_multiplier * noise.epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_multiplier: Option<f64>,
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub views: ViewPolicies,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_eval_every() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with `tau_multiplier` folded into `train.tau`.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(m) = self.tau_multiplier {
            out.train.tau = m * self.noise.epsilon;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        let id_ok = !self.run_id.is_empty()
            && self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !id_ok || self.run_id.starts_with('.') {
            return fail(format!("run_id {:?} must be non-empty [A-Za-z0-9._-]", self.run_id));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be >= 1".into());
        }
        if let Some(m) = self.tau_multiplier {
            if !(m > 0.0 && m <= 1.0) {
                return fail(format!("tau_multiplier {m} outside (0, 1]"));
            }
        }
        if let DatasetSpec::Synth {
            class_count,
            per_class,
            test_per_class,
            image_side,
            noise_std,
            amplitude,
            ..
        } = &self.dataset
        {
            if *class_count < 2 || *per_class == 0 || *test_per_class == 0 || *image_side == 0 {
                return fail("synth dataset needs class_count >= 2 and non-zero sizes".into());
            }
            if !(*noise_std >= 0.0 && *amplitude >= 0.0) {
                return fail("synth noise_std and amplitude must be >= 0".into());
            }
        }
        if let ModelSpec::Mlp { hidden_dims, .. } = &self.model {
            if hidden_dims.is_empty() || hidden_dims.contains(&0) {
                return fail("hidden_dims must be non-empty and positive".into());
            }
        }
        self.resolved().train.validate()?;
        self.views.weak.validate()?;
        self.views.strong.validate()?;
        self.noise.matrix(self.class_count())?;
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Synth { class_count, .. } => *class_count,
            DatasetSpec::Cifar10 { .. } => crate::datanoise::cifar::CLASSES,
        }
    }

    /// Directory the run writes into.
    pub fn run_dir(&self) -> PathBuf {
        out_root().join(&self.out_dir).join(&self.run_id)
    }

    /// A small symmetric-noise run on synthetic blobs with an MLP.
    pub fn synth_example(run_id: &str, algorithm: crate::cotrain::Algorithm) -> Self {
        let epsilon = 0.5;
        Self {
            run_id: run_id.into(),
            out_dir: default_out_dir(),
            eval_every: 1,
            record_wall_time: false,
            save_checkpoints: true,
            tau_multiplier: Some(1.0),
            dataset: DatasetSpec::Synth {
                class_count: 4,
                per_class: 1000,
                test_per_class: 250,
                image_side: 8,
                seed: 100,
                test_seed: 900,
                noise_std: SynthSpec::DEFAULT_NOISE_STD,
                amplitude: SynthSpec::DEFAULT_AMPLITUDE,
            },
            noise: NoiseSpec {
                model: NoiseModel::Symmetric,
                epsilon,
                seed: 0,
                pairs: None,
            },
            model: ModelSpec::Mlp {
                hidden_dims: vec![512],
                init_seed: None,
            },
            train: TrainConfig {
                epochs: 60,
                lr: 0.002,
                lr_decay_start: 24,
                lambda: 0.35,
                ..TrainConfig::recipe(algorithm, epsilon)
            },
            views: ViewPolicies {
                weak: AugmentationPolicy::weak(0),
                strong: AugmentationPolicy::strong(0, synth_strong_set(), 2),
            },
        }
    }
}

/// Strong transforms that stay label-preserving on small single-channel
/// synthetic textures.
pub fn synth_strong_set() -> Vec<crate::augment::TransformKind> {
    use crate::augment::TransformKind::*;
    vec![Rotate, ShearX, ShearY, Sharpness, GaussianBlur, Posterize, Solarize, Identity]
}

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

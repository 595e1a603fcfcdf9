use rand::Rng;

use crate::error::Result;
use crate::models::{build_cnn7, build_mlp, grad_check_network, Network};
use crate::ndgrad::{GradCheckConfig, GradCheckReport, Tensor};
use crate::seed::{self, tag};

pub const CHECK_BATCH: usize = 4;
pub const CHECK_MLP_INPUT: usize = 64;
pub const CHECK_MLP_HIDDEN: [usize; 2] = [32, 16];
pub const CHECK_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckModel {
    Mlp,
    Cnn7,
}

impl CheckModel {
    /// Coordinates sampled per parameter tensor when the caller does not
    /// choose; the CNN is kept small enough to finish in well under a
    /// minute.
    pub fn default_samples(self) -> usize {
        match self {
            CheckModel::Mlp => 200,
            CheckModel::Cnn7 => 2,
        }
    }

    pub fn build(self, seed: u64) -> Result<Network> {
        match self {
            CheckModel::Mlp => build_mlp(CHECK_MLP_INPUT, &CHECK_MLP_HIDDEN, CHECK_CLASSES, seed),
            CheckModel::Cnn7 => build_cnn7(CHECK_CLASSES, seed),
        }
    }
}

impl std::str::FromStr for CheckModel {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "cnn7" => Ok(Self::Cnn7),
            _ => Err(crate::Error::Validation(format!("unknown model {s:?} (mlp, cnn7)"))),
        }
    }
}

/// Finite-difference check of a freshly initialized network on a random
/// batch of four images.
pub fn check_gradients(model: CheckModel, max_per_layer: usize, seed: u64) -> Result<GradCheckReport> {
    let net = model.build(seed)?;
    let mut shape = vec![CHECK_BATCH];
    shape.extend(net.input_shape());
    let n: usize = shape.iter().product();
    let mut rng = seed::stream(seed, &[tag::GRAD_CHECK]);
    let x = Tensor::new(shape, (0..n).map(|_| rng.random::<f32>()).collect())?;
    let labels: Vec<usize> = (0..CHECK_BATCH).map(|i| (3 * i + 1) % CHECK_CLASSES).collect();
    let config = GradCheckConfig {
        max_per_layer,
        tolerance: 1e-4,
        seed,
        ..GradCheckConfig::default()
    };
    grad_check_network(&net, &x, &labels, &config)
}

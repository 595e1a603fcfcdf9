use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, TrainConfig};
use super::schedule::{lr_schedule, rate_schedule};
use super::step::{label_precision, train_step, StepInput, StepRecord, TrainState};
use crate::augment::{augment_batch, AugmentationPolicy, View};
use crate::datanoise::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{accuracy, Mode, Network};
use crate::seed::{self, tag};

/// Augmentation of the two network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewPolicies {
    /// Input of `M_f` and of all baseline networks.
    pub weak: AugmentationPolicy,
    /// Input of `M_g` under Co-matching.
    pub strong: AugmentationPolicy,
}

/// Aggregates of one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Keep ratio used throughout the epoch.
    pub rate: f64,
    pub lr: f64,
    pub steps: usize,
    pub mean_total_loss: f64,
    pub mean_selected_loss: f64,
    pub label_precision: Option<f64>,
}

/// Test accuracy used when evaluating in chunks.
const EVAL_CHUNK: usize = 500;

pub struct Trainer {
    config: TrainConfig,
    views: ViewPolicies,
    state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, views: ViewPolicies, networks: Vec<Network>) -> Result<Self> {
        config.validate()?;
        views.weak.validate()?;
        views.strong.validate()?;
        let want = config.algorithm.network_count();
        if networks.len() != want {
            return Err(Error::Config(format!(
                "{} needs {want} network(s), got {}",
                config.algorithm.name(),
                networks.len()
            )));
        }
        let mut networks = networks;
        networks.iter_mut().for_each(|n| n.set_mode(Mode::Train));
        Ok(Self {
            config,
            views,
            state: TrainState::new(networks),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn networks(&self) -> &[Network] {
        &self.state.networks
    }

    /// Shuffled sample order of 1-based epoch `t`.
    pub fn epoch_order(&self, n: usize, t: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::stream(self.config.seed, &[tag::SHUFFLE, t as u64]));
        order
    }

    /// Runs the next epoch over `train`, then advances `R(t)`.
    pub fn run_epoch(&mut self, train: &LabeledDataset) -> Result<EpochRecord> {
        let t = self.state.epoch + 1;
        if t > self.config.epochs {
            return Err(Error::State(format!("all {} epochs already ran", self.config.epochs)));
        }
        if train.len() < 2 {
            return Err(Error::Validation("training set needs at least 2 samples".into()));
        }
        let lr = lr_schedule(t - 1, &self.config);
        let rate = self.state.rate;
        let order = self.epoch_order(train.len(), t);
        let mut records: Vec<StepRecord> = Vec::new();
        // a trailing batch of one cannot be batch-normalized
        for (step, idx) in order.chunks(self.config.batch_size).filter(|c| c.len() >= 2).enumerate() {
            let batch = train.training_batch(idx);
            let seed = self.config.seed;
            let weak = augment_batch(&batch.images, idx, &self.views.weak, seed, View::Weak, t, step)?;
            let strong = match self.config.algorithm {
                Algorithm::CoMatching => Some(augment_batch(
                    &batch.images,
                    idx,
                    &self.views.strong,
                    seed,
                    View::Strong,
                    t,
                    step,
                )?),
                _ => None,
            };
            let input = StepInput {
                weak: &weak,
                strong: strong.as_ref().unwrap_or(&weak),
                noisy_labels: &batch.noisy_labels,
                audit: &batch.audit,
            };
            records.push(train_step(&mut self.state, input, &self.config, lr)?);
        }
        self.state.epoch = t;
        self.state.rate = rate_schedule(t, self.config.t_k, self.config.tau);
        let steps = records.len();
        Ok(EpochRecord {
            epoch: t,
            rate,
            lr,
            steps,
            mean_total_loss: records.iter().map(StepRecord::mean_loss).sum::<f64>() / steps as f64,
            mean_selected_loss: records.iter().map(|r| r.mean_selected_loss).sum::<f64>() / steps as f64,
            label_precision: label_precision(&records),
        })
    }

    /// Clean-label test accuracy of each network, in eval mode.
    pub fn evaluate(&mut self, test: &LabeledDataset) -> Result<Vec<f64>> {
        let labels = test.ground_truth().labels();
        let mut out = Vec::with_capacity(self.state.networks.len());
        for net in &mut self.state.networks {
            net.set_mode(Mode::Eval);
            let acc = accuracy(net, test.images(), labels, EVAL_CHUNK);
            net.set_mode(Mode::Train);
            out.push(acc?);
        }
        Ok(out)
    }
}

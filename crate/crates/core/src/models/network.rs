use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{softmax_rows, BatchNormMode, BatchStats, Graph, Scalar, Tensor, Var};
use crate::seed::{self, tag};

/// Running-statistics momentum: `running = 0.9·running + 0.1·batch`.
pub const BN_MOMENTUM: f32 = 0.9;

/// Feature length entering the CNN-7 head for 32×32 inputs.
pub const CNN7_FLAT: usize = 196 * 4 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Mlp { input_dim: usize, hidden_dims: Vec<usize> },
    Cnn7,
}

/// One stage of the forward pass; `usize` fields index [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Flatten,
    Affine { weight: usize, bias: usize },
    Conv3x3 { kernel: usize },
    BatchNorm { gamma: usize, beta: usize, running_mean: usize, running_var: usize },
    Relu,
    MaxPool2x2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
    /// Running statistics are state, not trainable parameters.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    class_count: usize,
    layers: Vec<Layer>,
    params: Vec<Param>,
    mode: Mode,
}

struct Builder {
    seed: u64,
    params: Vec<Param>,
    layers: Vec<Layer>,
}

impl Builder {
    fn push(&mut self, name: String, value: Tensor<f32>, trainable: bool) -> usize {
        self.params.push(Param { name, value, trainable });
        self.params.len() - 1
    }

    fn he_normal(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let index = self.params.len() as u64;
        let mut rng = seed::stream(self.seed, &[tag::INIT, index]);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
        let t = Tensor::new(shape, data).expect("shape matches data");
        self.push(name, t, true)
    }

    fn affine(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        let weight = self.he_normal(format!("{prefix}.weight"), vec![d_in, d_out], d_in);
        let bias = self.push(format!("{prefix}.bias"), Tensor::zeros([d_out]), true);
        self.layers.push(Layer::Affine { weight, bias });
    }

    fn conv_bn_relu(&mut self, i: usize, c_in: usize, c_out: usize) {
        let kernel = self.he_normal(format!("conv{i}.weight"), vec![c_out, c_in, 3, 3], c_in * 9);
        self.layers.push(Layer::Conv3x3 { kernel });
        let gamma = self.push(format!("bn{i}.gamma"), Tensor::full([c_out], 1.0), true);
        let beta = self.push(format!("bn{i}.beta"), Tensor::zeros([c_out]), true);
        let running_mean = self.push(format!("bn{i}.running_mean"), Tensor::zeros([c_out]), false);
        let running_var = self.push(format!("bn{i}.running_var"), Tensor::full([c_out], 1.0), false);
        self.layers.push(Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        });
        self.layers.push(Layer::Relu);
    }
}

/// Affine/ReLU stack ending in an affine layer to `class_count` logits.
/// Weights are He-normal from `init_seed`; biases start at zero.
pub fn build_mlp(input_dim: usize, hidden_dims: &[usize], class_count: usize, init_seed: u64) -> Result<Network> {
    if hidden_dims.is_empty() {
        return Err(Error::Config("hidden_dims must not be empty".into()));
    }
    if input_dim == 0 || class_count < 2 || hidden_dims.contains(&0) {
        return Err(Error::Config("layer widths must be positive and class_count >= 2".into()));
    }
    let mut b = Builder {
        seed: init_seed,
        params: Vec::new(),
        layers: vec![Layer::Flatten],
    };
    let mut d = input_dim;
    for (i, &h) in hidden_dims.iter().enumerate() {
        b.affine(&format!("fc{i}"), d, h);
        b.layers.push(Layer::Relu);
        d = h;
    }
    b.affine("head", d, class_count);
    Ok(Network {
        arch: Architecture::Mlp {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
        },
        class_count,
        layers: b.layers,
        params: b.params,
        mode: Mode::Train,
    })
}

/// The 7-layer CIFAR CNN: three pairs of 3×3 conv/BN/ReLU blocks
/// (64, 128, 196 channels), each pair followed by 2×2 max-pooling, then one
/// dense layer from the 3136 flattened features to the logits.
pub fn build_cnn7(class_count: usize, init_seed: u64) -> Result<Network> {
    if class_count < 2 {
        return Err(Error::Config("class_count must be >= 2".into()));
    }
    let mut b = Builder {
        seed: init_seed,
        params: Vec::new(),
        layers: Vec::new(),
    };
    let widths = [64, 64, 128, 128, 196, 196];
    let mut c_in = 3;
    for (i, &c_out) in widths.iter().enumerate() {
        b.conv_bn_relu(i, c_in, c_out);
        if i % 2 == 1 {
            b.layers.push(Layer::MaxPool2x2);
        }
        c_in = c_out;
    }
    b.layers.push(Layer::Flatten);
    b.affine("head", CNN7_FLAT, class_count);
    Ok(Network {
        arch: Architecture::Cnn7,
        class_count,
        layers: b.layers,
        params: b.params,
        mode: Mode::Train,
    })
}

impl Network {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Expected per-sample input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match &self.arch {
            Architecture::Mlp { input_dim, .. } => vec![*input_dim],
            Architecture::Cnn7 => vec![3, 32, 32],
        }
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect()
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.params.iter_mut().filter(|p| p.trainable).map(|p| &mut p.value)
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.params.iter().filter(|p| p.trainable).map(|p| &p.value)
    }

    /// Adds trainable parameters to `graph` as gradient-tracking leaves, in
    /// [`Network::trainable_names`] order.
    pub fn bind<T: Scalar>(&self, graph: &mut Graph<T>) -> Vec<Var> {
        self.trainable().map(|t| graph.param(t.cast())).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.input_shape();
        let per_sample: usize = shape.iter().skip(1).product();
        let ok = match &self.arch {
            Architecture::Mlp { input_dim, .. } => shape.len() >= 2 && per_sample == *input_dim,
            Architecture::Cnn7 => shape.len() == 4 && shape[1..] == want[..],
        };
        if ok {
            Ok(())
        } else {
            Err(Error::dim(
                "network input",
                format!("expected [N, {want:?}]-compatible batch, got {shape:?}"),
            ))
        }
    }

    /// Builds the forward pass on `graph`. `bound` comes from
    /// [`Network::bind`]. In train mode the per-BN-layer batch statistics are
    /// returned for [`Network::commit_batch_stats`]; in eval mode running
    /// statistics are read and nothing is returned.
    pub fn forward<T: Scalar>(&self, graph: &mut Graph<T>, bound: &[Var], x: Var) -> Result<(Var, Vec<BatchStats<T>>)> {
        self.check_input(graph.value(x).shape())?;
        let slot = self.trainable_slots();
        if bound.len() != self.trainable().count() {
            return Err(Error::dim(
                "network bind",
                format!("{} bound parameters for {} trainable tensors", bound.len(), self.trainable().count()),
            ));
        }
        let var = |i: usize| bound[slot[i].expect("trainable parameter")];
        let mut h = x;
        let mut stats = Vec::new();
        for layer in &self.layers {
            h = match *layer {
                Layer::Flatten => graph.flatten(h)?,
                Layer::Affine { weight, bias } => graph.affine(h, var(weight), var(bias))?,
                Layer::Conv3x3 { kernel } => {
                    let c_out = self.params[kernel].value.shape()[0];
                    let zero = graph.constant(Tensor::zeros([c_out]));
                    graph.conv2d(h, var(kernel), zero)?
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => match self.mode {
                    Mode::Train => {
                        let (out, s) = graph.batchnorm2d(h, var(gamma), var(beta), BatchNormMode::Train)?;
                        stats.extend(s);
                        out
                    }
                    Mode::Eval => {
                        let rm: Vec<T> = self.params[running_mean].value.cast::<T>().into_data();
                        let rv: Vec<T> = self.params[running_var].value.cast::<T>().into_data();
                        let mode = BatchNormMode::Eval {
                            running_mean: &rm,
                            running_var: &rv,
                        };
                        graph.batchnorm2d(h, var(gamma), var(beta), mode)?.0
                    }
                },
                Layer::Relu => graph.relu(h)?,
                Layer::MaxPool2x2 => graph.maxpool2d(h)?,
            };
        }
        Ok((h, stats))
    }

    fn trainable_slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.params
            .iter()
            .map(|p| {
                p.trainable.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn commit_batch_stats(&mut self, stats: &[BatchStats<f32>]) -> Result<()> {
        let targets: Vec<(usize, usize)> = self
            .layers
            .iter()
            .filter_map(|l| match *l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => Some((running_mean, running_var)),
                _ => None,
            })
            .collect();
        if targets.len() != stats.len() {
            return Err(Error::State(format!(
                "{} batch-norm layers but {} statistics records",
                targets.len(),
                stats.len()
            )));
        }
        for ((rm, rv), s) in targets.into_iter().zip(stats) {
            for (r, &b) in self.params[rm].value.data_mut().iter_mut().zip(&s.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, &b) in self.params[rv].value.data_mut().iter_mut().zip(&s.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
        Ok(())
    }

    /// Logits for a batch with no gradient tracking.
    pub fn logits(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let bound: Vec<Var> = self.trainable().map(|t| g.constant(t.clone())).collect();
        let x = g.constant(batch.clone());
        let (out, _) = self.forward(&mut g, &bound, x)?;
        Ok(g.value(out).clone())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

/// Softmax class probabilities `[N, C]`; rows sum to 1.
pub fn predict(network: &Network, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
    let logits = network.logits(batch)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let (probs, _) = softmax_rows(logits.data(), n, c);
    Tensor::new([n, c], probs)
}

/// Fraction of `images` whose argmax prediction equals `labels`,
/// evaluated in chunks of `chunk` samples.
pub fn accuracy(network: &Network, images: &Tensor<f32>, labels: &[usize], chunk: usize) -> Result<f64> {
    let n = images.shape()[0];
    if n != labels.len() {
        return Err(Error::dim("accuracy", format!("{n} images but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let mut correct = 0;
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk.max(1)).min(n)).collect();
        let logits = network.logits(&images.select_rows(&idx))?;
        let c = logits.shape()[1];
        for (row, &i) in idx.iter().enumerate() {
            let r = &logits.data()[row * c..(row + 1) * c];
            if argmax(r) == labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

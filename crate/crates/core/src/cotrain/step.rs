use super::adam::Adam;
use super::config::{Algorithm, PseudoLabelMode, TrainConfig};
use super::losses::{anchor_targets, one_hot};
use super::select::select_small_loss;
use crate::datanoise::AuditFlags;
use crate::error::{Error, Result};
use crate::models::{Mode, Network};
use crate::ndgrad::{BatchStats, Graph, Tensor, Var};

/// Per-sample data of one minibatch as the networks see it.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    /// Weak view; input of `M_f` and of every baseline network.
    pub weak: &'a Tensor<f32>,
    /// Strong view; input of `M_g` under Co-matching.
    pub strong: &'a Tensor<f32>,
    pub noisy_labels: &'a [usize],
    pub audit: &'a AuditFlags,
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Per-sample objective of the step (the ranking loss for single-net
    /// and Co-matching steps; `CE_f + CE_g` for Co-teaching).
    pub losses: Vec<f64>,
    /// Batch-local indices of the update set, ascending. For Co-teaching,
    /// the set chosen by `M_f` (used to update `M_g`).
    pub selected: Vec<usize>,
    /// Co-teaching only: the set chosen by `M_g` (used to update `M_f`).
    pub peer_selected: Option<Vec<usize>>,
    /// Loss that was backpropagated (mean over the selection; for
    /// Co-teaching the average of the two cross-updated means).
    pub mean_selected_loss: f64,
    pub clean_selected: usize,
    pub total_selected: usize,
}

impl StepRecord {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Networks, optimizer and keep ratio of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed epochs `t`.
    pub epoch: usize,
    /// Current keep ratio `R(t)`.
    pub rate: f64,
    pub networks: Vec<Network>,
    pub adam: Adam,
}

impl TrainState {
    pub fn new(networks: Vec<Network>) -> Self {
        let sizes: Vec<usize> = networks.iter().flat_map(|n| n.trainable().map(|t| t.numel()).collect::<Vec<_>>()).collect();
        Self {
            epoch: 0,
            rate: 1.0,
            networks,
            adam: Adam::new(&sizes),
        }
    }
}

fn values(g: &Graph<f32>, v: Var) -> Vec<f64> {
    g.value(v).data().iter().map(|&x| x as f64).collect()
}

fn onehot_tensor(labels: &[usize], c: usize) -> Result<Tensor<f32>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Validation(format!("label {bad} outside [0, {c})")));
    }
    Tensor::from_f64_slice([labels.len(), c], &one_hot(labels, c))
}

pub(crate) struct Forward {
    pub(crate) bound: Vec<Var>,
    logits: Var,
    stats: Vec<BatchStats<f32>>,
}

fn forward(g: &mut Graph<f32>, net: &Network, x: &Tensor<f32>) -> Result<Forward> {
    if net.mode() != Mode::Train {
        return Err(Error::State("training step on a network in eval mode".into()));
    }
    let bound = net.bind(g);
    let xv = g.constant(x.clone());
    let (logits, stats) = net.forward(g, &bound, xv)?;
    Ok(Forward { bound, logits, stats })
}

/// Backpropagates `loss`, applies one joint Adam step to every network in
/// `state` and folds in the batch-norm statistics.
fn apply(state: &mut TrainState, mut g: Graph<f32>, loss: Var, passes: Vec<Forward>, lr: f64) -> Result<()> {
    if passes.len() != state.networks.len() {
        return Err(Error::State(format!(
            "{} forward passes for {} networks",
            passes.len(),
            state.networks.len()
        )));
    }
    g.backward(loss)?;
    let mut grads = Vec::new();
    for (pass, net) in passes.iter().zip(&state.networks) {
        for (&v, t) in pass.bound.iter().zip(net.trainable()) {
            grads.push(g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())));
        }
    }
    {
        let mut params: Vec<&mut Tensor<f32>> = state.networks.iter_mut().flat_map(|n| n.trainable_mut()).collect();
        state.adam.update(&mut params, &grads, lr)?;
    }
    for (pass, net) in passes.into_iter().zip(state.networks.iter_mut()) {
        net.commit_batch_stats(&pass.stats)?;
    }
    Ok(())
}

fn require_networks(state: &TrainState, n: usize, algorithm: &str) -> Result<()> {
    if state.networks.len() != n {
        return Err(Error::Config(format!(
            "{algorithm} needs {n} network(s), state holds {}",
            state.networks.len()
        )));
    }
    Ok(())
}

/// Standard: cross-entropy averaged over the whole batch.
pub fn standard_step(state: &mut TrainState, input: StepInput<'_>, lr: f64) -> Result<StepRecord> {
    single_network_step(state, input, 1.0, lr, "standard")
}

/// Standard+: cross-entropy averaged over the network's own small-loss
/// selection at ratio `state.rate`.
pub fn standard_plus_step(state: &mut TrainState, input: StepInput<'_>, lr: f64) -> Result<StepRecord> {
    let rate = state.rate;
    single_network_step(state, input, rate, lr, "standard_plus")
}

fn single_network_step(state: &mut TrainState, input: StepInput<'_>, rate: f64, lr: f64, name: &str) -> Result<StepRecord> {
    require_networks(state, 1, name)?;
    let c = state.networks[0].class_count();
    let target = onehot_tensor(input.noisy_labels, c)?;
    let mut g = Graph::new();
    let pass = forward(&mut g, &state.networks[0], input.weak)?;
    let (ce, _) = g.softmax_cross_entropy(pass.logits, &target)?;
    let losses = values(&g, ce);
    let selected = select_small_loss(&losses, rate)?;
    let loss = g.mean_of(ce, &selected)?;
    let mean_selected_loss = g.value(loss).data()[0] as f64;
    apply(state, g, loss, vec![pass], lr)?;
    Ok(StepRecord {
        clean_selected: input.audit.clean_count(&selected),
        total_selected: selected.len(),
        losses,
        selected,
        peer_selected: None,
        mean_selected_loss,
    })
}

/// Co-teaching: both networks see the weak view, each ranks its own
/// cross-entropy, and each is updated on the peer's small-loss set.
pub fn co_teaching_step(state: &mut TrainState, input: StepInput<'_>, lr: f64) -> Result<StepRecord> {
    require_networks(state, 2, "co_teaching")?;
    let c = state.networks[0].class_count();
    let target = onehot_tensor(input.noisy_labels, c)?;
    let mut g = Graph::new();
    let pf = forward(&mut g, &state.networks[0], input.weak)?;
    let pg = forward(&mut g, &state.networks[1], input.weak)?;
    let (ce_f, _) = g.softmax_cross_entropy(pf.logits, &target)?;
    let (ce_g, _) = g.softmax_cross_entropy(pg.logits, &target)?;
    let (lf, lg) = (values(&g, ce_f), values(&g, ce_g));
    let sel_f = select_small_loss(&lf, state.rate)?;
    let sel_g = select_small_loss(&lg, state.rate)?;
    let loss_f = g.mean_of(ce_f, &sel_g)?;
    let loss_g = g.mean_of(ce_g, &sel_f)?;
    let loss = g.add(loss_f, loss_g)?;
    let mean_selected_loss = g.value(loss).data()[0] as f64 / 2.0;
    apply(state, g, loss, vec![pf, pg], lr)?;
    Ok(StepRecord {
        losses: lf.iter().zip(&lg).map(|(a, b)| a + b).collect(),
        clean_selected: input.audit.clean_count(&sel_f) + input.audit.clean_count(&sel_g),
        total_selected: sel_f.len() + sel_g.len(),
        selected: sel_f,
        peer_selected: Some(sel_g),
        mean_selected_loss,
    })
}

/// Co-matching graph: per-sample `(1-λ)(CE_f + CE_g) + λ·CE(p_g, anchor(p_f))`
/// with `M_f` on the weak view, `M_g` on the strong view and a constant
/// anchor.
pub(crate) fn comatch_graph(
    state: &TrainState,
    input: StepInput<'_>,
    lambda: f64,
    mode: PseudoLabelMode,
) -> Result<(Graph<f32>, Vec<Forward>, Var)> {
    require_networks(state, 2, "co_matching")?;
    let c = state.networks[0].class_count();
    let target = onehot_tensor(input.noisy_labels, c)?;
    let mut g = Graph::new();
    let pf = forward(&mut g, &state.networks[0], input.weak)?;
    let pg = forward(&mut g, &state.networks[1], input.strong)?;
    let (ce_f, probs_f) = g.softmax_cross_entropy(pf.logits, &target)?;
    let (ce_g, _) = g.softmax_cross_entropy(pg.logits, &target)?;
    let pf64: Vec<f64> = probs_f.data().iter().map(|&p| p as f64).collect();
    let anchor = Tensor::from_f64_slice([input.noisy_labels.len(), c], &anchor_targets(&pf64, c, mode))?;
    let (l_a, _) = g.softmax_cross_entropy(pg.logits, &anchor)?;
    let l_c = g.add(ce_f, ce_g)?;
    let l_c = g.scale(l_c, 1.0 - lambda)?;
    let l_a = g.scale(l_a, lambda)?;
    let total = g.add(l_c, l_a)?;
    Ok((g, vec![pf, pg], total))
}

/// Co-matching: one joint update of both networks on the small-loss
/// selection of the total loss (see [`comatch_graph`]).
pub fn comatch_step(
    state: &mut TrainState,
    input: StepInput<'_>,
    lambda: f64,
    mode: PseudoLabelMode,
    lr: f64,
) -> Result<StepRecord> {
    let (mut g, passes, total) = comatch_graph(state, input, lambda, mode)?;
    let losses = values(&g, total);
    let selected = select_small_loss(&losses, state.rate)?;
    let loss = g.mean_of(total, &selected)?;
    let mean_selected_loss = g.value(loss).data()[0] as f64;
    apply(state, g, loss, passes, lr)?;
    Ok(StepRecord {
        clean_selected: input.audit.clean_count(&selected),
        total_selected: selected.len(),
        losses,
        selected,
        peer_selected: None,
        mean_selected_loss,
    })
}

/// Dispatches on `config.algorithm`.
pub fn train_step(state: &mut TrainState, input: StepInput<'_>, config: &TrainConfig, lr: f64) -> Result<StepRecord> {
    match config.algorithm {
        Algorithm::Standard => standard_step(state, input, lr),
        Algorithm::StandardPlus => standard_plus_step(state, input, lr),
        Algorithm::CoTeaching => co_teaching_step(state, input, lr),
        Algorithm::CoMatching => comatch_step(state, input, config.lambda, config.pseudo_label_mode, lr),
    }
}

/// Clean selected over all selected across `records`; `None` when nothing
/// was selected.
pub fn label_precision(records: &[StepRecord]) -> Option<f64> {
    let total: usize = records.iter().map(|r| r.total_selected).sum();
    let clean: usize = records.iter().map(|r| r.clean_selected).sum();
    (total > 0).then(|| clean as f64 / total as f64)
}

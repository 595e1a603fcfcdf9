use proptest::prelude::*;

use super::step::comatch_graph;
use super::*;
use crate::augment::AugmentationPolicy;
use crate::datanoise::{build_transition_matrix, corrupt_labels, synth_blobs, AuditFlags, NoiseModel};
use crate::models::{build_mlp, Network};
use crate::ndgrad::{grad_check, GradCheckConfig, Graph, GraphObjective, Tensor};

fn cfg(algorithm: Algorithm) -> TrainConfig {
    TrainConfig {
        algorithm,
        lambda: 0.65,
        tau: 0.5,
        t_k: 10,
        epochs: 4,
        batch_size: 16,
        lr: 0.001,
        lr_decay_start: 2,
        pseudo_label_mode: PseudoLabelMode::Hard,
        seed: 3,
    }
}

fn mlp(seed: u64) -> Network {
    build_mlp(12, &[10], 3, seed).unwrap()
}

struct Batch {
    x: Tensor<f32>,
    x2: Tensor<f32>,
    labels: Vec<usize>,
    audit: AuditFlags,
}

impl Batch {
    fn new(n: usize, seed: u32) -> Self {
        let gen = |s: u32| {
            let data = (0..n * 12)
                .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(s) % 1000) as f32 / 999.0)
                .collect();
            Tensor::new([n, 12], data).unwrap()
        };
        Self {
            x: gen(seed),
            x2: gen(seed + 17),
            labels: (0..n).map(|i| (i * 7 + seed as usize) % 3).collect(),
            audit: AuditFlags::new((0..n).map(|i| i % 3 != 0).collect()),
        }
    }

    fn input(&self) -> StepInput<'_> {
        StepInput {
            weak: &self.x,
            strong: &self.x2,
            noisy_labels: &self.labels,
            audit: &self.audit,
        }
    }
}

#[test]
fn rate_schedule_examples() {
    assert_eq!(rate_schedule(0, 10, 0.5), 1.0);
    assert_eq!(rate_schedule(5, 10, 0.5), 0.75);
    assert_eq!(rate_schedule(200, 10, 0.2), 0.8);
    let mut prev = 1.0;
    for t in 0..50 {
        let r = rate_schedule(t, 7, 0.3);
        assert!(r <= prev);
        prev = r;
    }
}

#[test]
fn lr_schedule_examples() {
    let mut c = TrainConfig::recipe(Algorithm::CoMatching, 0.5);
    assert_eq!(lr_schedule(0, &c), 0.001);
    assert_eq!(lr_schedule(79, &c), 0.001);
    assert!((lr_schedule(140, &c) - 0.0005).abs() < 1e-15);
    assert!(lr_schedule(199, &c) <= 0.001 / 120.0 + 1e-15);
    c.lr_decay_start = 200;
    assert_eq!(lr_schedule(199, &c), 0.001);
}

#[test]
fn config_validation() {
    let ok = cfg(Algorithm::CoMatching);
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { lambda: 1.1, ..ok.clone() },
        TrainConfig { tau: 1.0, ..ok.clone() },
        TrainConfig { t_k: 0, ..ok.clone() },
        TrainConfig { lr: 0.0, ..ok.clone() },
        TrainConfig { lr_decay_start: 9, ..ok.clone() },
    ] {
        assert_eq!(bad.validate().unwrap_err().category(), "validation");
    }
}

#[test]
fn selection_examples() {
    assert_eq!(select_small_loss(&[0.1, 2.0, 0.5, 3.0], 0.5).unwrap(), vec![0, 2]);
    assert_eq!(select_small_loss(&[3.0, 1.0, 2.0], 1.0).unwrap(), vec![0, 1, 2]);
    assert_eq!(select_small_loss(&[1.0, 1.0, 2.0], 1.0 / 3.0).unwrap(), vec![0]);
    assert_eq!(select_small_loss(&[], 0.5).unwrap_err().category(), "validation");
    assert_eq!(select_small_loss(&[1.0, f64::NAN], 0.5).unwrap_err().category(), "numerical");
    assert_eq!(keep_count(10, 0.7), 7);
    assert_eq!(keep_count(128, 0.5), 64);
    assert_eq!(keep_count(10, 0.71), 8);
    assert_eq!(keep_count(3, 1.0 / 3.0), 1);
}

/// Exhaustive search: among subsets of size >= `k`, the smallest summed
/// loss, then the smallest size, then the lexicographically smallest index
/// list.
fn brute_force(losses: &[f64], k: usize) -> Vec<usize> {
    let n = losses.len();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() < k {
            continue;
        }
        let s: f64 = set.iter().map(|&i| losses[i]).sum();
        let cand = (s, set.len(), set);
        best = match best {
            None => Some(cand),
            Some(b) => {
                if (cand.0, cand.1, &cand.2) < (b.0, b.1, &b.2) {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.unwrap().2
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn selection_matches_exhaustive_search(
        // multiples of 1/8 keep every subset sum exact and force ties
        raw in proptest::collection::vec(0u8..12, 1..=12),
        which in 0usize..4,
    ) {
        let (num, den) = [(1, 4), (1, 3), (1, 2), (1, 1)][which];
        let losses: Vec<f64> = raw.iter().map(|&v| v as f64 / 8.0).collect();
        let k = (num * losses.len()).div_ceil(den);
        let got = select_small_loss(&losses, num as f64 / den as f64).unwrap();
        prop_assert_eq!(got, brute_force(&losses, k));
    }

    #[test]
    fn pseudo_label_tracks_argmax(raw in proptest::collection::vec(0.01f64..1.0, 2..10), scale in 0.1f64..10.0) {
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let hot = hard_pseudo_label(&p);
        prop_assert_eq!(crate::models::argmax(&hot), crate::models::argmax(&p));
        prop_assert_eq!(hot.iter().sum::<f64>(), 1.0);
        let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        let s2: f64 = scaled.iter().sum();
        let p2: Vec<f64> = scaled.iter().map(|v| v / s2).collect();
        prop_assert_eq!(hard_pseudo_label(&p2), hot);
    }
}

#[test]
fn pseudo_label_examples() {
    assert_eq!(hard_pseudo_label(&[0.2, 0.5, 0.3]), vec![0.0, 1.0, 0.0]);
    assert_eq!(hard_pseudo_label(&[1.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    let third = 1.0 / 3.0;
    assert_eq!(hard_pseudo_label(&[third, third, third]), vec![1.0, 0.0, 0.0]);
}

#[test]
fn classification_loss_examples() {
    let y = one_hot(&[2, 0], 3);
    assert_eq!(classification_loss(&y, &y, &y, 3).unwrap(), vec![0.0, 0.0]);
    let u = vec![0.1; 10];
    let l = classification_loss(&u, &u, &one_hot(&[4], 10), 10).unwrap();
    assert!((l[0] - 2.0 * 10f64.ln()).abs() < 1e-12);
    assert!((l[0] - 4.60517).abs() < 1e-5);
    let zero = [0.0, 1.0];
    let l = classification_loss(&zero, &zero, &one_hot(&[0], 2), 2).unwrap();
    assert!((l[0] - 2.0 * -(1e-12f64).ln()).abs() < 1e-9);
}

#[test]
fn classification_loss_matches_direct_evaluation() {
    let pf = [0.7, 0.2, 0.1, 0.05, 0.05, 0.9];
    let pg = [0.3, 0.3, 0.4, 0.25, 0.5, 0.25];
    let l = classification_loss(&pf, &pg, &one_hot(&[1, 2], 3), 3).unwrap();
    assert!((l[0] - (-(0.2f64.ln()) - 0.3f64.ln())).abs() < 1e-14);
    assert!((l[1] - (-(0.9f64.ln()) - 0.25f64.ln())).abs() < 1e-14);
}

#[test]
fn matching_loss_examples() {
    let anchor = [0.1, 0.8, 0.1];
    let exact = [0.0, 1.0, 0.0];
    assert_eq!(matching_loss(&anchor, &exact, 3, PseudoLabelMode::Hard).unwrap(), vec![0.0]);
    let mut pf = vec![0.05; 10];
    pf[3] = 0.55;
    let l = matching_loss(&pf, &[0.1; 10], 10, PseudoLabelMode::Hard).unwrap();
    assert!((l[0] - 10f64.ln()).abs() < 1e-12);
    let soft = matching_loss(&anchor, &anchor, 3, PseudoLabelMode::Soft).unwrap();
    let entropy = -(0.1f64 * 0.1f64.ln() * 2.0 + 0.8 * 0.8f64.ln());
    assert!((soft[0] - entropy).abs() < 1e-12);
}

#[test]
fn total_loss_examples() {
    let lc = [2.0, 0.3];
    let la = [1.0, 0.9];
    assert_eq!(total_loss(&lc, &la, 0.0), lc.to_vec());
    assert_eq!(total_loss(&lc, &la, 1.0), la.to_vec());
    assert!((total_loss(&[2.0], &[1.0], 0.95)[0] - 1.05).abs() < 1e-12);
}

#[test]
fn matching_gradient_is_probs_minus_anchor() {
    let logits = Tensor::<f64>::from_f64_slice([2, 3], &[0.3, -1.2, 0.8, 2.0, 0.1, -0.4]).unwrap();
    let anchor = Tensor::<f64>::from_f64_slice([2, 3], &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let lv = g.param(logits.clone());
    let (l, probs) = g.softmax_cross_entropy(lv, &anchor).unwrap();
    let s = g.sum(l).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(lv).unwrap();
    for i in 0..6 {
        assert!((grad.data()[i] - (probs.data()[i] - anchor.data()[i])).abs() < 1e-15);
    }
    let anchor2 = anchor.clone();
    let mut obj = GraphObjective::new(vec![("logits".into(), logits)], move |g, v| {
        let (l, _) = g.softmax_cross_entropy(v[0], &anchor2)?;
        g.sum(l)
    });
    assert!(grad_check(&mut obj, &GradCheckConfig::default()).unwrap().passed);
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut p = Tensor::<f32>::from_f64_slice([3], &[0.5, -1.0, 2.0]).unwrap();
    let before = p.clone();
    let mut adam = Adam::new(&[3]);
    for _ in 0..3 {
        adam.update(&mut [&mut p], &[Tensor::zeros([3])], 0.01).unwrap();
    }
    assert_eq!(p, before);
    assert_eq!(adam.step(), 3);
}

#[test]
fn adam_first_step_is_signed_lr() {
    for g in [3.0f64, -0.02, 1e-3] {
        let mut p = Tensor::<f32>::scalar(1.0);
        let mut adam = Adam::new(&[1]);
        adam.update(&mut [&mut p], &[Tensor::scalar(g as f32)], 0.001).unwrap();
        let expected = 1.0 - 0.001 * g / (g.abs() + 1e-8);
        assert!((p.data()[0] as f64 - expected).abs() < 1e-7, "{g}");
    }
}

#[test]
fn adam_matches_closed_form_recurrence() {
    let grads = [0.5f64, -0.25, 1.0, 0.125];
    let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.3f64);
    let mut p = Tensor::<f32>::scalar(0.3);
    let mut adam = Adam::new(&[1]);
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        adam.update(&mut [&mut p], &[Tensor::scalar(g as f32)], 0.01).unwrap();
        assert!((p.data()[0] as f64 - w).abs() < 1e-6);
    }
}

#[test]
fn adam_rejects_nan_gradients() {
    let mut p = Tensor::<f32>::scalar(1.0);
    let mut adam = Adam::new(&[1]);
    let err = adam.update(&mut [&mut p], &[Tensor::scalar(f32::NAN)], 0.1).unwrap_err();
    assert_eq!(err.category(), "numerical");
    assert_eq!(p.data()[0], 1.0);
    assert_eq!(adam.step(), 0);
}

#[test]
fn label_precision_examples() {
    let rec = |clean, total| StepRecord {
        losses: vec![0.0],
        selected: vec![],
        peer_selected: None,
        mean_selected_loss: 0.0,
        clean_selected: clean,
        total_selected: total,
    };
    assert_eq!(label_precision(&[rec(3, 3), rec(2, 2)]), Some(1.0));
    assert_eq!(label_precision(&[rec(1, 2)]), Some(0.5));
    assert_eq!(label_precision(&[rec(0, 0)]), None);
    assert_eq!(label_precision(&[]), None);
}

#[test]
fn uniform_selection_precision_is_one_minus_epsilon() {
    let ds = synth_blobs(4, 1000, 4, 0).unwrap();
    let q = build_transition_matrix(NoiseModel::Symmetric, 0.4, 4, None).unwrap();
    let noisy = corrupt_labels(&ds, &q, 1).unwrap();
    let idx: Vec<usize> = (0..noisy.len()).step_by(2).collect();
    let batch = noisy.training_batch(&idx);
    let all: Vec<usize> = (0..idx.len()).collect();
    let p = batch.audit.clean_count(&all) as f64 / all.len() as f64;
    // 3σ for n = 2000 at p = 0.6
    assert!((p - 0.6).abs() < 3.0 * (0.24f64 / 2000.0).sqrt(), "{p}");
}

#[test]
fn standard_plus_at_full_rate_equals_standard() {
    let mut a = TrainState::new(vec![mlp(1)]);
    let mut b = a.clone();
    for s in 0..4 {
        let batch = Batch::new(16, s);
        let ra = standard_step(&mut a, batch.input(), 0.01).unwrap();
        let rb = standard_plus_step(&mut b, batch.input(), 0.01).unwrap();
        assert_eq!(ra, rb);
    }
    assert_eq!(a.networks, b.networks);
}

#[test]
fn standard_plus_selects_ceil_rate_batch() {
    let mut st = TrainState::new(vec![mlp(1)]);
    for (rate, n, k) in [(0.75, 16, 12), (0.55, 15, 9), (0.5, 7, 4)] {
        st.rate = rate;
        let r = standard_plus_step(&mut st, Batch::new(n, 2).input(), 0.01).unwrap();
        assert_eq!(r.selected.len(), k);
        assert_eq!(r.total_selected, k);
    }
}

#[test]
fn co_teaching_identical_networks_stay_identical() {
    let mut st = TrainState::new(vec![mlp(4), mlp(4)]);
    st.rate = 0.6;
    for s in 0..3 {
        let r = co_teaching_step(&mut st, Batch::new(16, s).input(), 0.01).unwrap();
        assert_eq!(Some(&r.selected), r.peer_selected.as_ref());
        assert_eq!(st.networks[0], st.networks[1]);
    }
}

#[test]
fn co_teaching_at_full_rate_is_two_standard_runs() {
    let mut co = TrainState::new(vec![mlp(4), mlp(5)]);
    let mut f = TrainState::new(vec![mlp(4)]);
    let mut g = TrainState::new(vec![mlp(5)]);
    for s in 0..3 {
        let batch = Batch::new(16, s);
        co_teaching_step(&mut co, batch.input(), 0.01).unwrap();
        standard_step(&mut f, batch.input(), 0.01).unwrap();
        standard_step(&mut g, batch.input(), 0.01).unwrap();
    }
    assert_eq!(co.networks[0], f.networks[0]);
    assert_eq!(co.networks[1], g.networks[0]);
}

#[test]
fn co_teaching_selections_match_sort_oracle() {
    let st = TrainState::new(vec![mlp(4), mlp(5)]);
    let batch = Batch::new(16, 9);
    let mut run = st.clone();
    run.rate = 0.5;
    let rec = co_teaching_step(&mut run, batch.input(), 0.01).unwrap();
    let onehot = one_hot(&batch.labels, 3);
    for (net, sel) in [(&st.networks[0], &rec.selected), (&st.networks[1], rec.peer_selected.as_ref().unwrap())] {
        let p: Vec<f64> = crate::models::predict(net, &batch.x).unwrap().data().iter().map(|&v| v as f64).collect();
        let ce: Vec<f64> = (0..16).map(|i| cross_entropy(&p[i * 3..i * 3 + 3], &onehot[i * 3..i * 3 + 3])).collect();
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&a, &b| ce[a].partial_cmp(&ce[b]).unwrap().then(a.cmp(&b)));
        let mut want = order[..8].to_vec();
        want.sort_unstable();
        assert_eq!(sel, &want);
    }
}

#[test]
fn comatch_without_matching_on_shared_view_is_standard_plus() {
    let mut co = TrainState::new(vec![mlp(6), mlp(6)]);
    let mut sp = TrainState::new(vec![mlp(6)]);
    co.rate = 0.75;
    sp.rate = 0.75;
    for s in 0..3 {
        let b = Batch::new(16, s);
        let shared = StepInput { strong: &b.x, ..b.input() };
        let rc = comatch_step(&mut co, shared, 0.0, PseudoLabelMode::Hard, 0.01).unwrap();
        let rs = standard_plus_step(&mut sp, shared, 0.01).unwrap();
        assert_eq!(rc.selected, rs.selected);
    }
    assert_eq!(co.networks[0], sp.networks[0]);
}

#[test]
fn comatch_selection_matches_recomputation() {
    let st = TrainState::new(vec![mlp(2), mlp(3)]);
    let b = Batch::new(20, 4);
    let mut run = st.clone();
    run.rate = 0.6;
    let rec = comatch_step(&mut run, b.input(), 0.65, PseudoLabelMode::Hard, 0.01).unwrap();
    let to64 = |t: Tensor<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let pf = to64(crate::models::predict(&st.networks[0], &b.x).unwrap());
    let pg = to64(crate::models::predict(&st.networks[1], &b.x2).unwrap());
    let lc = classification_loss(&pf, &pg, &one_hot(&b.labels, 3), 3).unwrap();
    let la = matching_loss(&pf, &pg, 3, PseudoLabelMode::Hard).unwrap();
    let total = total_loss(&lc, &la, 0.65);
    for (a, b) in total.iter().zip(&rec.losses) {
        assert!((a - b).abs() < 1e-5);
    }
    let mut order: Vec<usize> = (0..20).collect();
    order.sort_by(|&i, &j| total[i].partial_cmp(&total[j]).unwrap().then(i.cmp(&j)));
    let mut want = order[..12].to_vec();
    want.sort_unstable();
    assert_eq!(rec.selected, want);
    let mean: f64 = want.iter().map(|&i| total[i]).sum::<f64>() / 12.0;
    assert!((rec.mean_selected_loss - mean).abs() < 1e-5);
}

#[test]
fn matching_term_ignores_labels() {
    let st = TrainState::new(vec![mlp(2), mlp(3)]);
    let b = Batch::new(12, 1);
    let mut permuted = b.labels.clone();
    permuted.iter_mut().for_each(|l| *l = (*l + 1) % 3);
    let with = |labels: &[usize], lambda: f64| {
        let input = StepInput {
            noisy_labels: labels,
            ..b.input()
        };
        let (g, _, total) = comatch_graph(&st, input, lambda, PseudoLabelMode::Hard).unwrap();
        g.value(total).data().to_vec()
    };
    assert_eq!(with(&b.labels, 1.0), with(&permuted, 1.0));
    assert_ne!(with(&b.labels, 0.0), with(&permuted, 0.0));
}

#[test]
fn anchor_passes_no_gradient_to_the_weak_network() {
    let st = TrainState::new(vec![mlp(2), mlp(3)]);
    let b = Batch::new(12, 2);
    let f_grads = |lambda: f64| {
        let (mut g, passes, total) = comatch_graph(&st, b.input(), lambda, PseudoLabelMode::Hard).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let loss = g.mean_of(total, &all).unwrap();
        g.backward(loss).unwrap();
        passes[0]
            .bound
            .iter()
            .flat_map(|&v| g.grad(v).unwrap().into_data())
            .map(|x| x as f64 / (1.0 - lambda))
            .collect::<Vec<_>>()
    };
    let (a, b) = (f_grads(0.2), f_grads(0.7));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn network_count_is_checked() {
    let views = ViewPolicies {
        weak: AugmentationPolicy::none(),
        strong: AugmentationPolicy::none(),
    };
    let err = Trainer::new(cfg(Algorithm::CoMatching), views.clone(), vec![mlp(0)]).err().unwrap();
    assert_eq!(err.category(), "config");
    assert!(Trainer::new(cfg(Algorithm::Standard), views, vec![mlp(0), mlp(1)]).is_err());
}

fn small_run(algorithm: Algorithm) -> (Vec<EpochRecord>, Vec<Vec<f64>>, Trainer) {
    let train = synth_blobs(3, 20, 4, 1).unwrap();
    let q = build_transition_matrix(NoiseModel::Symmetric, 0.3, 3, None).unwrap();
    let train = corrupt_labels(&train, &q, 2).unwrap();
    let test = synth_blobs(3, 10, 4, 9).unwrap();
    let views = ViewPolicies {
        weak: AugmentationPolicy::weak(1),
        strong: AugmentationPolicy::strong(1, crate::augment::TransformKind::DEFAULT_SET.to_vec(), 2),
    };
    let nets = (0..algorithm.network_count()).map(|i| build_mlp(16, &[8], 3, i as u64).unwrap()).collect();
    let mut tr = Trainer::new(cfg(algorithm), views, nets).unwrap();
    let mut recs = Vec::new();
    let mut accs = Vec::new();
    for _ in 0..4 {
        recs.push(tr.run_epoch(&train).unwrap());
        accs.push(tr.evaluate(&test).unwrap());
    }
    (recs, accs, tr)
}

#[test]
fn epoch_loop_follows_schedules() {
    let (recs, accs, mut tr) = small_run(Algorithm::CoMatching);
    let rates: Vec<f64> = recs.iter().map(|r| r.rate).collect();
    assert_eq!(rates, vec![1.0, rate_schedule(1, 10, 0.5), rate_schedule(2, 10, 0.5), rate_schedule(3, 10, 0.5)]);
    let lrs: Vec<f64> = recs.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![0.001, 0.001, 0.001, 0.0005]);
    assert!(recs.iter().all(|r| r.steps == 4));
    assert!(accs.iter().all(|a| a.len() == 2 && a.iter().all(|v| (0.0..=1.0).contains(v))));
    assert_eq!(tr.state().epoch, 4);
    let train = synth_blobs(3, 20, 4, 1).unwrap();
    assert_eq!(tr.run_epoch(&train).unwrap_err().category(), "state");
}

#[test]
fn epoch_loop_is_deterministic() {
    for alg in [Algorithm::Standard, Algorithm::CoTeaching, Algorithm::CoMatching] {
        let (r1, a1, t1) = small_run(alg);
        let (r2, a2, t2) = small_run(alg);
        assert_eq!(r1, r2);
        assert_eq!(a1, a2);
        assert_eq!(t1.networks(), t2.networks());
    }
}

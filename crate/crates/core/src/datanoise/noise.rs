use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Symmetric,
    Asymmetric,
}

/// Row-stochastic label-flip matrix: `q[i][j] = Pr[noisy = j | clean = i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    q: Vec<Vec<f64>>,
    model: NoiseModel,
    epsilon: f64,
}

pub mod cifar10 {
    pub const AIRPLANE: usize = 0;
    pub const AUTOMOBILE: usize = 1;
    pub const BIRD: usize = 2;
    pub const CAT: usize = 3;
    pub const DEER: usize = 4;
    pub const DOG: usize = 5;
    pub const HORSE: usize = 7;
    pub const TRUCK: usize = 9;

    /// truck → automobile, bird → airplane, deer → horse, cat ↔ dog.
    pub const ASYMMETRIC_PAIRS: [(usize, usize); 5] = [
        (TRUCK, AUTOMOBILE),
        (BIRD, AIRPLANE),
        (DEER, HORSE),
        (CAT, DOG),
        (DOG, CAT),
    ];
}

pub mod cifar100 {
    /// Coarse (super-class) id of each CIFAR-100 fine label.
    pub const COARSE_OF_FINE: [u8; 100] = [
        4, 1, 14, 8, 0, 6, 7, 7, 18, 3, 3, 14, 9, 18, 7, 11, 3, 9, 7, 11, 6, 11, 5, 10, 7, 6, 13, 15,
        3, 15, 0, 11, 1, 10, 12, 14, 16, 9, 11, 5, 5, 19, 8, 8, 15, 13, 14, 17, 18, 10, 16, 4, 17, 4,
        2, 0, 17, 4, 18, 17, 10, 3, 2, 12, 12, 16, 12, 1, 9, 19, 2, 10, 0, 1, 16, 12, 9, 13, 15, 13,
        16, 19, 2, 4, 6, 19, 5, 5, 8, 19, 18, 1, 2, 15, 6, 0, 17, 8, 14, 13,
    ];

    /// The 20 super-classes as ascending lists of 5 fine labels.
    pub fn superclasses() -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); 20];
        for (fine, &coarse) in COARSE_OF_FINE.iter().enumerate() {
            groups[coarse as usize].push(fine);
        }
        groups
    }

    /// Each class flips into the next one of its super-class, circularly.
    pub fn asymmetric_pairs() -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(100);
        for group in superclasses() {
            for (k, &src) in group.iter().enumerate() {
                pairs.push((src, group[(k + 1) % group.len()]));
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

impl TransitionMatrix {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.q[from][to]
    }

    pub fn class_count(&self) -> usize {
        self.q.len()
    }

    pub fn model(&self) -> NoiseModel {
        self.model
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Expected fraction of flipped labels under a uniform class prior.
    pub fn expected_flip_rate(&self) -> f64 {
        let c = self.q.len() as f64;
        self.q.iter().enumerate().map(|(i, row)| 1.0 - row[i]).sum::<f64>() / c
    }

    /// Samples a noisy label for `clean` from a uniform draw `u ∈ [0, 1)`.
    fn sample(&self, clean: usize, u: f64) -> usize {
        let row = &self.q[clean];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding slack of the last non-zero entry
        row.iter().rposition(|&p| p > 0.0).unwrap_or(clean)
    }
}

/// Builds the symmetric or asymmetric flip matrix.
///
/// Asymmetric pairs default to the CIFAR-10 map for 10 classes and the
/// CIFAR-100 super-class cycles for 100 classes.
pub fn build_transition_matrix(
    model: NoiseModel,
    epsilon: f64,
    class_count: usize,
    pair_map: Option<&[(usize, usize)]>,
) -> Result<TransitionMatrix> {
    if class_count < 2 {
        return Err(Error::Validation(format!("class_count must be >= 2, got {class_count}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Validation(format!("noise rate {epsilon} outside [0, 1)")));
    }
    let c = class_count;
    let mut q = vec![vec![0.0; c]; c];
    match model {
        NoiseModel::Symmetric => {
            let off = epsilon / (c as f64 - 1.0);
            for (i, row) in q.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { 1.0 - epsilon } else { off };
                }
            }
        }
        NoiseModel::Asymmetric => {
            let owned;
            let pairs: &[(usize, usize)] = match pair_map {
                Some(p) => p,
                None if c == 10 => &cifar10::ASYMMETRIC_PAIRS,
                None if c == 100 => {
                    owned = cifar100::asymmetric_pairs();
                    &owned
                }
                None => {
                    return Err(Error::Validation(format!(
                        "asymmetric noise over {c} classes needs an explicit pair map"
                    )))
                }
            };
            for (i, row) in q.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            let mut seen = vec![false; c];
            for &(s, t) in pairs {
                if s >= c || t >= c {
                    return Err(Error::Validation(format!("pair {s}->{t} outside {c} classes")));
                }
                if s == t {
                    return Err(Error::Validation(format!("pair maps class {s} to itself")));
                }
                if std::mem::replace(&mut seen[s], true) {
                    return Err(Error::Validation(format!("class {s} has more than one flip target")));
                }
                q[s][s] = 1.0 - epsilon;
                q[s][t] = epsilon;
            }
        }
    }
    Ok(TransitionMatrix { q, model, epsilon })
}

/// Draws every noisy label independently from `q[clean_label]`, using a
/// stream keyed by `(seed, sample index)`.
pub fn corrupt_labels(dataset: &LabeledDataset, q: &TransitionMatrix, seed: u64) -> Result<LabeledDataset> {
    if dataset.split() == Split::Test {
        return Err(Error::Validation("the test split is never corrupted".into()));
    }
    if dataset.is_corrupted() {
        return Err(Error::State("dataset labels are already corrupted".into()));
    }
    if q.class_count() != dataset.class_count() {
        return Err(Error::Validation(format!(
            "transition matrix is {0}x{0} but dataset has {1} classes",
            q.class_count(),
            dataset.class_count()
        )));
    }
    let noisy = dataset
        .ground_truth()
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &clean)| {
            let u: f64 = seed::stream(seed, &[tag::CORRUPT, i as u64]).random();
            q.sample(clean, u)
        })
        .collect();
    let mut out = dataset.clone();
    out.set_noisy_labels(noisy);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseAudit {
    pub realized_flip_rate: f64,
    /// Row-normalized clean→noisy confusion; rows for absent classes are 0.
    pub empirical_q: Vec<Vec<f64>>,
    pub class_totals: Vec<usize>,
}

pub fn noise_audit(dataset: &LabeledDataset) -> Result<NoiseAudit> {
    if !dataset.is_corrupted() {
        return Err(Error::State("noise audit needs a corrupted dataset".into()));
    }
    let c = dataset.class_count();
    let mut counts = vec![vec![0usize; c]; c];
    let mut flips = 0usize;
    for (&clean, &noisy) in dataset.ground_truth().labels().iter().zip(dataset.noisy_labels()) {
        counts[clean][noisy] += 1;
        flips += (clean != noisy) as usize;
    }
    let class_totals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let empirical_q = counts
        .iter()
        .zip(&class_totals)
        .map(|(row, &total)| {
            row.iter()
                .map(|&k| if total == 0 { 0.0 } else { k as f64 / total as f64 })
                .collect()
        })
        .collect();
    Ok(NoiseAudit {
        realized_flip_rate: flips as f64 / dataset.len().max(1) as f64,
        empirical_q,
        class_totals,
    })
}

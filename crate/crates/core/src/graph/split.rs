use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, MultiRelationGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    tags: Vec<SplitTag>,
}

impl SplitAssignment {
    pub fn from_tags(tags: Vec<SplitTag>) -> Self {
        SplitAssignment { tags }
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    pub fn tag(&self, i: usize) -> SplitTag {
        self.tags[i]
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.tags.len()).filter(|&i| self.tags[i] == tag).collect()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|t| **t == tag).count()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut tags = vec![SplitTag::Unlabeled; self.tags.len()];
        for (i, &p) in perm.iter().enumerate() {
            tags[p] = self.tags[i];
        }
        SplitAssignment { tags }
    }
}

fn class_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Splits `total` items by `ratios` with the largest-remainder rule, so each
/// share is within one item of its exact quota.
fn apportion(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let sum: f64 = ratios.iter().sum();
    let quotas = ratios.map(|r| r / sum * total as f64);
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).filter(|&k| ratios[k] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for k in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Per-class random split of the labeled nodes into train/val/test.
pub fn stratified_split(
    graph: &MultiRelationGraph,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative with a positive sum, got {ratios:?}"
        )));
    }
    let mut tags = vec![SplitTag::Unlabeled; graph.num_nodes()];
    for (class, label) in [Label::Benign, Label::Fraud].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..graph.num_nodes())
            .filter(|&i| graph.labels()[i] == label)
            .collect();
        if members.is_empty() {
            return Err(Error::Config(format!(
                "no labeled {label:?} nodes to split"
            )));
        }
        members.shuffle(&mut class_rng(seed, class as u64 + 1));
        let [n_train, n_val, _] = apportion(members.len(), &ratios);
        for (k, &i) in members.iter().enumerate() {
            tags[i] = if k < n_train {
                SplitTag::Train
            } else if k < n_train + n_val {
                SplitTag::Val
            } else {
                SplitTag::Test
            };
        }
    }
    Ok(SplitAssignment { tags })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleSpec {
    /// Target benign-to-fraud ratio among labeled nodes.
    pub rho: u32,
    pub seed: u64,
}

/// Masks labels to `Unknown` until benign:fraud among the labeled nodes is
/// exactly `rho:1`. The minority side is kept whole whenever the majority is
/// large enough; otherwise fraud is cut to `floor(benign / rho)` and benign
/// to `rho` times that. Topology and features are untouched.
pub fn resample_imbalance(graph: &MultiRelationGraph, spec: ResampleSpec) -> Result<MultiRelationGraph> {
    if spec.rho == 0 {
        return Err(Error::Config("rho must be at least 1".into()));
    }
    let rho = spec.rho as usize;
    let benign: Vec<usize> = (0..graph.num_nodes())
        .filter(|&i| graph.labels()[i] == Label::Benign)
        .collect();
    let fraud: Vec<usize> = (0..graph.num_nodes())
        .filter(|&i| graph.labels()[i] == Label::Fraud)
        .collect();
    let (keep_benign, keep_fraud) = if benign.len() >= rho * fraud.len() {
        (rho * fraud.len(), fraud.len())
    } else {
        let f = benign.len() / rho;
        (rho * f, f)
    };
    if keep_fraud == 0 {
        return Err(Error::Config(format!(
            "rho {rho} is not realizable with {} benign and {} fraud labeled nodes; \
             achievable range is 1..={}",
            benign.len(),
            fraud.len(),
            benign.len().max(1)
        )));
    }

    let mut labels = graph.labels().to_vec();
    for (members, keep, salt) in [(benign, keep_benign, 11u64), (fraud, keep_fraud, 13)] {
        let mut order = members;
        order.shuffle(&mut class_rng(spec.seed, salt));
        for &i in &order[keep..] {
            labels[i] = Label::Unknown;
        }
    }
    graph.with_labels(labels)
}

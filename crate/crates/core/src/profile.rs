//! Centrality of benign nodes against the make-up of their neighbourhoods.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Label, MultiRelationGraph, RelationAdjacency};

pub const CSV_HEADER: &str = "bin_lo,bin_hi,count_benign_nodes,mean_fraud_neighbors,mean_benign_neighbors";

/// Which adjacency the statistics are computed on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphView {
    Union,
    Relation(String),
}

impl GraphView {
    pub fn parse(s: &str) -> Self {
        if s == "union" {
            GraphView::Union
        } else {
            GraphView::Relation(s.to_string())
        }
    }

    pub fn adjacency(&self, graph: &MultiRelationGraph) -> Result<RelationAdjacency> {
        match self {
            GraphView::Union => Ok(graph.union_adjacency()),
            GraphView::Relation(name) => graph.relation(name).cloned().ok_or_else(|| {
                Error::Config(format!(
                    "unknown relation {name}; the graph has {}",
                    graph.relation_names().join(", ")
                ))
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centrality {
    Cc,
    Dc,
}

/// `(reachable - 1) / sum of distances` inside each node's component;
/// isolated nodes score 0.
pub fn closeness_centrality(adj: &RelationAdjacency) -> Vec<f64> {
    let n = adj.num_nodes();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let mut touched = Vec::new();
    (0..n)
        .map(|s| {
            dist[s] = 0;
            touched.push(s);
            queue.push_back(s);
            let mut total = 0usize;
            while let Some(v) = queue.pop_front() {
                for &u in adj.neighbors(v) {
                    if dist[u] == usize::MAX {
                        dist[u] = dist[v] + 1;
                        total += dist[u];
                        touched.push(u);
                        queue.push_back(u);
                    }
                }
            }
            let reached = touched.len();
            for &v in &touched {
                dist[v] = usize::MAX;
            }
            touched.clear();
            if total == 0 {
                0.0
            } else {
                (reached - 1) as f64 / total as f64
            }
        })
        .collect()
}

/// `deg / (n - 1)`.
pub fn degree_centrality(adj: &RelationAdjacency) -> Result<Vec<f64>> {
    let n = adj.num_nodes();
    if n < 2 {
        return Err(Error::Config(format!("degree centrality needs at least 2 nodes, got {n}")));
    }
    Ok(adj.degrees().iter().map(|&d| d as f64 / (n - 1) as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count_benign_nodes: usize,
    pub mean_fraud_neighbors: f64,
    pub mean_benign_neighbors: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralityProfile {
    pub bins: Vec<HistogramBin>,
}

impl CentralityProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.lo, b.hi, b.count_benign_nodes, b.mean_fraud_neighbors, b.mean_benign_neighbors
            );
        }
        out
    }

    pub fn fraud_means(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.mean_fraud_neighbors).collect()
    }
}

/// Bins labeled-benign nodes by `centrality` into `num_bins` equal-width bins
/// over their observed range and averages how many distinct fraud- and
/// benign-labeled neighbours they have in `adj`. A zero-width range puts
/// every node in the first bin.
pub fn neighbor_composition_histogram(
    adj: &RelationAdjacency,
    labels: &[Label],
    centrality: &[f64],
    num_bins: usize,
) -> Result<CentralityProfile> {
    if num_bins == 0 {
        return Err(Error::Config("the histogram needs at least one bin".into()));
    }
    let benign: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Benign).collect();
    if benign.is_empty() {
        return Err(Error::Config("no labeled benign nodes to profile".into()));
    }
    let lo = benign.iter().map(|&i| centrality[i]).fold(f64::INFINITY, f64::min);
    let hi = benign.iter().map(|&i| centrality[i]).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / num_bins as f64;

    let mut count = vec![0usize; num_bins];
    let mut fraud_sum = vec![0usize; num_bins];
    let mut benign_sum = vec![0usize; num_bins];
    for &i in &benign {
        let k = if width > 0.0 {
            (((centrality[i] - lo) / width) as usize).min(num_bins - 1)
        } else {
            0
        };
        count[k] += 1;
        for &j in adj.neighbors(i) {
            match labels[j] {
                Label::Fraud => fraud_sum[k] += 1,
                Label::Benign => benign_sum[k] += 1,
                Label::Unknown => {}
            }
        }
    }
    let mean = |s: usize, c: usize| if c == 0 { 0.0 } else { s as f64 / c as f64 };
    let bins = (0..num_bins)
        .map(|k| HistogramBin {
            lo: lo + width * k as f64,
            hi: if k + 1 == num_bins { hi } else { lo + width * (k + 1) as f64 },
            count_benign_nodes: count[k],
            mean_fraud_neighbors: mean(fraud_sum[k], count[k]),
            mean_benign_neighbors: mean(benign_sum[k], count[k]),
        })
        .collect();
    Ok(CentralityProfile { bins })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman correlation between bin index and mean fraud-neighbour count over
/// the occupied bins.
pub fn fraud_trend(profile: &CentralityProfile) -> Option<f64> {
    let occupied: Vec<(f64, f64)> = profile
        .bins
        .iter()
        .enumerate()
        .filter(|(_, b)| b.count_benign_nodes > 0)
        .map(|(k, b)| (k as f64, b.mean_fraud_neighbors))
        .collect();
    let (idx, means): (Vec<f64>, Vec<f64>) = occupied.into_iter().unzip();
    spearman(&idx, &means)
}

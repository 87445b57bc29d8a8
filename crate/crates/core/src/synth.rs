//! Labeled multi-relation graphs with planted imbalance, homophily and
//! camouflage.

use std::collections::HashSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::{save_graph, Label, MultiRelationGraph, RelationAdjacency};
use crate::metrics::roc_auc;

pub const SPEC_FILE: &str = "synth_spec.json";

/// Spread of the log-normal degree propensities.
const PROPENSITY_SIGMA: f64 = 0.8;
/// Failed draws allowed per requested edge before giving up.
const ATTEMPTS_PER_EDGE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub fraud_fraction: f64,
    pub num_relations: usize,
    /// Expected mean degree of each relation.
    pub mean_degree: f64,
    /// Probability that an edge drawn from a benign node stays benign.
    pub homophily_benign: f64,
    /// Probability that an edge drawn from a fraud node stays fraud.
    pub homophily_fraud: f64,
    /// Fraction of fraud nodes whose features come from the benign component.
    pub camouflage_rate: f64,
    /// Exponent of the `(1 + deg)^-bias` preference of cross-class edges for
    /// low-degree benign endpoints.
    pub low_cc_bias: f64,
    pub feature_dim: usize,
    /// Euclidean distance between the two class means.
    pub class_mean_separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 2000,
            fraud_fraction: 0.1,
            num_relations: 2,
            mean_degree: 10.0,
            homophily_benign: 0.9,
            homophily_fraud: 0.7,
            camouflage_rate: 0.3,
            low_cc_bias: 1.0,
            feature_dim: 16,
            class_mean_separation: 1.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// SHA-256 of the canonical JSON form.
    pub fn spec_hash(&self) -> String {
        crate::config::sha256_hex(&serde_json::to_value(self).expect("spec serializes").to_string())
    }

    pub fn num_fraud(&self) -> usize {
        (self.n as f64 * self.fraud_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if !(self.fraud_fraction > 0.0 && self.fraud_fraction < 0.5) {
            return Err(Error::Config(format!(
                "fraud_fraction must lie in (0, 0.5), got {}",
                self.fraud_fraction
            )));
        }
        if self.num_fraud() < 2 {
            return Err(Error::Config(format!(
                "n * fraud_fraction must be at least 2, got {}",
                self.n as f64 * self.fraud_fraction
            )));
        }
        unit("homophily_benign", self.homophily_benign)?;
        unit("homophily_fraud", self.homophily_fraud)?;
        unit("camouflage_rate", self.camouflage_rate)?;
        if !(self.low_cc_bias >= 0.0) {
            return Err(Error::Config(format!("low_cc_bias must be non-negative, got {}", self.low_cc_bias)));
        }
        if !(self.class_mean_separation >= 0.0) {
            return Err(Error::Config(format!(
                "class_mean_separation must be non-negative, got {}",
                self.class_mean_separation
            )));
        }
        if !(self.mean_degree >= 0.0) {
            return Err(Error::Config(format!("mean_degree must be non-negative, got {}", self.mean_degree)));
        }
        if self.num_relations == 0 || self.feature_dim == 0 {
            return Err(Error::Config("num_relations and feature_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws a node from `pool` with probability proportional to `weight`.
fn draw_weighted(rng: &mut impl Rng, pool: &[usize], weight: impl Fn(usize) -> f64) -> usize {
    let total: f64 = pool.iter().map(|&v| weight(v)).sum();
    let mut x = rng.random::<f64>() * total;
    for &v in pool {
        x -= weight(v);
        if x < 0.0 {
            return v;
        }
    }
    *pool.last().expect("non-empty pool")
}

struct Wiring<'a> {
    is_fraud: &'a [bool],
    theta: &'a [f64],
    benign: &'a [usize],
    fraud: &'a [usize],
    benign_index: WeightedIndex<f64>,
    fraud_index: WeightedIndex<f64>,
    source_index: WeightedIndex<f64>,
}

impl Wiring<'_> {
    fn within(&self, rng: &mut impl Rng, fraud: bool) -> usize {
        if fraud {
            self.fraud[self.fraud_index.sample(rng)]
        } else {
            self.benign[self.benign_index.sample(rng)]
        }
    }

    fn relation(&self, rng: &mut impl Rng, spec: &SynthSpec, name: &str) -> Result<RelationAdjacency> {
        let n = spec.n;
        let target = (n as f64 * spec.mean_degree / 2.0).round() as usize;
        let mut seen = HashSet::with_capacity(target);
        let mut edges = Vec::with_capacity(target);
        let mut cross_fraud_ends = Vec::new();
        let mut attempts = 0;
        let budget = ATTEMPTS_PER_EDGE * target.max(1);

        fn push(u: usize, v: usize, seen: &mut HashSet<(usize, usize)>, edges: &mut Vec<(usize, usize)>) -> bool {
            let key = (u.min(v), u.max(v));
            u != v && seen.insert(key) && {
                edges.push(key);
                true
            }
        }

        // Same-class edges first so that cross-class edges see realistic
        // benign degrees.
        let mut planned = 0;
        while planned < target {
            let u = self.source_index.sample(rng);
            let h = if self.is_fraud[u] {
                spec.homophily_fraud
            } else {
                spec.homophily_benign
            };
            if rng.random::<f64>() < h {
                attempts += 1;
                if attempts > budget {
                    return Err(infeasible(name, target, edges.len()));
                }
                let v = self.within(rng, self.is_fraud[u]);
                if push(u, v, &mut seen, &mut edges) {
                    planned += 1;
                }
            } else {
                let f = if self.is_fraud[u] { u } else { self.within(rng, true) };
                cross_fraud_ends.push(f);
                planned += 1;
            }
        }

        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut pending = cross_fraud_ends.into_iter();
        let mut current = pending.next();
        while let Some(f) = current {
            attempts += 1;
            if attempts > budget {
                return Err(infeasible(name, target, edges.len()));
            }
            let b = draw_weighted(rng, self.benign, |v| {
                self.theta[v] * (1.0 + degree[v] as f64).powf(-spec.low_cc_bias)
            });
            if push(f, b, &mut seen, &mut edges) {
                degree[f] += 1;
                degree[b] += 1;
                current = pending.next();
            }
        }
        RelationAdjacency::from_edges(n, &edges)
    }
}

fn infeasible(name: &str, target: usize, placed: usize) -> Error {
    Error::Config(format!(
        "relation {name}: placed {placed} of {target} edges before running out of attempts; \
         the degree and homophily settings are infeasible for this node count"
    ))
}

/// Generates a fully labeled graph. Identical specs give identical graphs.
pub fn generate(spec: &SynthSpec) -> Result<MultiRelationGraph> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_fraud = vec![false; n];
    for &i in &order[..spec.num_fraud()] {
        is_fraud[i] = true;
    }
    let benign: Vec<usize> = (0..n).filter(|&i| !is_fraud[i]).collect();
    let fraud: Vec<usize> = (0..n).filter(|&i| is_fraud[i]).collect();

    let lognormal = LogNormal::new(0.0, PROPENSITY_SIGMA).expect("valid sigma");
    let theta: Vec<f64> = (0..n).map(|_| lognormal.sample(&mut rng)).collect();
    let index = |pool: &[usize]| WeightedIndex::new(pool.iter().map(|&i| theta[i])).expect("positive weights");
    let wiring = Wiring {
        is_fraud: &is_fraud,
        theta: &theta,
        benign: &benign,
        fraud: &fraud,
        benign_index: index(&benign),
        fraud_index: index(&fraud),
        source_index: WeightedIndex::new(&theta).expect("positive weights"),
    };
    let names: Vec<String> = (0..spec.num_relations).map(|r| format!("rel{r}")).collect();
    let relations = names
        .iter()
        .map(|name| wiring.relation(&mut rng, spec, name))
        .collect::<Result<Vec<_>>>()?;

    let d = spec.feature_dim;
    let shift = spec.class_mean_separation / (d as f64).sqrt();
    let mut features = Matrix::zeros(n, d);
    for i in 0..n {
        let camouflaged = is_fraud[i] && rng.random::<f64>() < spec.camouflage_rate;
        let mean = if is_fraud[i] && !camouflaged { shift } else { 0.0 };
        for v in features.row_mut(i) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = mean + z;
        }
    }
    let labels = is_fraud
        .iter()
        .map(|&f| if f { Label::Fraud } else { Label::Benign })
        .collect();
    MultiRelationGraph::new(features, relations, names, labels)
}

/// Writes the graph files plus the spec that produced them.
pub fn write_synth(graph: &MultiRelationGraph, spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    save_graph(graph, dir)?;
    let path = dir.join(SPEC_FILE);
    let text = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(&path, text + "\n").map_err(|source| Error::Write { path, source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub name: String,
    pub mean_degree: f64,
    /// Fraction of edges joining nodes of the same class.
    pub edge_homophily: f64,
    /// Fraction of benign endpoints whose edge partner is benign.
    pub benign_homophily: f64,
    /// Fraction of fraud endpoints whose edge partner is fraud.
    pub fraud_homophily: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub fraud_fraction: f64,
    pub relations: Vec<RelationStats>,
    pub union_mean_degree: f64,
    /// Held-out AUC of a logistic regression on the raw features.
    pub feature_oracle_auc: f64,
}

pub fn relation_stats(name: &str, adj: &RelationAdjacency, labels: &[Label]) -> RelationStats {
    let n = adj.num_nodes();
    let (mut same, mut total) = (0usize, 0usize);
    let mut ends = [[0usize; 2]; 2];
    for (u, v) in adj.edges() {
        let (a, b) = (labels[u] == Label::Fraud, labels[v] == Label::Fraud);
        total += 1;
        if a == b {
            same += 1;
        }
        ends[a as usize][b as usize] += 1;
        ends[b as usize][a as usize] += 1;
    }
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    RelationStats {
        name: name.to_string(),
        mean_degree: frac(2 * total, n),
        edge_homophily: frac(same, total),
        benign_homophily: frac(ends[0][0], ends[0][0] + ends[0][1]),
        fraud_homophily: frac(ends[1][1], ends[1][1] + ends[1][0]),
    }
}

/// Logistic regression trained by gradient descent on even-indexed nodes and
/// scored by AUC on odd-indexed nodes.
pub fn feature_oracle_auc(features: &Matrix, labels: &[Label]) -> Result<f64> {
    let (n, d) = features.shape();
    let y: Vec<f64> = labels.iter().map(|l| (*l == Label::Fraud) as u8 as f64).collect();
    let train: Vec<usize> = (0..n).step_by(2).collect();
    let test: Vec<usize> = (1..n).step_by(2).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let lr = 0.5;
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for &i in &train {
            let x = features.row(i);
            let z: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y[i];
            gb += err;
            for (g, xv) in gw.iter_mut().zip(x) {
                *g += err * xv;
            }
        }
        let m = train.len() as f64;
        b -= lr * gb / m;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= lr * g / m;
        }
    }
    let scores: Vec<f64> = test
        .iter()
        .map(|&i| features.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    let positive: Vec<bool> = test.iter().map(|&i| y[i] == 1.0).collect();
    roc_auc(&scores, &positive)
}

pub fn calibrate(spec: &SynthSpec) -> Result<CalibrationReport> {
    let graph = generate(spec)?;
    let labels = graph.labels();
    let relations = graph
        .relation_names()
        .iter()
        .zip(graph.relations())
        .map(|(name, adj)| relation_stats(name, adj, labels))
        .collect();
    let union = graph.union_adjacency();
    Ok(CalibrationReport {
        fraud_fraction: graph.class_count(Label::Fraud) as f64 / graph.num_nodes() as f64,
        relations,
        union_mean_degree: union.nnz() as f64 / graph.num_nodes() as f64,
        feature_oracle_auc: feature_oracle_auc(graph.features(), labels)?,
    })
}

//! Group PageRank: personalized PageRank whose restart distribution is
//! uniform over the training nodes of one class.
//!
//! For each relation and each class `c` the score vector solves
//! `g = (1 - alpha) A' g + alpha I_c` with `A' = A D^-1`. Scores are computed
//! once from training labels and stay frozen during training.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::{MultiRelationGraph, RelationAdjacency, SplitAssignment, SplitTag, TransitionMatrix};

pub const NUM_CLASSES: usize = 2;

/// How raw scores are scaled before the per-column softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// `softmax(G)`.
    Raw,
    /// `softmax(n * G)`: a column summing to one has mean one after scaling,
    /// so weight contrast does not vanish as the graph grows.
    #[default]
    NodeCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprConfig {
    /// Restart probability, in `(0, 1]`.
    pub alpha: f64,
    /// Convergence tolerance on the residual.
    pub tol: f64,
    /// Defaults to `10 * ceil(ln(tol) / ln(1 - alpha))`.
    pub max_iters: Option<usize>,
    /// Per-relation restart overrides, in relation order. Empty means `alpha`
    /// for every relation.
    pub relation_alpha: Vec<f64>,
    pub score_scale: ScoreScale,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig {
            alpha: 0.15,
            tol: 1e-10,
            max_iters: None,
            relation_alpha: Vec::new(),
            score_scale: ScoreScale::default(),
        }
    }
}

impl GprConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        GprConfig {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &a in std::iter::once(&self.alpha).chain(&self.relation_alpha) {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("alpha must lie in (0, 1], got {a}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters.unwrap_or_else(|| {
            let rate = (1.0 - self.alpha).ln();
            let bound = (self.tol.ln() / rate).ceil();
            if bound.is_finite() && bound > 0.0 {
                10 * bound as usize
            } else {
                10
            }
        })
    }

    pub fn for_relation(&self, r: usize) -> GprConfig {
        GprConfig {
            alpha: self.relation_alpha.get(r).copied().unwrap_or(self.alpha),
            relation_alpha: Vec::new(),
            ..self.clone()
        }
    }
}

/// Restart distribution of class `class`: `1 / |train nodes of class|` on
/// every training node of that class, zero elsewhere. Validation and test
/// labels are never read.
pub fn teleport_vector(
    graph: &MultiRelationGraph,
    split: &SplitAssignment,
    class: usize,
) -> Result<Vec<f64>> {
    let members: Vec<usize> = (0..graph.num_nodes())
        .filter(|&i| split.tag(i) == SplitTag::Train && graph.labels()[i].class() == Some(class))
        .collect();
    if members.is_empty() {
        return Err(Error::Config(format!(
            "class {class} has no training nodes; cannot build its restart vector"
        )));
    }
    let mut v = vec![0.0; graph.num_nodes()];
    let mass = 1.0 / members.len() as f64;
    for i in members {
        v[i] = mass;
    }
    Ok(v)
}

/// Both restart vectors as the columns of an `n x 2` matrix.
pub fn teleport_matrix(graph: &MultiRelationGraph, split: &SplitAssignment) -> Result<Matrix> {
    let n = graph.num_nodes();
    let mut m = Matrix::zeros(n, NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        for (i, v) in teleport_vector(graph, split, c)?.into_iter().enumerate() {
            m[(i, c)] = v;
        }
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct GprSolution {
    pub scores: Matrix,
    /// Iterations used by the slowest column.
    pub iterations: usize,
    /// Per column, the step `‖g_k - g_{k-1}‖₁` of each iteration. It shrinks
    /// by at least `1 - alpha` per iteration.
    pub residuals: Vec<Vec<f64>>,
}

/// Power iteration for `g = (1 - alpha) A' g + alpha I`, one column of
/// `teleports` at a time. Stops once an iteration moves `g` by less than `tol`
/// in L1, which bounds the returned iterate's sup-norm residual by `tol` as
/// well.
pub fn compute_gpr(
    transition: &TransitionMatrix,
    teleports: &Matrix,
    cfg: &GprConfig,
) -> Result<GprSolution> {
    cfg.validate()?;
    let n = transition.num_nodes();
    if teleports.rows() != n {
        return Err(Error::shape(
            "compute_gpr",
            format!("{} teleport rows for {n} nodes", teleports.rows()),
        ));
    }
    let alpha = cfg.alpha;
    let max_iters = cfg.max_iters();
    let mut scores = Matrix::zeros(n, teleports.cols());
    let mut residuals = Vec::with_capacity(teleports.cols());
    let mut iterations = 0;

    let mut next = vec![0.0; n];
    for c in 0..teleports.cols() {
        let restart = teleports.column(c);
        let mut g = restart.clone();
        let mut trace = Vec::new();
        let mut converged = false;
        for k in 1..=max_iters {
            transition.matvec_into(&g, &mut next);
            let mut step = 0.0;
            for i in 0..n {
                next[i] = (1.0 - alpha) * next[i] + alpha * restart[i];
                step += (next[i] - g[i]).abs();
            }
            trace.push(step);
            std::mem::swap(&mut g, &mut next);
            if step < cfg.tol {
                iterations = iterations.max(k);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!(
                "group pagerank for class {c} did not converge in {max_iters} iterations \
                 (final residual {:e})",
                trace.last().copied().unwrap_or(f64::NAN)
            )));
        }
        for (i, v) in g.into_iter().enumerate() {
            scores[(i, c)] = v;
        }
        residuals.push(trace);
    }
    Ok(GprSolution {
        scores,
        iterations,
        residuals,
    })
}

/// Direct dense solve of `(E - (1 - alpha) A') g = alpha I` per column. For
/// verification on small graphs only.
pub fn dense_gpr_oracle(
    adjacency: &RelationAdjacency,
    teleports: &Matrix,
    alpha: f64,
) -> Result<Matrix> {
    let n = adjacency.num_nodes();
    if n > 200 {
        return Err(Error::Config(format!("dense oracle limited to 200 nodes, got {n}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut system = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        let deg = adjacency.degree(j);
        for i in 0..n {
            if deg > 0 && adjacency.contains(i, j) {
                system[(i, j)] -= (1.0 - alpha) / deg as f64;
            }
        }
    }
    let lu = system.lu();
    let mut out = Matrix::zeros(n, teleports.cols());
    for c in 0..teleports.cols() {
        let rhs = nalgebra::DVector::from_iterator(n, (0..n).map(|i| alpha * teleports[(i, c)]));
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular group pagerank system".into()))?;
        for i in 0..n {
            out[(i, c)] = sol[i];
        }
    }
    Ok(out)
}

/// Softmax down each column over all nodes.
pub fn normalize_scores(g: &Matrix) -> Matrix {
    let (n, k) = g.shape();
    let mut p = Matrix::zeros(n, k);
    for c in 0..k {
        let max = (0..n).map(|i| g[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..n {
            let e = (g[(i, c)] - max).exp();
            p[(i, c)] = e;
            total += e;
        }
        for i in 0..n {
            p[(i, c)] /= total;
        }
    }
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationInfluence {
    /// `n x 2` raw scores, column 0 benign, column 1 fraud.
    pub g: Matrix,
    /// `n x 2` propagation weights.
    pub p: Matrix,
    pub converged_iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceScores {
    relations: Vec<RelationInfluence>,
}

impl InfluenceScores {
    pub fn new(relations: Vec<RelationInfluence>) -> Self {
        InfluenceScores { relations }
    }

    /// Uniform weights `1/n` with zero raw scores; removes the reachability
    /// signal while keeping every shape intact.
    pub fn uniform(num_nodes: usize, num_relations: usize) -> Self {
        let rel = RelationInfluence {
            g: Matrix::zeros(num_nodes, NUM_CLASSES),
            p: Matrix::filled(num_nodes, NUM_CLASSES, 1.0 / num_nodes.max(1) as f64),
            converged_iters: 0,
        };
        InfluenceScores {
            relations: vec![rel; num_relations],
        }
    }

    pub fn relations(&self) -> &[RelationInfluence] {
        &self.relations
    }

    pub fn num_nodes(&self) -> usize {
        self.relations.first().map_or(0, |r| r.g.rows())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        InfluenceScores {
            relations: self
                .relations
                .iter()
                .map(|r| RelationInfluence {
                    g: r.g.select_rows(&inverse),
                    p: r.p.select_rows(&inverse),
                    converged_iters: r.converged_iters,
                })
                .collect(),
        }
    }
}

/// Scores and weights for every relation of `graph` from its training labels.
pub fn compute_influence(
    graph: &MultiRelationGraph,
    split: &SplitAssignment,
    cfg: &GprConfig,
) -> Result<InfluenceScores> {
    cfg.validate()?;
    let teleports = teleport_matrix(graph, split)?;
    let n = graph.num_nodes() as f64;
    let relations = graph
        .relations()
        .iter()
        .enumerate()
        .map(|(r, adj)| {
            let sol = compute_gpr(&adj.row_normalize(), &teleports, &cfg.for_relation(r))?;
            let p = match cfg.score_scale {
                ScoreScale::Raw => normalize_scores(&sol.scores),
                ScoreScale::NodeCount => normalize_scores(&sol.scores.map(|v| v * n)),
            };
            Ok(RelationInfluence {
                g: sol.scores,
                p,
                converged_iters: sol.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InfluenceScores { relations })
}

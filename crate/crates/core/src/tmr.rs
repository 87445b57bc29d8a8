//! Topological message reachability layer.
//!
//! Each node's neighbourhood in relation `r` is split into training-labeled
//! benign neighbours, training-labeled fraud neighbours and everything else.
//! Labeled parts are averaged with the class's propagation weights; the
//! unlabeled part is averaged twice (benign weights, fraud weights) and the
//! two are blended by a learned per-dimension gate `beta`. Per relation the
//! self transform and the three aggregates are concatenated, averaged across
//! relations and projected.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Matrix, Tape, Var, WeightedRows};
use crate::error::{Error, Result};
use crate::gpr::InfluenceScores;
use crate::graph::{Label, MultiRelationGraph, SplitAssignment, SplitTag};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Neighbour lists of every node in one relation, split by training label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationPartition {
    pub benign: Vec<Vec<usize>>,
    pub fraud: Vec<Vec<usize>>,
    pub unlabeled: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborPartition {
    relations: Vec<RelationPartition>,
}

impl NeighborPartition {
    pub fn relations(&self) -> &[RelationPartition] {
        &self.relations
    }
}

/// Only training labels decide membership; validation and test neighbours
/// count as unlabeled.
pub fn partition_neighbors(graph: &MultiRelationGraph, split: &SplitAssignment) -> NeighborPartition {
    let n = graph.num_nodes();
    let train_label = |j: usize| {
        if split.tag(j) == SplitTag::Train {
            graph.labels()[j]
        } else {
            Label::Unknown
        }
    };
    let relations = graph
        .relations()
        .iter()
        .map(|adj| {
            let mut part = RelationPartition {
                benign: vec![Vec::new(); n],
                fraud: vec![Vec::new(); n],
                unlabeled: vec![Vec::new(); n],
            };
            for i in 0..n {
                for &j in adj.neighbors(i) {
                    match train_label(j) {
                        Label::Benign => part.benign[i].push(j),
                        Label::Fraud => part.fraud[i].push(j),
                        Label::Unknown => part.unlabeled[i].push(j),
                    }
                }
            }
            part
        })
        .collect();
    NeighborPartition { relations }
}

/// Row `i` is the `p_col`-weighted mean of `h` over `lists[i]`; empty lists
/// give a zero row.
pub fn aggregate_class(h: &Matrix, lists: &[Vec<usize>], p_col: &[f64]) -> Matrix {
    WeightedRows::weighted_mean(lists, p_col).apply(h)
}

/// `sigmoid(W_beta^T h + b_beta)` for a single node.
pub fn beta_gate(h: &[f64], params: &TmrLayerParams) -> Vec<f64> {
    let d = params.w_beta.cols();
    (0..d)
        .map(|k| {
            let z: f64 = h
                .iter()
                .enumerate()
                .map(|(j, v)| v * params.w_beta[(j, k)])
                .sum::<f64>()
                + params.b_beta[(0, k)];
            sigmoid(z)
        })
        .collect()
}

/// `beta * fraud_side + (1 - beta) * benign_side`, elementwise.
pub fn fuse_unlabeled(benign_side: &[f64], fraud_side: &[f64], beta: &[f64]) -> Vec<f64> {
    benign_side
        .iter()
        .zip(fraud_side)
        .zip(beta)
        .map(|((be, fr), b)| b * fr + (1.0 - b) * be)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TmrLayerParams {
    pub w_self: Matrix,
    pub b_self: Matrix,
    pub w_beta: Matrix,
    pub b_beta: Matrix,
    pub w_fuse: Matrix,
    pub b_fuse: Matrix,
    pub activation: Activation,
}

pub(crate) fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

impl TmrLayerParams {
    pub const NUM_BLOCKS: usize = 6;

    pub fn init(rng: &mut impl Rng, d_in: usize, d_out: usize, activation: Activation) -> Self {
        TmrLayerParams {
            w_self: glorot(rng, d_in, d_in),
            b_self: Matrix::zeros(1, d_in),
            w_beta: glorot(rng, d_in, d_in),
            b_beta: Matrix::zeros(1, d_in),
            w_fuse: glorot(rng, 4 * d_in, d_out),
            b_fuse: Matrix::zeros(1, d_out),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_self.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_fuse.cols()
    }

    pub fn blocks(&self) -> [&Matrix; Self::NUM_BLOCKS] {
        [
            &self.w_self,
            &self.b_self,
            &self.w_beta,
            &self.b_beta,
            &self.w_fuse,
            &self.b_fuse,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; Self::NUM_BLOCKS] {
        [
            &mut self.w_self,
            &mut self.b_self,
            &mut self.w_beta,
            &mut self.b_beta,
            &mut self.w_fuse,
            &mut self.b_fuse,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let ok = self.w_self.shape() == (d, d)
            && self.b_self.shape() == (1, d)
            && self.w_beta.shape() == (d, d)
            && self.b_beta.shape() == (1, d)
            && self.w_fuse.rows() == 4 * d
            && self.b_fuse.shape() == (1, self.output_dim());
        if !ok {
            return Err(Error::shape("tmr_layer", "parameter shapes are inconsistent"));
        }
        if self.blocks().iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric("non-finite layer parameter".into()));
        }
        Ok(())
    }

    /// Registers every block as a differentiable leaf.
    pub fn to_tape(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            w_self: tape.leaf(self.w_self.clone()),
            b_self: tape.leaf(self.b_self.clone()),
            w_beta: tape.leaf(self.w_beta.clone()),
            b_beta: tape.leaf(self.b_beta.clone()),
            w_fuse: tape.leaf(self.w_fuse.clone()),
            b_fuse: tape.leaf(self.b_fuse.clone()),
            activation: self.activation,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w_self: Var,
    pub b_self: Var,
    pub w_beta: Var,
    pub b_beta: Var,
    pub w_fuse: Var,
    pub b_fuse: Var,
    pub activation: Activation,
}

impl LayerVars {
    pub fn all(&self) -> [Var; TmrLayerParams::NUM_BLOCKS] {
        [
            self.w_self,
            self.b_self,
            self.w_beta,
            self.b_beta,
            self.w_fuse,
            self.b_fuse,
        ]
    }
}

#[derive(Clone, Debug)]
struct RelationOperators {
    benign: Rc<WeightedRows>,
    fraud: Rc<WeightedRows>,
    unlabeled_benign: Rc<WeightedRows>,
    unlabeled_fraud: Rc<WeightedRows>,
}

/// Frozen aggregation operators for every relation, shared by all layers.
#[derive(Clone, Debug)]
pub struct TmrPlan {
    relations: Vec<RelationOperators>,
    num_nodes: usize,
}

impl TmrPlan {
    pub fn new(scores: &InfluenceScores, part: &NeighborPartition) -> Result<Self> {
        if scores.relations().len() != part.relations().len() {
            return Err(Error::shape(
                "tmr_plan",
                format!(
                    "{} score relations vs {} partitions",
                    scores.relations().len(),
                    part.relations().len()
                ),
            ));
        }
        let num_nodes = scores.num_nodes();
        let relations = scores
            .relations()
            .iter()
            .zip(part.relations())
            .map(|(s, p)| {
                if s.p.rows() != p.benign.len() {
                    return Err(Error::shape(
                        "tmr_plan",
                        format!("{} score rows vs {} partition rows", s.p.rows(), p.benign.len()),
                    ));
                }
                let p_be = s.p.column(0);
                let p_fr = s.p.column(1);
                Ok(RelationOperators {
                    benign: Rc::new(WeightedRows::weighted_mean(&p.benign, &p_be)),
                    fraud: Rc::new(WeightedRows::weighted_mean(&p.fraud, &p_fr)),
                    unlabeled_benign: Rc::new(WeightedRows::weighted_mean(&p.unlabeled, &p_be)),
                    unlabeled_fraud: Rc::new(WeightedRows::weighted_mean(&p.unlabeled, &p_fr)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TmrPlan {
            relations,
            num_nodes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }
}

/// One layer on the tape. With `freeze_beta` the gate is the constant 0.5 and
/// `w_beta`/`b_beta` receive no gradient.
pub fn tmr_forward(
    tape: &mut Tape,
    h: Var,
    plan: &TmrPlan,
    vars: &LayerVars,
    freeze_beta: bool,
) -> Result<Var> {
    let (n, d) = tape.value(h).shape();
    if n != plan.num_nodes() {
        return Err(Error::shape(
            "tmr_forward",
            format!("{n} input rows for a {}-node plan", plan.num_nodes()),
        ));
    }
    let lin = tape.matmul(h, vars.w_self)?;
    let lin = tape.add_bias(lin, vars.b_self)?;
    let self_part = vars.activation.apply(tape, lin);

    let beta = if freeze_beta {
        tape.constant(Matrix::filled(n, d, 0.5))
    } else {
        let z = tape.matmul(h, vars.w_beta)?;
        let z = tape.add_bias(z, vars.b_beta)?;
        tape.sigmoid(z)
    };

    let mut total: Option<Var> = None;
    for ops in &plan.relations {
        let h_be = tape.aggregate(h, ops.benign.clone())?;
        let h_fr = tape.aggregate(h, ops.fraud.clone())?;
        let un_be = tape.aggregate(h, ops.unlabeled_benign.clone())?;
        let un_fr = tape.aggregate(h, ops.unlabeled_fraud.clone())?;
        let diff = tape.sub(un_fr, un_be)?;
        let gated = tape.mul(beta, diff)?;
        let h_un = tape.add(un_be, gated)?;
        let z = tape.concat_cols(&[self_part, h_be, h_fr, h_un])?;
        total = Some(match total {
            None => z,
            Some(acc) => tape.add(acc, z)?,
        });
    }
    let total = total.ok_or_else(|| Error::shape("tmr_forward", "plan has no relations"))?;
    let mean = tape.scale(total, 1.0 / plan.num_relations() as f64);
    let out = tape.matmul(mean, vars.w_fuse)?;
    let out = tape.add_bias(out, vars.b_fuse)?;
    Ok(vars.activation.apply(tape, out))
}

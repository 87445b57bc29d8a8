//! Full networks: the stacked reachability model with its decorrelation
//! weights, and a plain mean-aggregation GCN used as the reference baseline.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Matrix, Tape, Var, WeightedRows};
use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{Error, Result};
use crate::gpr::{compute_influence, InfluenceScores};
use crate::graph::{MultiRelationGraph, SplitAssignment, SplitTag};
use crate::lcd::{lcd_loss, LcdConfig, LcdState};
use crate::tmr::{glorot, partition_neighbors, tmr_forward, Activation, NeighborPartition, TmrLayerParams, TmrPlan};

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Final hidden representation (input of the classifier).
    pub hidden: Var,
    /// One leaf per parameter block, in [`Network::parameters`] order.
    pub leaves: Vec<Var>,
    /// Effective sample weights and variable emphasis when the decorrelation
    /// term is active.
    pub lcd: Option<(Var, Var)>,
}

pub trait Network {
    fn parameters(&self) -> Vec<&Matrix>;
    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;
    fn forward(&self, tape: &mut Tape, features: &Matrix) -> Result<Forward>;

    /// Decorrelation settings when the model carries sample weights.
    fn lcd_config(&self) -> Option<&LcdConfig> {
        None
    }

    /// Logits and hidden representation without keeping the tape.
    fn predict(&self, features: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, features)?;
        Ok((tape.value(fwd.logits).clone(), tape.value(fwd.hidden).clone()))
    }

    fn load_parameters(&mut self, blocks: Vec<Matrix>) -> Result<()> {
        let mut slots = self.parameters_mut();
        if slots.len() != blocks.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} parameter blocks, checkpoint has {}",
                slots.len(),
                blocks.len()
            )));
        }
        for (k, (slot, block)) in slots.iter_mut().zip(blocks).enumerate() {
            if slot.shape() != block.shape() {
                return Err(Error::Checkpoint(format!(
                    "block {k}: model shape {:?}, checkpoint shape {:?}",
                    slot.shape(),
                    block.shape()
                )));
            }
            **slot = block;
        }
        Ok(())
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Stacked reachability layers followed by a linear two-class classifier.
#[derive(Clone, Debug)]
pub struct TmrModel {
    pub layers: Vec<TmrLayerParams>,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
    /// Present only when the decorrelation term is part of the objective.
    pub lcd: Option<LcdState>,
    scores: InfluenceScores,
    partition: NeighborPartition,
    plan: TmrPlan,
    train_idx: Vec<usize>,
    freeze_beta: bool,
}

impl TmrModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layers: Vec<TmrLayerParams>,
        classifier_w: Matrix,
        classifier_b: Matrix,
        lcd: Option<LcdState>,
        scores: InfluenceScores,
        partition: NeighborPartition,
        train_idx: Vec<usize>,
        freeze_beta: bool,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("the model needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "tmr_model",
                    format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        pair[0].output_dim(),
                        k + 1,
                        pair[1].input_dim()
                    ),
                ));
            }
        }
        for layer in &layers {
            layer.validate()?;
        }
        let last = layers.last().expect("non-empty").output_dim();
        if classifier_w.shape() != (last, 2) || classifier_b.shape() != (1, 2) {
            return Err(Error::shape(
                "tmr_model",
                format!(
                    "classifier {:?} + {:?} after a {last}-wide layer",
                    classifier_w.shape(),
                    classifier_b.shape()
                ),
            ));
        }
        if let Some(state) = &lcd {
            if state.u.rows() != train_idx.len() || state.gamma.cols() + 1 != last {
                return Err(Error::shape(
                    "tmr_model",
                    "decorrelation weights do not match the training set or hidden width",
                ));
            }
        }
        let plan = TmrPlan::new(&scores, &partition)?;
        Ok(TmrModel {
            layers,
            classifier_w,
            classifier_b,
            lcd,
            scores,
            partition,
            plan,
            train_idx,
            freeze_beta,
        })
    }

    /// Influence scores, neighbour partition and a seeded initialization for
    /// `graph` under `cfg`.
    pub fn init(
        rng: &mut impl Rng,
        graph: &MultiRelationGraph,
        split: &SplitAssignment,
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        let scores = if cfg.ablation.uniform_propagation {
            InfluenceScores::uniform(graph.num_nodes(), graph.relations().len())
        } else {
            compute_influence(graph, split, &cfg.gpr)?
        };
        let partition = partition_neighbors(graph, split);
        let mut dims = vec![graph.feature_dim()];
        dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.num_layers));
        let layers = dims
            .windows(2)
            .map(|d| TmrLayerParams::init(rng, d[0], d[1], Activation::LeakyRelu))
            .collect();
        let classifier_w = glorot(rng, cfg.hidden_dim, 2);
        let train_idx = split.indices(SplitTag::Train);
        let lcd = cfg
            .lcd_active()
            .then(|| LcdState::new(train_idx.len(), cfg.hidden_dim, cfg.lcd.clone()));
        Self::new(
            layers,
            classifier_w,
            Matrix::zeros(1, 2),
            lcd,
            scores,
            partition,
            train_idx,
            cfg.ablation.freeze_beta,
        )
    }

    pub fn scores(&self) -> &InfluenceScores {
        &self.scores
    }

    pub fn partition(&self) -> &NeighborPartition {
        &self.partition
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.train_idx
    }
}

impl Network for TmrModel {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.layers.iter().flat_map(|l| l.blocks()).collect();
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        if let Some(state) = &self.lcd {
            out.push(&state.u);
            if state.config.gamma_trainable {
                out.push(&state.gamma);
            }
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect();
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        if let Some(state) = &mut self.lcd {
            out.push(&mut state.u);
            if state.config.gamma_trainable {
                out.push(&mut state.gamma);
            }
        }
        out
    }

    fn forward(&self, tape: &mut Tape, features: &Matrix) -> Result<Forward> {
        let mut leaves = Vec::new();
        let mut h = tape.constant(features.clone());
        for layer in &self.layers {
            let vars = layer.to_tape(tape);
            leaves.extend(vars.all());
            h = tmr_forward(tape, h, &self.plan, &vars, self.freeze_beta)?;
        }
        let cw = tape.leaf(self.classifier_w.clone());
        let cb = tape.leaf(self.classifier_b.clone());
        leaves.extend([cw, cb]);
        let logits = linear(tape, h, cw, cb)?;
        let lcd = match &self.lcd {
            Some(state) => {
                let (w, gamma, lcd_leaves) = state.to_tape(tape);
                leaves.extend(lcd_leaves);
                Some((w, gamma))
            }
            None => None,
        };
        Ok(Forward {
            logits,
            hidden: h,
            leaves,
            lcd,
        })
    }

    fn lcd_config(&self) -> Option<&LcdConfig> {
        self.lcd.as_ref().map(|s| &s.config)
    }
}

/// Two mean-aggregation layers (self loop included) over the union of all
/// relations, then a linear classifier.
#[derive(Clone, Debug)]
pub struct GcnModel {
    pub weights: Vec<(Matrix, Matrix)>,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
    propagate: Rc<WeightedRows>,
}

impl GcnModel {
    pub fn init(rng: &mut impl Rng, graph: &MultiRelationGraph, cfg: &ExperimentConfig) -> Result<Self> {
        let union = graph.union_adjacency();
        let n = graph.num_nodes();
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut l = union.neighbors(i).to_vec();
                l.push(i);
                l
            })
            .collect();
        let propagate = Rc::new(WeightedRows::weighted_mean(&lists, &vec![1.0; n]));
        let mut weights = Vec::new();
        let mut d_in = graph.feature_dim();
        for _ in 0..2 {
            weights.push((glorot(rng, d_in, cfg.hidden_dim), Matrix::zeros(1, cfg.hidden_dim)));
            d_in = cfg.hidden_dim;
        }
        Ok(GcnModel {
            weights,
            classifier_w: glorot(rng, cfg.hidden_dim, 2),
            classifier_b: Matrix::zeros(1, 2),
            propagate,
        })
    }
}

impl Network for GcnModel {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.weights.iter().flat_map(|(w, b)| [w, b]).collect();
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.weights.iter_mut().flat_map(|(w, b)| [w, b]).collect();
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    fn forward(&self, tape: &mut Tape, features: &Matrix) -> Result<Forward> {
        let mut leaves = Vec::new();
        let mut h = tape.constant(features.clone());
        for (w, b) in &self.weights {
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            leaves.extend([wv, bv]);
            let agg = tape.aggregate(h, self.propagate.clone())?;
            let z = linear(tape, agg, wv, bv)?;
            h = Activation::LeakyRelu.apply(tape, z);
        }
        let cw = tape.leaf(self.classifier_w.clone());
        let cb = tape.leaf(self.classifier_b.clone());
        leaves.extend([cw, cb]);
        let logits = linear(tape, h, cw, cb)?;
        Ok(Forward {
            logits,
            hidden: h,
            leaves,
            lcd: None,
        })
    }
}

/// Either network, chosen by [`ModelKind`].
#[derive(Clone, Debug)]
pub enum AnyModel {
    Mimbfd(TmrModel),
    Gcn(GcnModel),
}

impl AnyModel {
    pub fn init(
        rng: &mut impl Rng,
        graph: &MultiRelationGraph,
        split: &SplitAssignment,
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Mimbfd => AnyModel::Mimbfd(TmrModel::init(rng, graph, split, cfg)?),
            ModelKind::Gcn => AnyModel::Gcn(GcnModel::init(rng, graph, cfg)?),
        })
    }

    fn inner(&self) -> &dyn Network {
        match self {
            AnyModel::Mimbfd(m) => m,
            AnyModel::Gcn(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Network {
        match self {
            AnyModel::Mimbfd(m) => m,
            AnyModel::Gcn(m) => m,
        }
    }
}

impl Network for AnyModel {
    fn parameters(&self) -> Vec<&Matrix> {
        self.inner().parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.inner_mut().parameters_mut()
    }

    fn forward(&self, tape: &mut Tape, features: &Matrix) -> Result<Forward> {
        self.inner().forward(tape, features)
    }

    fn lcd_config(&self) -> Option<&LcdConfig> {
        self.inner().lcd_config()
    }
}

/// Mean two-class cross-entropy over the rows `train_idx` of `logits`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, train_idx: &[usize], classes: &[usize]) -> Result<Var> {
    if train_idx.is_empty() {
        return Err(Error::Config("no training nodes for the classification loss".into()));
    }
    let rows = tape.gather_rows(logits, train_idx)?;
    let logp = tape.log_softmax(rows);
    let picked = tape.pick(logp, classes)?;
    let mean = tape.mean_all(picked)?;
    Ok(tape.scale(mean, -1.0))
}

/// Cross-entropy plus `eta` times the decorrelation loss of the training rows
/// of the hidden representation. Reduces to the cross-entropy node itself when
/// `eta` is zero or the model has no decorrelation weights.
pub fn total_loss(
    tape: &mut Tape,
    fwd: &Forward,
    train_idx: &[usize],
    classes: &[usize],
    lcd: Option<&LcdConfig>,
    eta: f64,
) -> Result<Var> {
    let ce = cross_entropy(tape, fwd.logits, train_idx, classes)?;
    match (fwd.lcd, lcd) {
        (Some((w, gamma)), Some(cfg)) if eta > 0.0 => {
            let h_train = tape.gather_rows(fwd.hidden, train_idx)?;
            let reg = lcd_loss(tape, h_train, w, gamma, cfg)?;
            let reg = tape.scale(reg, eta);
            tape.add(ce, reg)
        }
        _ => Ok(ce),
    }
}

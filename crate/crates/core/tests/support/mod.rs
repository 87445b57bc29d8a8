//! Fixtures shared by the integration tests of both crates.
#![allow(dead_code)]

use std::rc::Rc;

use mimbfd_core::autodiff::gradcheck::{check_gradients, GradCheckReport};
use mimbfd_core::autodiff::WeightedRows;
use mimbfd_core::gpr::compute_influence;
use mimbfd_core::graph::stratified_split;
use mimbfd_core::lcd::{lcd_loss, LcdConfig, LcdVariant};
use mimbfd_core::model::cross_entropy;
use mimbfd_core::tmr::{partition_neighbors, tmr_forward, Activation, LayerVars, TmrLayerParams, TmrPlan};
use mimbfd_core::{
    GprConfig, Label, Matrix, MultiRelationGraph, RelationAdjacency, Result, SplitAssignment, Tape, Var,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Inputs are redrawn until every kink sits at least this far away.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Entries bounded away from zero, for ops with a kink there.
pub fn off_zero_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn random_adjacency(rng: &mut impl Rng, n: usize, edge_prob: f64) -> RelationAdjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    RelationAdjacency::from_edges(n, &edges).unwrap()
}

/// Random labels with at least `min_per_class` nodes of each class and
/// roughly a tenth unknown.
pub fn random_labels(rng: &mut impl Rng, n: usize, min_per_class: usize) -> Vec<Label> {
    let mut labels: Vec<Label> = (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => Label::Unknown,
            1..=3 => Label::Fraud,
            _ => Label::Benign,
        })
        .collect();
    for (k, l) in labels.iter_mut().take(2 * min_per_class).enumerate() {
        *l = if k % 2 == 0 { Label::Benign } else { Label::Fraud };
    }
    labels.shuffle(rng);
    labels
}

pub fn random_graph(
    rng: &mut impl Rng,
    n: usize,
    num_relations: usize,
    edge_prob: f64,
    feature_dim: usize,
) -> MultiRelationGraph {
    let relations = (0..num_relations).map(|_| random_adjacency(rng, n, edge_prob)).collect();
    let names = (0..num_relations).map(|r| format!("r{r}")).collect();
    let features = random_matrix(rng, n, feature_dim);
    let labels = random_labels(rng, n, 3);
    MultiRelationGraph::new(features, relations, names, labels).unwrap()
}

/// A 3:1:1 split with enough labeled nodes of each class in every part.
pub fn split_for(graph: &MultiRelationGraph, seed: u64) -> SplitAssignment {
    stratified_split(graph, [0.6, 0.2, 0.2], seed).unwrap()
}

/// Pairwise counting: wins plus half the ties over all positive-negative
/// pairs.
pub fn brute_force_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / 2.0 / pairs as f64
}

/// Fixed non-uniform weights so that every output entry matters.
fn projection(rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|k| ((k * 37 + 11) % 23) as f64 / 23.0 - 0.45)
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Scalar `sum(out * W)` with a fixed `W` of the output's shape.
pub fn project(tape: &mut Tape, out: Var) -> Result<Var> {
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(projection(r, c));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum_all(prod))
}

/// Whether every kink of `f` at `inputs` is at least `KINK_MARGIN` away.
fn clear_of_kinks<F>(inputs: &[Matrix], f: &F) -> bool
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    f(&mut tape, &vars).unwrap();
    tape.nearest_kink().is_none_or(|d| d >= KINK_MARGIN)
}

fn case<F>(name: &'static str, inputs: Vec<Matrix>, f: F) -> (&'static str, GradCheckReport)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = check_gradients(&inputs, FD_STEP, f).unwrap_or_else(|e| panic!("{name}: {e}"));
    (name, report)
}

/// Every differentiable op plus the composite model pieces, with shapes and
/// values drawn from `seed`.
pub fn gradient_cases(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = rng(seed);
    let r = rng.random_range(1..5);
    let k = rng.random_range(1..5);
    let c = rng.random_range(2..5);
    let mut out = Vec::new();

    let a = random_matrix(&mut rng, r, k);
    let b = random_matrix(&mut rng, k, c);
    out.push(case("matmul", vec![a, b], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y)
    }));
    let a = random_matrix(&mut rng, r, c);
    let b = random_matrix(&mut rng, r, c);
    out.push(case("add", vec![a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y)
    }));
    out.push(case("sub", vec![a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y)
    }));
    out.push(case("mul", vec![a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y)
    }));
    let s = rng.random_range(-2.0..2.0);
    out.push(case("scale", vec![a.clone()], move |t, v| {
        let y = t.scale(v[0], s);
        project(t, y)
    }));
    let bias = random_matrix(&mut rng, 1, c);
    out.push(case("add_bias", vec![a.clone(), bias], |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y)
    }));
    let w = random_matrix(&mut rng, r, 1);
    out.push(case("scale_rows", vec![a.clone(), w], |t, v| {
        let y = t.scale_rows(v[0], v[1])?;
        project(t, y)
    }));
    let x = random_matrix(&mut rng, r, c).map(|v| 3.0 * v);
    out.push(case("sigmoid", vec![x.clone()], |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y)
    }));
    out.push(case("softplus", vec![x.clone()], |t, v| {
        let y = t.softplus(v[0]);
        project(t, y)
    }));
    let kinked = off_zero_matrix(&mut rng, r, c);
    out.push(case("leaky_relu", vec![kinked.clone()], |t, v| {
        let y = t.leaky_relu(v[0], 0.01);
        project(t, y)
    }));
    out.push(case("abs", vec![kinked], |t, v| {
        let y = t.abs(v[0]);
        project(t, y)
    }));
    out.push(case("square", vec![x.clone()], |t, v| {
        let y = t.square(v[0]);
        project(t, y)
    }));
    let left = random_matrix(&mut rng, r, k);
    out.push(case("concat_cols", vec![left, a.clone()], |t, v| {
        let y = t.concat_cols(&[v[0], v[1]])?;
        project(t, y)
    }));
    out.push(case("mean_rows", vec![a.clone()], |t, v| {
        let y = t.mean_rows(v[0])?;
        project(t, y)
    }));
    out.push(case("sum_cols", vec![a.clone()], |t, v| {
        let y = t.sum_cols(v[0]);
        project(t, y)
    }));
    out.push(case("sum_all", vec![a.clone()], |t, v| {
        let y = t.sum_all(v[0]);
        project(t, y)
    }));
    out.push(case("mean_all", vec![a.clone()], |t, v| {
        let y = t.mean_all(v[0])?;
        project(t, y)
    }));
    out.push(case("transpose", vec![a.clone()], |t, v| {
        let y = t.transpose(v[0]);
        project(t, y)
    }));
    let rows: Vec<usize> = (0..r + 2).map(|_| rng.random_range(0..r)).collect();
    out.push(case("gather_rows", vec![a.clone()], move |t, v| {
        let y = t.gather_rows(v[0], &rows)?;
        project(t, y)
    }));
    let cols: Vec<usize> = (0..c + 1).map(|_| rng.random_range(0..c)).collect();
    out.push(case("gather_cols", vec![a.clone()], move |t, v| {
        let y = t.gather_cols(v[0], &cols)?;
        project(t, y)
    }));
    let entries: Vec<Vec<(usize, f64)>> = (0..r + 1)
        .map(|_| {
            (0..rng.random_range(0..4))
                .map(|_| (rng.random_range(0..r), rng.random_range(0.1..1.0)))
                .collect()
        })
        .collect();
    let op = Rc::new(WeightedRows::from_entries(r, &entries).unwrap());
    out.push(case("aggregate", vec![a.clone()], move |t, v| {
        let y = t.aggregate(v[0], op.clone())?;
        project(t, y)
    }));
    out.push(case("log_softmax", vec![x.clone()], |t, v| {
        let y = t.log_softmax(v[0]);
        project(t, y)
    }));
    let picks: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
    out.push(case("pick", vec![x.clone()], move |t, v| {
        let y = t.pick(v[0], &picks)?;
        project(t, y)
    }));

    let logits = random_matrix(&mut rng, 6, 2).map(|v| 2.0 * v);
    let classes: Vec<usize> = (0..4).map(|i| i % 2).collect();
    out.push(case("cross_entropy", vec![logits], move |t, v| {
        cross_entropy(t, v[0], &[0, 2, 3, 5], &classes)
    }));

    for (name, variant, trainable) in [
        ("lcd_sq_outside", LcdVariant::SqOutside, false),
        ("lcd_sq_inside", LcdVariant::SqInside, false),
        ("lcd_trainable_gamma", LcdVariant::SqOutside, true),
    ] {
        let cfg = LcdConfig {
            variant,
            gamma_trainable: trainable,
            ..LcdConfig::default()
        };
        let f = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
            let w = t.softplus(v[1]);
            let gamma = t.softplus(v[2]);
            lcd_loss(t, v[0], w, gamma, &cfg)
        };
        let n = rng.random_range(3..8);
        let p = rng.random_range(2..5);
        let inputs = loop {
            let h = random_matrix(&mut rng, n, p);
            let u = random_matrix(&mut rng, n, 1);
            let g = random_matrix(&mut rng, 1, p - 1);
            let inputs = vec![h, u, g];
            if clear_of_kinks(&inputs, &f) {
                break inputs;
            }
        };
        out.push(case(name, inputs, f));
    }

    out.push(tmr_stack_case(&mut rng, seed));
    out
}

/// Two stacked layers, a linear classifier, cross-entropy and the
/// decorrelation term on a 12-node graph, differentiated with respect to the
/// input features and every parameter.
fn tmr_stack_case(rng: &mut ChaCha8Rng, seed: u64) -> (&'static str, GradCheckReport) {
    let graph = random_graph(rng, 12, 2, 0.3, 3);
    let split = split_for(&graph, seed);
    let scores = compute_influence(&graph, &split, &GprConfig::default()).unwrap();
    let plan = TmrPlan::new(&scores, &partition_neighbors(&graph, &split)).unwrap();
    let train: Vec<usize> = (0..12).filter(|&i| split.tag(i) == mimbfd_core::SplitTag::Train).collect();
    let classes: Vec<usize> = train.iter().map(|&i| graph.labels()[i].class().unwrap()).collect();

    let lcd = LcdConfig::default();
    let num_train = train.len();
    let f = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let layer = |blocks: &[Var]| LayerVars {
            w_self: blocks[0],
            b_self: blocks[1],
            w_beta: blocks[2],
            b_beta: blocks[3],
            w_fuse: blocks[4],
            b_fuse: blocks[5],
            activation: Activation::LeakyRelu,
        };
        let h1 = tmr_forward(t, v[0], &plan, &layer(&v[1..7]), false)?;
        let h2 = tmr_forward(t, h1, &plan, &layer(&v[7..13]), false)?;
        let z = t.matmul(h2, v[13])?;
        let logits = t.add_bias(z, v[14])?;
        let ce = cross_entropy(t, logits, &train, &classes)?;
        let h_train = t.gather_rows(h2, &train)?;
        let w = t.softplus(v[15]);
        let gamma = t.constant(Matrix::filled(1, 2, 1.0));
        let reg = lcd_loss(t, h_train, w, gamma, &lcd)?;
        let reg = t.scale(reg, 0.5);
        t.add(ce, reg)
    };
    loop {
        let l1 = TmrLayerParams::init(rng, 3, 4, Activation::LeakyRelu);
        let l2 = TmrLayerParams::init(rng, 4, 3, Activation::LeakyRelu);
        let mut inputs = vec![graph.features().clone()];
        inputs.extend(l1.blocks().into_iter().cloned());
        inputs.extend(l2.blocks().into_iter().cloned());
        inputs.push(random_matrix(rng, 3, 2));
        inputs.push(random_matrix(rng, 1, 2));
        inputs.push(random_matrix(rng, num_train, 1));
        if clear_of_kinks(&inputs, &f) {
            return case("tmr_stack", inputs, f);
        }
    }
}

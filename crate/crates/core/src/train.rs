//! Full-batch training with early stopping on validation AUC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Matrix, Tape};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graph::{stratified_split, Label, MultiRelationGraph, SplitAssignment, SplitTag};
use crate::metrics::{roc_auc, Metrics};
use crate::model::{total_loss, AnyModel, Network};

const INIT_SALT: u64 = 0x5eed_1a7e_0000_0001;

/// Seed of the parameter initialization for a run seeded with `seed`.
pub fn init_seed(seed: u64) -> u64 {
    seed ^ INIT_SALT
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub trace: Vec<TraceRow>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
}

/// Class indices and row indices of the nodes tagged `tag`.
fn labeled_rows(graph: &MultiRelationGraph, split: &SplitAssignment, tag: SplitTag) -> Result<(Vec<usize>, Vec<usize>)> {
    let idx = split.indices(tag);
    let mut classes = Vec::with_capacity(idx.len());
    for &i in &idx {
        match graph.labels()[i].class() {
            Some(c) => classes.push(c),
            None => {
                return Err(Error::Contract(format!(
                    "node {i} is in the {tag:?} split but has no label"
                )))
            }
        }
    }
    Ok((idx, classes))
}

/// Softmax probability of the fraud class for every row of `logits`.
pub fn fraud_probabilities(logits: &Matrix) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let (b, f) = (logits[(i, 0)], logits[(i, 1)]);
            1.0 / (1.0 + (b - f).exp())
        })
        .collect()
}

fn auc_on(probs: &[f64], idx: &[usize], classes: &[usize]) -> Result<f64> {
    let scores: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
    let positive: Vec<bool> = classes.iter().map(|&c| c == Label::Fraud.class().unwrap()).collect();
    roc_auc(&scores, &positive)
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} at epoch {epoch}")),
        other => other,
    }
}

/// Trains `model` in place and restores the parameters of the epoch with the
/// best validation AUC.
pub fn fit<N: Network>(
    model: &mut N,
    graph: &MultiRelationGraph,
    split: &SplitAssignment,
    cfg: &ExperimentConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let (train_idx, train_classes) = labeled_rows(graph, split, SplitTag::Train)?;
    let (val_idx, val_classes) = labeled_rows(graph, split, SplitTag::Val)?;
    let mut adam = Adam::new(cfg.adam);
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, graph.features())?;
        let loss = total_loss(&mut tape, &fwd, &train_idx, &train_classes, model.lcd_config(), cfg.eta)?;
        let train_loss = tape.value(loss).item().expect("scalar loss");
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss is {train_loss} at epoch {epoch}")));
        }
        tape.backward(loss)?;
        let grads: Vec<Matrix> = fwd
            .leaves
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = tape.value(v).shape();
                    Matrix::zeros(r, c)
                }
            })
            .collect();
        let grad_refs: Vec<&Matrix> = grads.iter().collect();
        let mut params = model.parameters_mut();
        adam.step(&mut params, &grad_refs).map_err(|e| at_epoch(e, epoch))?;

        // Validation sees the parameters after this epoch's update.
        let (logits, _) = model.predict(graph.features())?;
        let val_auc = auc_on(&fraud_probabilities(&logits), &val_idx, &val_classes).map_err(|e| at_epoch(e, epoch))?;
        trace.push(TraceRow {
            epoch,
            train_loss,
            val_auc,
        });
        if best.as_ref().is_none_or(|b| val_auc > b.1) {
            let snapshot = model.parameters().into_iter().cloned().collect();
            best = Some((epoch, val_auc, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_auc, snapshot) = best.expect("at least one epoch");
    model.load_parameters(snapshot)?;
    Ok(FitOutcome {
        epochs_run: trace.len(),
        trace,
        best_epoch,
        best_val_auc,
    })
}

/// Metrics of `model` on the nodes tagged `tag`.
pub fn evaluate<N: Network>(
    model: &N,
    graph: &MultiRelationGraph,
    split: &SplitAssignment,
    tag: SplitTag,
) -> Result<Metrics> {
    let (idx, classes) = labeled_rows(graph, split, tag)?;
    let (logits, _) = model.predict(graph.features())?;
    let probs = fraud_probabilities(&logits);
    let fraud = Label::Fraud.class().unwrap();
    let scores: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
    let predicted: Vec<bool> = idx.iter().map(|&i| logits[(i, 1)] > logits[(i, 0)]).collect();
    let truth: Vec<bool> = classes.iter().map(|&c| c == fraud).collect();
    Metrics::compute(&scores, &predicted, &truth)
}

/// Everything produced by one seeded training run.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: AnyModel,
    pub split: SplitAssignment,
    pub fit: FitOutcome,
    pub val: Metrics,
    pub test: Metrics,
}

/// Split, initialize, train and evaluate under `cfg`.
pub fn train_run(graph: &MultiRelationGraph, cfg: &ExperimentConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let split = stratified_split(graph, cfg.split, cfg.seed)?;
    train_with_split(graph, split, cfg)
}

/// The untrained model a run seeded with `cfg.seed` starts from.
pub fn init_model(graph: &MultiRelationGraph, split: &SplitAssignment, cfg: &ExperimentConfig) -> Result<AnyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed(cfg.seed));
    AnyModel::init(&mut rng, graph, split, cfg)
}

pub fn train_with_split(graph: &MultiRelationGraph, split: SplitAssignment, cfg: &ExperimentConfig) -> Result<TrainedRun> {
    let mut model = init_model(graph, &split, cfg)?;
    let fit = fit(&mut model, graph, &split, cfg)?;
    let val = evaluate(&model, graph, &split, SplitTag::Val)?;
    let test = evaluate(&model, graph, &split, SplitTag::Test)?;
    Ok(TrainedRun {
        model,
        split,
        fit,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraud_probability_is_softmax_of_class_one() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 2.0_f64.ln()]]).unwrap();
        let p = fraud_probabilities(&logits);
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_seed_differs_from_split_seed() {
        assert_ne!(init_seed(0), 0);
        assert_ne!(init_seed(1), init_seed(2));
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from sorted ranks; exact for any input with
/// fewer than 2^26 items per class.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} scores for {} labels", scores.len(), positive.len()),
        ));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} cannot be ranked")));
    }
    let num_pos = positive.iter().filter(|p| **p).count() as u64;
    let num_neg = positive.len() as u64 - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::Config(
            "AUC is undefined when the evaluated set contains a single class".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the Mann-Whitney U statistic, kept integral.
    let mut twice_wins: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let pos_in_group = group.iter().filter(|&&i| positive[i]).count() as u64;
        let neg_in_group = group.len() as u64 - pos_in_group;
        twice_wins += pos_in_group * (2 * negatives_below + neg_in_group);
        negatives_below += neg_in_group;
        start = end;
    }
    Ok(twice_wins as f64 / 2.0 / (num_pos * num_neg) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

impl Confusion {
    /// Positive class is fraud.
    pub fn from_predictions(predicted_fraud: &[bool], is_fraud: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted_fraud.iter().zip(is_fraud) {
            match (p, t) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, false) => c.true_negative += 1,
                (false, true) => c.false_negative += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn fraud_recall(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn benign_recall(&self) -> f64 {
        ratio(self.true_negative, self.true_negative + self.false_positive)
    }

    pub fn macro_recall(&self) -> f64 {
        (self.fraud_recall() + self.benign_recall()) / 2.0
    }

    pub fn fraud_precision(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    pub fn fraud_f1(&self) -> f64 {
        f1(self.true_positive, self.false_positive, self.false_negative)
    }

    pub fn benign_f1(&self) -> f64 {
        f1(self.true_negative, self.false_negative, self.false_positive)
    }

    pub fn macro_f1(&self) -> f64 {
        (self.fraud_f1() + self.benign_f1()) / 2.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Scores of one evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    /// Fraud-class recall.
    pub recall: f64,
    pub recall_macro: f64,
    /// Macro F1 over both classes.
    pub f1: f64,
    pub f1_fraud: f64,
    pub confusion: Confusion,
}

impl Metrics {
    /// `fraud_scores` rank nodes for AUC; `predicted_fraud` are the hard
    /// labels (argmax of the logits).
    pub fn compute(fraud_scores: &[f64], predicted_fraud: &[bool], is_fraud: &[bool]) -> Result<Self> {
        let auc = roc_auc(fraud_scores, is_fraud)?;
        let confusion = Confusion::from_predictions(predicted_fraud, is_fraud);
        Ok(Metrics {
            auc,
            recall: confusion.fraud_recall(),
            recall_macro: confusion.macro_recall(),
            f1: confusion.macro_f1(),
            f1_fraud: confusion.fraud_f1(),
            confusion,
        })
    }
}

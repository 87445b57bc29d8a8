//! Run recipes and the files they leave behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{ExperimentConfig, ModelKind, TmrAblation};
use crate::error::{Error, Result};
use crate::graph::{resample_imbalance, Label, MultiRelationGraph, ResampleSpec};
use crate::metrics::Confusion;
use crate::model::Network;
use crate::train::{train_run, TrainedRun};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const CHECKPOINT_FILE: &str = "model.mfd";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Test-split scores of one run. Contains nothing that varies between two
/// runs of the same configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub model: ModelKind,
    pub seed: u64,
    pub config_hash: String,
    pub auc: f64,
    /// Fraud-class recall.
    pub recall: f64,
    pub recall_macro: f64,
    /// Macro F1.
    pub f1: f64,
    pub f1_fraud: f64,
    pub confusion: Confusion,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub labeled_benign: usize,
    pub labeled_fraud: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<u32>,
}

impl Report {
    pub fn new(graph: &MultiRelationGraph, cfg: &ExperimentConfig, run: &TrainedRun) -> Self {
        let m = &run.test;
        Report {
            label: cfg.label.clone(),
            model: cfg.model,
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
            auc: m.auc,
            recall: m.recall,
            recall_macro: m.recall_macro,
            f1: m.f1,
            f1_fraud: m.f1_fraud,
            confusion: m.confusion,
            epochs_run: run.fit.epochs_run,
            best_epoch: run.fit.best_epoch,
            best_val_auc: run.fit.best_val_auc,
            labeled_benign: graph.class_count(Label::Benign),
            labeled_fraud: graph.class_count(Label::Fraud),
            rho: None,
        }
    }
}

/// Record of one invocation: what ran, with which resolved configuration,
/// what it wrote and how long it took.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub config_hash: String,
    pub artifacts: Vec<PathBuf>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn for_experiment(command: &str, cfg: &ExperimentConfig, artifacts: Vec<PathBuf>, wall_time_secs: f64) -> Self {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
            artifacts,
            wall_time_secs,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(text + "\n"))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn trace_tsv(run: &TrainedRun) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_auc\n");
    for row in &run.fit.trace {
        let _ = writeln!(out, "{}\t{}\t{}", row.epoch, row.train_loss, row.val_auc);
    }
    out
}

pub fn embeddings_tsv(graph: &MultiRelationGraph, run: &TrainedRun) -> Result<String> {
    let (_, hidden) = run.model.predict(graph.features())?;
    let mut out = String::from("node_id\tlabel");
    for k in 1..=hidden.cols() {
        let _ = write!(out, "\th_{k}");
    }
    out.push('\n');
    for i in 0..hidden.rows() {
        let _ = write!(out, "{i}\t{}", graph.labels()[i].code());
        for v in hidden.row(i) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes report, trace, embeddings, checkpoint and the resolved config into
/// `dir`. Returns the paths written.
pub fn write_run(dir: &Path, graph: &MultiRelationGraph, cfg: &ExperimentConfig, run: &TrainedRun, report: &Report) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let paths: Vec<PathBuf> = [REPORT_FILE, TRACE_FILE, EMBEDDINGS_FILE, CHECKPOINT_FILE, CONFIG_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_json(&paths[0], report)?;
    write_text(&paths[1], &trace_tsv(run))?;
    write_text(&paths[2], &embeddings_tsv(graph, run)?)?;
    checkpoint::save(&paths[3], &run.model.parameters())?;
    write_json(&paths[4], cfg)?;
    Ok(paths)
}

/// Trains under `cfg` and writes the run into `dir`.
pub fn train_to_dir(graph: &MultiRelationGraph, cfg: &ExperimentConfig, dir: &Path) -> Result<(Report, Vec<PathBuf>)> {
    let run = train_run(graph, cfg)?;
    let report = Report::new(graph, cfg, &run);
    let paths = write_run(dir, graph, cfg, &run, &report)?;
    Ok((report, paths))
}

/// Configuration of an ablated variant. Only `label` differs from the
/// equivalent hand-written configuration.
pub fn ablated(cfg: &ExperimentConfig, without: Ablation) -> ExperimentConfig {
    let mut out = cfg.clone();
    match without {
        Ablation::Lcd => out.eta = 0.0,
        Ablation::Tmr => out.ablation = TmrAblation::without_tmr(),
    }
    out.label = format!("ablate-{}", without.name());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Lcd,
    Tmr,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Lcd => "lcd",
            Ablation::Tmr => "tmr",
        }
    }
}

/// Labels masked to a `rho`:1 benign-to-fraud ratio, then MimbFD and the GCN
/// baseline trained on the same split. Reports carry `rho`.
pub fn case_study_point(
    graph: &MultiRelationGraph,
    cfg: &ExperimentConfig,
    rho: u32,
) -> Result<(MultiRelationGraph, Vec<(ExperimentConfig, TrainedRun, Report)>)> {
    let masked = resample_imbalance(graph, ResampleSpec { rho, seed: cfg.seed })?;
    let mut out = Vec::new();
    for model in [ModelKind::Mimbfd, ModelKind::Gcn] {
        let mut c = cfg.clone();
        c.model = model;
        c.label = format!("case-study-rho{rho}");
        let run = train_run(&masked, &c)?;
        let mut report = Report::new(&masked, &c, &run);
        report.rho = Some(rho);
        out.push((c, run, report));
    }
    Ok((masked, out))
}

pub fn model_dir_name(model: ModelKind) -> &'static str {
    match model {
        ModelKind::Mimbfd => "mimbfd",
        ModelKind::Gcn => "gcn",
    }
}

/// Mean of `f` over `reports`.
pub fn mean_of(reports: &[Report], f: impl Fn(&Report) -> f64) -> f64 {
    reports.iter().map(f).sum::<f64>() / reports.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablating_lcd_matches_eta_zero_up_to_label() {
        let base = ExperimentConfig::default();
        let a = ablated(&base, Ablation::Lcd);
        let mut b = base.clone();
        b.eta = 0.0;
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), base.config_hash());
        assert_eq!(a.label, "ablate-lcd");
        let t = ablated(&base, Ablation::Tmr);
        assert!(t.ablation.freeze_beta && t.ablation.uniform_propagation);
    }
}

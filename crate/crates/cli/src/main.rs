use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seed::resolve_seed;
use serde::Serialize;

use mimbfd_core::experiment::{
    ablated, case_study_point, create_dir, mean_of, model_dir_name, train_to_dir, write_json, write_run,
    Ablation, Report, RunManifest, CHECKPOINT_FILE, CONFIG_FILE, MANIFEST_FILE,
};
use mimbfd_core::gpr::{compute_influence, GprConfig};
use mimbfd_core::graph::{load_graph, stratified_split};
use mimbfd_core::profile::{
    closeness_centrality, degree_centrality, fraud_trend, neighbor_composition_histogram, Centrality, GraphView,
};
use mimbfd_core::synth::{calibrate, generate, write_synth, SynthSpec};
use mimbfd_core::train::init_model;
use mimbfd_core::{checkpoint, evaluate, Error, ExperimentConfig, ModelKind, Network, Result, SplitTag};

mod seed;

#[derive(Parser)]
#[command(name = "mimbfd", version, about = "Multi-relation imbalanced fraud detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Output {
    /// Directory that receives every file the command writes.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; falls back to the config file, then MIMBFD_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Mimbfd,
    Gcn,
}

#[derive(Args, Clone)]
struct Experiment {
    /// JSON experiment configuration. Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph directory (nodes.tsv plus one edge file per relation).
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Weight of the decorrelation loss.
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    /// Restart probability of the reachability scores.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Train, validation and test proportions, e.g. 0.4,0.2,0.4.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Lcd,
    Tmr,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Cc,
    Dc,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled graph.
    Synth {
        #[command(flatten)]
        output: Output,
        /// JSON generator spec. Flags override its values.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        fraud_fraction: Option<f64>,
        #[arg(long)]
        num_relations: Option<usize>,
        #[arg(long)]
        mean_degree: Option<f64>,
        #[arg(long)]
        homophily_benign: Option<f64>,
        #[arg(long)]
        homophily_fraud: Option<f64>,
        #[arg(long)]
        camouflage_rate: Option<f64>,
        #[arg(long)]
        low_cc_bias: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        /// Also write calibration.json with realized statistics.
        #[arg(long)]
        calibrate: bool,
    },
    /// Write per-relation reachability scores.
    Gpr {
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        experiment: Experiment,
    },
    /// Histogram of benign neighbourhoods by centrality.
    Profile {
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "cc")]
        metric: MetricArg,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// A relation name, or `union` for all relations together.
        #[arg(long, default_value = "union")]
        relation: String,
    },
    /// Train one model and write its report, trace, embeddings and checkpoint.
    Train {
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        experiment: Experiment,
    },
    /// Score a trained run directory on a split of a graph.
    Eval {
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        graph: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train once per decorrelation weight.
    SweepEta {
        #[arg(value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        num_seeds: u64,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        experiment: Experiment,
    },
    /// Mask labels to fixed imbalance ratios and compare against the GCN baseline.
    CaseStudy {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        rho: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        num_seeds: u64,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        experiment: Experiment,
    },
    /// Train a variant with one component removed.
    Ablate {
        #[arg(long, value_enum)]
        without: AblationArg,
        #[arg(long, default_value_t = 1)]
        num_seeds: u64,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        experiment: Experiment,
    },
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    let format = |e: serde_json::Error| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(format)?;
    let parsed = serde_json::from_value(value.clone()).map_err(format)?;
    Ok((parsed, value))
}

fn resolve_config(exp: &Experiment, output: &Output) -> Result<ExperimentConfig> {
    let (mut cfg, file_seed) = match &exp.config {
        Some(path) => {
            let (cfg, raw): (ExperimentConfig, _) = load_json(path)?;
            let has_seed = raw.get("seed").is_some();
            let seed = cfg.seed;
            (cfg, has_seed.then_some(seed))
        }
        None => (ExperimentConfig::default(), None),
    };
    cfg.seed = resolve_seed(output.seed, file_seed)?;
    if let Some(v) = &exp.label {
        cfg.label = v.clone();
    }
    if let Some(m) = exp.model {
        cfg.model = match m {
            ModelArg::Mimbfd => ModelKind::Mimbfd,
            ModelArg::Gcn => ModelKind::Gcn,
        };
    }
    if let Some(v) = exp.eta {
        cfg.eta = v;
    }
    if let Some(v) = exp.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = exp.patience {
        cfg.patience = v;
    }
    if let Some(v) = exp.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = exp.hidden_dim {
        cfg.hidden_dim = v;
    }
    if let Some(v) = exp.num_layers {
        cfg.num_layers = v;
    }
    if let Some(v) = exp.alpha {
        cfg.gpr.alpha = v;
    }
    if let Some(v) = &exp.split {
        cfg.split = <[f64; 3]>::try_from(v.as_slice())
            .map_err(|_| Error::Config(format!("--split needs three proportions, got {}", v.len())))?;
    }
    if let Some(g) = &exp.graph {
        cfg.paths.graph = Some(g.clone());
    }
    cfg.paths.out = Some(output.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn graph_path(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.paths
        .graph
        .clone()
        .ok_or_else(|| Error::Config("no graph given; pass --graph or set paths.graph in the config".into()))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

/// Trains one run into `dir` and writes its manifest.
fn single_run(command: &str, graph: &mimbfd_core::MultiRelationGraph, cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let (report, paths) = train_to_dir(graph, cfg, dir)?;
    let manifest = RunManifest::for_experiment(command, cfg, paths, start.elapsed().as_secs_f64());
    write_manifest(dir, &manifest)?;
    println!(
        "{} seed {}: auc {:.4} recall {:.4} f1 {:.4} ({} epochs)",
        dir.display(),
        cfg.seed,
        report.auc,
        report.recall,
        report.f1,
        report.epochs_run
    );
    Ok(report)
}

fn seed_dir(base: &Path, seed: u64, num_seeds: u64) -> PathBuf {
    if num_seeds > 1 {
        base.join(format!("seed{seed}"))
    } else {
        base.to_path_buf()
    }
}

#[derive(Serialize)]
struct GroupSummary {
    name: String,
    runs: usize,
    mean_auc: f64,
    mean_recall: f64,
    mean_f1: f64,
}

fn summarize(name: String, reports: &[Report]) -> GroupSummary {
    GroupSummary {
        name,
        runs: reports.len(),
        mean_auc: mean_of(reports, |r| r.auc),
        mean_recall: mean_of(reports, |r| r.recall),
        mean_f1: mean_of(reports, |r| r.f1),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            output,
            spec,
            n,
            fraud_fraction,
            num_relations,
            mean_degree,
            homophily_benign,
            homophily_fraud,
            camouflage_rate,
            low_cc_bias,
            feature_dim,
            separation,
            calibrate: with_calibration,
        } => {
            let start = Instant::now();
            let (mut s, file_seed) = match &spec {
                Some(path) => {
                    let (s, raw): (SynthSpec, _) = load_json(path)?;
                    let seed = s.seed;
                    (s, raw.get("seed").is_some().then_some(seed))
                }
                None => (SynthSpec::default(), None),
            };
            s.seed = resolve_seed(output.seed, file_seed)?;
            macro_rules! apply {
                ($($flag:ident => $field:ident),*) => {
                    $(if let Some(v) = $flag { s.$field = v; })*
                };
            }
            apply!(
                n => n,
                fraud_fraction => fraud_fraction,
                num_relations => num_relations,
                mean_degree => mean_degree,
                homophily_benign => homophily_benign,
                homophily_fraud => homophily_fraud,
                camouflage_rate => camouflage_rate,
                low_cc_bias => low_cc_bias,
                feature_dim => feature_dim,
                separation => class_mean_separation
            );
            let graph = generate(&s)?;
            write_synth(&graph, &s, &output.out)?;
            let mut artifacts: Vec<PathBuf> = std::fs::read_dir(&output.out)
                .map_err(|source| Error::Load {
                    path: output.out.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().is_some_and(|f| f != MANIFEST_FILE))
                .collect();
            if with_calibration {
                let report = calibrate(&s)?;
                let path = output.out.join("calibration.json");
                write_json(&path, &report)?;
                artifacts.push(path);
                println!(
                    "fraud fraction {:.4}, union mean degree {:.2}, feature oracle auc {:.4}",
                    report.fraud_fraction, report.union_mean_degree, report.feature_oracle_auc
                );
            }
            artifacts.sort();
            artifacts.dedup();
            let manifest = RunManifest {
                command: "synth".into(),
                config: serde_json::to_value(&s).expect("spec serializes"),
                seed: s.seed,
                config_hash: s.spec_hash(),
                artifacts,
                wall_time_secs: start.elapsed().as_secs_f64(),
            };
            write_manifest(&output.out, &manifest)
        }
        Command::Gpr { output, experiment } => {
            let start = Instant::now();
            let cfg = resolve_config(&experiment, &output)?;
            let graph = load_graph(graph_path(&cfg)?)?;
            let split = stratified_split(&graph, cfg.split, cfg.seed)?;
            let gpr: &GprConfig = &cfg.gpr;
            let scores = compute_influence(&graph, &split, gpr)?;
            create_dir(&output.out)?;
            let mut artifacts = Vec::new();
            for (name, rel) in graph.relation_names().iter().zip(scores.relations()) {
                let mut text = String::from("node_id\tg_benign\tg_fraud\tp_benign\tp_fraud\n");
                for i in 0..graph.num_nodes() {
                    text += &format!(
                        "{i}\t{}\t{}\t{}\t{}\n",
                        rel.g[(i, 0)],
                        rel.g[(i, 1)],
                        rel.p[(i, 0)],
                        rel.p[(i, 1)]
                    );
                }
                let path = output.out.join(format!("gpr_{name}.tsv"));
                std::fs::write(&path, text).map_err(|source| Error::Write {
                    path: path.clone(),
                    source,
                })?;
                println!("{name}: converged in {:?} iterations", rel.converged_iters);
                artifacts.push(path);
            }
            write_manifest(
                &output.out,
                &RunManifest::for_experiment("gpr", &cfg, artifacts, start.elapsed().as_secs_f64()),
            )
        }
        Command::Profile {
            output,
            graph,
            metric,
            bins,
            relation,
        } => {
            let start = Instant::now();
            let g = load_graph(&graph)?;
            let view = GraphView::parse(&relation);
            let adj = view.adjacency(&g)?;
            let (metric, centrality) = match metric {
                MetricArg::Cc => (Centrality::Cc, closeness_centrality(&adj)),
                MetricArg::Dc => (Centrality::Dc, degree_centrality(&adj)?),
            };
            let profile = neighbor_composition_histogram(&adj, g.labels(), &centrality, bins)?;
            create_dir(&output.out)?;
            let tag = match metric {
                Centrality::Cc => "cc",
                Centrality::Dc => "dc",
            };
            let path = output.out.join(format!("profile_{tag}_{relation}.csv"));
            std::fs::write(&path, profile.to_csv()).map_err(|source| Error::Write {
                path: path.clone(),
                source,
            })?;
            match fraud_trend(&profile) {
                Some(rho) => println!("spearman(bin, mean fraud neighbours) = {rho:.4}"),
                None => println!("spearman undefined: fewer than two distinct occupied bins"),
            }
            let config = serde_json::json!({
                "graph": graph,
                "metric": metric,
                "bins": bins,
                "relation": relation,
            });
            let manifest = RunManifest {
                command: "profile".into(),
                config_hash: mimbfd_core::config::sha256_hex(&config.to_string()),
                config,
                seed: 0,
                artifacts: vec![path],
                wall_time_secs: start.elapsed().as_secs_f64(),
            };
            write_manifest(&output.out, &manifest)
        }
        Command::Train { output, experiment } => {
            let cfg = resolve_config(&experiment, &output)?;
            let graph = load_graph(graph_path(&cfg)?)?;
            single_run("train", &graph, &cfg, &output.out).map(|_| ())
        }
        Command::Eval {
            output,
            graph,
            run,
            split,
        } => {
            let start = Instant::now();
            let (cfg, _): (ExperimentConfig, _) = load_json(&run.join(CONFIG_FILE))?;
            let g = load_graph(&graph)?;
            let assignment = stratified_split(&g, cfg.split, cfg.seed)?;
            let mut model = init_model(&g, &assignment, &cfg)?;
            model.load_parameters(checkpoint::load(&run.join(CHECKPOINT_FILE))?)?;
            let tag = match split {
                SplitArg::Train => SplitTag::Train,
                SplitArg::Val => SplitTag::Val,
                SplitArg::Test => SplitTag::Test,
            };
            let metrics = evaluate(&model, &g, &assignment, tag)?;
            create_dir(&output.out)?;
            let path = output.out.join("eval_report.json");
            write_json(
                &path,
                &serde_json::json!({
                    "split": format!("{tag:?}").to_lowercase(),
                    "seed": cfg.seed,
                    "config_hash": cfg.config_hash(),
                    "metrics": metrics,
                }),
            )?;
            println!("auc {:.4} recall {:.4} f1 {:.4}", metrics.auc, metrics.recall, metrics.f1);
            write_manifest(
                &output.out,
                &RunManifest::for_experiment("eval", &cfg, vec![path], start.elapsed().as_secs_f64()),
            )
        }
        Command::SweepEta {
            values,
            num_seeds,
            output,
            experiment,
        } => {
            let base = resolve_config(&experiment, &output)?;
            let graph = load_graph(graph_path(&base)?)?;
            let mut groups = Vec::new();
            for eta in values {
                let mut reports = Vec::new();
                for seed in base.seed..base.seed + num_seeds {
                    let mut cfg = base.clone();
                    cfg.eta = eta;
                    cfg.seed = seed;
                    if cfg.label.is_empty() {
                        cfg.label = format!("sweep-eta-{eta}");
                    }
                    let dir = seed_dir(&output.out.join(format!("eta{eta}")), seed, num_seeds);
                    reports.push(single_run("sweep-eta", &graph, &cfg, &dir)?);
                }
                groups.push(summarize(format!("eta={eta}"), &reports));
            }
            write_json(&output.out.join("summary.json"), &groups)
        }
        Command::CaseStudy {
            rho,
            num_seeds,
            output,
            experiment,
        } => {
            let base = resolve_config(&experiment, &output)?;
            let graph = load_graph(graph_path(&base)?)?;
            let mut groups = Vec::new();
            for &r in &rho {
                let mut by_model: [Vec<Report>; 2] = Default::default();
                for seed in base.seed..base.seed + num_seeds {
                    let mut cfg = base.clone();
                    cfg.seed = seed;
                    let start = Instant::now();
                    let (masked, runs) = case_study_point(&graph, &cfg, r)?;
                    for (k, (c, trained, report)) in runs.iter().enumerate() {
                        let dir = seed_dir(
                            &output.out.join(format!("rho{r}")).join(model_dir_name(c.model)),
                            seed,
                            num_seeds,
                        );
                        let paths = write_run(&dir, &masked, c, trained, report)?;
                        write_manifest(
                            &dir,
                            &RunManifest::for_experiment("case-study", c, paths, start.elapsed().as_secs_f64()),
                        )?;
                        println!(
                            "rho {r} {} seed {seed}: labeled {}:{} auc {:.4} recall {:.4}",
                            model_dir_name(c.model),
                            report.labeled_benign,
                            report.labeled_fraud,
                            report.auc,
                            report.recall
                        );
                        by_model[k].push(report.clone());
                    }
                }
                for reports in &by_model {
                    groups.push(summarize(format!("rho={r} {}", model_dir_name(reports[0].model)), reports));
                }
            }
            write_json(&output.out.join("summary.json"), &groups)
        }
        Command::Ablate {
            without,
            num_seeds,
            output,
            experiment,
        } => {
            let base = resolve_config(&experiment, &output)?;
            let graph = load_graph(graph_path(&base)?)?;
            let without = match without {
                AblationArg::Lcd => Ablation::Lcd,
                AblationArg::Tmr => Ablation::Tmr,
            };
            let mut reports = Vec::new();
            for seed in base.seed..base.seed + num_seeds {
                let mut cfg = ablated(&base, without);
                cfg.seed = seed;
                if let Some(l) = &experiment.label {
                    cfg.label = l.clone();
                }
                let dir = seed_dir(&output.out, seed, num_seeds);
                reports.push(single_run("ablate", &graph, &cfg, &dir)?);
            }
            if num_seeds > 1 {
                let summary = summarize(format!("without {}", without.name()), &reports);
                write_json(&output.out.join("summary.json"), &[summary])?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

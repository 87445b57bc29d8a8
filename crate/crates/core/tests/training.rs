mod support;

use mimbfd_core::autodiff::Adam;
use mimbfd_core::checkpoint;
use mimbfd_core::graph::stratified_split;
use mimbfd_core::model::{cross_entropy, total_loss};
use mimbfd_core::synth::{feature_oracle_auc, generate, SynthSpec};
use mimbfd_core::train::{init_model, train_with_split};
use mimbfd_core::{
    evaluate, fit, train_run, AnyModel, Error, ExperimentConfig, Matrix, ModelKind, MultiRelationGraph, Network,
    SplitTag, Tape, TmrModel,
};

fn small_graph(seed: u64) -> MultiRelationGraph {
    generate(&SynthSpec {
        n: 400,
        feature_dim: 8,
        mean_degree: 6.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn quick_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        hidden_dim: 16,
        epochs: 40,
        patience: 10,
        ..ExperimentConfig::default()
    }
}

fn parameters_of(model: &AnyModel) -> Vec<Matrix> {
    model.parameters().into_iter().cloned().collect()
}

#[test]
fn eta_zero_is_identical_to_disabling_the_regularizer() {
    let graph = small_graph(1);
    let mut a = quick_config(3);
    a.eta = 0.0;
    let mut b = quick_config(3);
    b.lcd.enabled = false;
    let ra = train_run(&graph, &a).unwrap();
    let rb = train_run(&graph, &b).unwrap();
    assert_eq!(ra.fit, rb.fit);
    assert_eq!(parameters_of(&ra.model), parameters_of(&rb.model));
}

#[test]
fn eta_zero_total_loss_is_the_cross_entropy_node() {
    let graph = small_graph(2);
    let cfg = quick_config(2);
    let split = stratified_split(&graph, cfg.split, cfg.seed).unwrap();
    let model = init_model(&graph, &split, &cfg).unwrap();
    assert!(model.lcd_config().is_some());
    let train = split.indices(SplitTag::Train);
    let classes: Vec<usize> = train.iter().map(|&i| graph.labels()[i].class().unwrap()).collect();

    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, graph.features()).unwrap();
    let ce = cross_entropy(&mut tape, fwd.logits, &train, &classes).unwrap();
    let ce_value = tape.value(ce).item().unwrap();
    let zero = total_loss(&mut tape, &fwd, &train, &classes, model.lcd_config(), 0.0).unwrap();
    let with_lcd = total_loss(&mut tape, &fwd, &train, &classes, model.lcd_config(), 0.5).unwrap();
    assert_eq!(tape.value(zero).item().unwrap().to_bits(), ce_value.to_bits());
    assert!(tape.value(with_lcd).item().unwrap() > ce_value);
}

#[test]
fn same_seed_gives_identical_runs() {
    let graph = small_graph(4);
    let cfg = quick_config(9);
    let a = train_run(&graph, &cfg).unwrap();
    let b = train_run(&graph, &cfg).unwrap();
    assert_eq!(a.fit, b.fit);
    assert_eq!(a.test, b.test);
    assert_eq!(parameters_of(&a.model), parameters_of(&b.model));
}

#[test]
fn one_epoch_is_exactly_one_optimizer_step() {
    let graph = small_graph(5);
    let cfg = ExperimentConfig {
        epochs: 1,
        ..quick_config(5)
    };
    let split = stratified_split(&graph, cfg.split, cfg.seed).unwrap();
    let trained = train_with_split(&graph, split.clone(), &cfg).unwrap();
    assert_eq!(trained.fit.epochs_run, 1);

    let mut manual = init_model(&graph, &split, &cfg).unwrap();
    let train = split.indices(SplitTag::Train);
    let classes: Vec<usize> = train.iter().map(|&i| graph.labels()[i].class().unwrap()).collect();
    let mut tape = Tape::new();
    let fwd = manual.forward(&mut tape, graph.features()).unwrap();
    let loss = total_loss(&mut tape, &fwd, &train, &classes, manual.lcd_config(), cfg.eta).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Matrix> = fwd.leaves.iter().map(|&v| tape.grad(v).unwrap().clone()).collect();
    let refs: Vec<&Matrix> = grads.iter().collect();
    let initial = parameters_of(&manual);
    Adam::new(cfg.adam).step(&mut manual.parameters_mut(), &refs).unwrap();

    assert_eq!(parameters_of(&trained.model), parameters_of(&manual));
    assert_ne!(parameters_of(&trained.model), initial);
}

#[test]
fn restored_model_scores_the_best_validation_auc() {
    let graph = small_graph(6);
    let cfg = quick_config(6);
    let run = train_run(&graph, &cfg).unwrap();
    let best = run.fit.trace.iter().map(|r| r.val_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(run.fit.best_val_auc, best);
    assert_eq!(run.fit.trace[run.fit.best_epoch].val_auc, best);
    assert_eq!(run.val.auc, best);
}

#[test]
fn separable_graph_is_learned() {
    let spec = SynthSpec {
        n: 600,
        feature_dim: 8,
        class_mean_separation: 6.0,
        camouflage_rate: 0.0,
        seed: 3,
        ..SynthSpec::default()
    };
    let graph = generate(&spec).unwrap();
    assert!(feature_oracle_auc(graph.features(), graph.labels()).unwrap() > 0.9);
    let run = train_run(&graph, &quick_config(3)).unwrap();
    assert!(run.val.auc > 0.95, "val auc {}", run.val.auc);
}

#[test]
fn uniform_logits_on_a_balanced_set_cost_ln_two() {
    let mut tape = Tape::new();
    let logits = tape.leaf(Matrix::filled(6, 2, 0.7));
    let loss = cross_entropy(&mut tape, logits, &[0, 1, 2, 5], &[0, 1, 1, 0]).unwrap();
    assert!((tape.value(loss).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    let none = cross_entropy(&mut tape, logits, &[], &[]);
    assert!(matches!(none, Err(Error::Config(_))));
}

#[test]
fn zero_weights_give_the_bias_everywhere() {
    let graph = small_graph(7);
    let cfg = quick_config(7);
    let split = stratified_split(&graph, cfg.split, cfg.seed).unwrap();
    let mut model = init_model(&graph, &split, &cfg).unwrap();
    let AnyModel::Mimbfd(tmr) = &mut model else {
        panic!("default model is MimbFD")
    };
    for layer in &mut tmr.layers {
        for block in layer.blocks_mut() {
            *block = Matrix::zeros(block.rows(), block.cols());
        }
    }
    tmr.classifier_w = Matrix::zeros(tmr.classifier_w.rows(), 2);
    tmr.classifier_b = Matrix::from_rows(&[vec![0.25, -0.5]]).unwrap();
    let (logits, _) = model.predict(graph.features()).unwrap();
    for i in 0..logits.rows() {
        assert_eq!(logits.row(i), &[0.25, -0.5]);
    }
}

#[test]
fn a_model_without_layers_is_rejected() {
    let graph = small_graph(8);
    let cfg = quick_config(8);
    let split = stratified_split(&graph, cfg.split, cfg.seed).unwrap();
    let AnyModel::Mimbfd(tmr) = init_model(&graph, &split, &cfg).unwrap() else {
        panic!("default model is MimbFD")
    };
    let err = TmrModel::new(
        Vec::new(),
        tmr.classifier_w.clone(),
        tmr.classifier_b.clone(),
        None,
        tmr.scores().clone(),
        tmr.partition().clone(),
        tmr.train_idx().to_vec(),
        false,
    );
    assert!(matches!(err, Err(Error::Config(_))));
    let bad = ExperimentConfig {
        num_layers: 0,
        ..cfg
    };
    assert!(matches!(train_run(&graph, &bad), Err(Error::Config(_))));
}

#[test]
fn logits_are_permutation_equivariant() {
    let graph = small_graph(10);
    let cfg = quick_config(10);
    let split = stratified_split(&graph, cfg.split, cfg.seed).unwrap();
    let perm = support::permutation(&mut support::rng(10), graph.num_nodes());
    let moved_graph = graph.permuted(&perm);
    let moved_split = split.permuted(&perm);
    for kind in [ModelKind::Mimbfd, ModelKind::Gcn] {
        let cfg = ExperimentConfig { model: kind, ..cfg.clone() };
        let (a, _) = init_model(&graph, &split, &cfg).unwrap().predict(graph.features()).unwrap();
        let (b, _) = init_model(&moved_graph, &moved_split, &cfg)
            .unwrap()
            .predict(moved_graph.features())
            .unwrap();
        for i in 0..graph.num_nodes() {
            for (x, y) in a.row(i).iter().zip(b.row(perm[i])) {
                assert!((x - y).abs() < 1e-10, "{kind:?} node {i}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn gcn_baseline_learns_a_homophilous_graph() {
    let graph = generate(&SynthSpec {
        n: 600,
        feature_dim: 8,
        homophily_benign: 0.95,
        homophily_fraud: 0.9,
        seed: 11,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = ExperimentConfig {
        model: ModelKind::Gcn,
        ..quick_config(11)
    };
    let run = train_run(&graph, &cfg).unwrap();
    assert!(run.test.auc > 0.8, "gcn auc {}", run.test.auc);
}

#[test]
fn exploding_updates_abort_with_the_epoch() {
    let graph = small_graph(12);
    let mut cfg = quick_config(12);
    cfg.adam.lr = 1e300;
    let err = train_run(&graph, &cfg).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert!(err.to_string().contains("epoch"), "{err}");
}

#[test]
fn reloaded_checkpoint_reproduces_predictions() {
    let graph = small_graph(13);
    let cfg = quick_config(13);
    let run = train_run(&graph, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mfd");
    checkpoint::save(&path, &run.model.parameters()).unwrap();

    let mut fresh = init_model(&graph, &run.split, &cfg).unwrap();
    fresh.load_parameters(checkpoint::load(&path).unwrap()).unwrap();
    let (a, ha) = run.model.predict(graph.features()).unwrap();
    let (b, hb) = fresh.predict(graph.features()).unwrap();
    assert!(a == b && ha == hb);
    assert_eq!(
        evaluate(&fresh, &graph, &run.split, SplitTag::Test).unwrap(),
        run.test
    );

    let mut wrong = fresh.clone();
    let mut blocks = checkpoint::load(&path).unwrap();
    blocks.pop();
    assert!(matches!(wrong.load_parameters(blocks), Err(Error::Checkpoint(_))));
}

#[test]
fn fit_can_be_driven_directly() {
    let graph = small_graph(14);
    let cfg = quick_config(14);
    let split = stratified_split(&graph, cfg.split, cfg.seed).unwrap();
    let mut model = init_model(&graph, &split, &cfg).unwrap();
    let outcome = fit(&mut model, &graph, &split, &cfg).unwrap();
    assert!(outcome.epochs_run <= cfg.epochs);
    assert!(outcome.trace.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    let val = evaluate(&model, &graph, &split, SplitTag::Val).unwrap();
    assert_eq!(val.auc, outcome.best_val_auc);
}

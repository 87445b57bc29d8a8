use std::fs;

use mimbfd_core::synth::{calibrate, feature_oracle_auc, generate, write_synth, SynthSpec, SPEC_FILE};
use mimbfd_core::Label;

#[test]
fn written_graphs_are_byte_identical_per_seed() {
    let spec = SynthSpec {
        n: 300,
        num_relations: 3,
        seed: 21,
        ..SynthSpec::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        write_synth(&generate(&spec).unwrap(), &spec, dir.path()).unwrap();
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == SPEC_FILE));
    assert!(names.len() >= 3 + 3, "{names:?}");
    for name in names {
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn realized_fraud_fraction_is_within_ten_percent() {
    for seed in 0..10 {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let graph = generate(&spec).unwrap();
        let fraction = graph.class_count(Label::Fraud) as f64 / graph.num_nodes() as f64;
        assert!((fraction / spec.fraud_fraction - 1.0).abs() <= 0.1, "seed {seed}: {fraction}");
        let report = calibrate(&spec).unwrap();
        assert_eq!(report.fraud_fraction, fraction);
    }
}

#[test]
fn camouflage_lowers_the_feature_oracle() {
    let mean_auc = |rate: f64| {
        (0..10)
            .map(|seed| {
                let g = generate(&SynthSpec {
                    camouflage_rate: rate,
                    seed,
                    ..SynthSpec::default()
                })
                .unwrap();
                feature_oracle_auc(g.features(), g.labels()).unwrap()
            })
            .sum::<f64>()
            / 10.0
    };
    let aucs = [0.0, 0.3, 0.6].map(mean_auc);
    assert!(aucs[0] > aucs[1] && aucs[1] > aucs[2], "{aucs:?}");
}

#[test]
fn homophily_settings_show_up_in_the_edges() {
    let spec = SynthSpec {
        seed: 5,
        ..SynthSpec::default()
    };
    let report = calibrate(&spec).unwrap();
    assert_eq!(report.relations.len(), spec.num_relations);
    for rel in &report.relations {
        assert!((rel.mean_degree - spec.mean_degree).abs() < 1.0, "{rel:?}");
        assert!((rel.benign_homophily - spec.homophily_benign).abs() < 0.05, "{rel:?}");
        assert!(rel.fraud_homophily < rel.benign_homophily, "{rel:?}");
    }
}

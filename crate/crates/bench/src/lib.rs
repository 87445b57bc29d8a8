//! Shared fixtures for the benchmarks.

use mimbfd_core::graph::stratified_split;
use mimbfd_core::synth::{generate, SynthSpec};
use mimbfd_core::{ExperimentConfig, MultiRelationGraph, SplitAssignment};

/// The default synthetic graph and its standard split.
pub fn default_graph(seed: u64) -> (MultiRelationGraph, SplitAssignment) {
    let graph = generate(&SynthSpec {
        seed,
        ..SynthSpec::default()
    })
    .expect("default synth spec is valid");
    let cfg = ExperimentConfig::default();
    let split = stratified_split(&graph, cfg.split, seed).expect("default split is valid");
    (graph, split)
}

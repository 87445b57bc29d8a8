pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gpr;
pub mod graph;
pub mod lcd;
pub mod metrics;
pub mod model;
pub mod profile;
pub mod synth;
pub mod tmr;
pub mod train;

pub use autodiff::{Adam, AdamConfig, Matrix, Tape, Var};
pub use config::{ExperimentConfig, ModelKind, TmrAblation};
pub use error::{Error, Result};
pub use gpr::{GprConfig, InfluenceScores};
pub use graph::{Label, MultiRelationGraph, RelationAdjacency, SplitAssignment, SplitTag};
pub use lcd::{LcdConfig, LcdVariant};
pub use metrics::{roc_auc, Confusion, Metrics};
pub use model::{AnyModel, GcnModel, Network, TmrModel};
pub use train::{evaluate, fit, train_run, FitOutcome, TraceRow, TrainedRun};

//! Label-efficient selection of pretrained classifiers.
//!
//! Given the hard predictions of m models on n unlabeled examples, the
//! model selector maintains a posterior over which model is best and asks
//! for the label of the example whose answer is expected to shrink that
//! posterior's entropy the most. Around that core sit five baseline query
//! policies, a label-free ε tuner, a realization-based evaluation harness
//! and a synthetic collection generator.

pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod policies;
pub mod seed;
pub mod synth;
pub mod tuning;

pub use data::{accuracy_profile, AccuracyProfile, ClassId, LabelVector, PredictionMatrix, Provenance};
pub use engine::{ClassMode, ErrorRate, Evidence, ModelPosterior};
pub use error::{Error, Result};
pub use eval::{ExperimentConfig, MetricsReport, RealizationResult};
pub use policies::{FinalSelection, PolicyKind, PolicySpec, SelectionState};
pub use synth::{SyntheticCollection, SyntheticSpec};
pub use tuning::{EpsilonGrid, NoisyOracleConfig, TuningReport};

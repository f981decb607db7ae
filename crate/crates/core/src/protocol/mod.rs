//! Experiment protocol: fold rotation of unknown classes, per-fold runs,
//! shared threshold selection, aggregation and synthetic data.

pub mod aggregate;
pub mod folds;
pub mod oracle;
pub mod runner;
pub mod synth;

pub use aggregate::{
    aggregate, select_shared_threshold, AggregateRow, Curve, Summary, AGGREGATE_HEADER,
};
pub use folds::{make_folds, FoldPlan};
pub use oracle::{oracle_nearest_center, training_means};
pub use runner::{
    aggregate_csv, default_quantile_grid, fit_and_score_fold, run_fold, run_protocol, score_fold,
    select_and_evaluate, write_outputs, ExcludedPlacement, FeatureMode, FoldResult, FoldScores,
    FoldsConfig, MeanCurve, ProtocolConfig, ProtocolOutcome, Strategy, ThresholdConfig,
};
pub use synth::{class_centers, generate_synthetic, SplitCounts, SynthSpec};

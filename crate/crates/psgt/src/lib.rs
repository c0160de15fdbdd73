//! Patient-specific game-based transfer (PSGT) for UPDRS severity prediction.
//!
//! Given one target patient from a voice-telemonitoring cohort, the pipeline
//!
//! 1. splits the target's records 6:2:2 into train/validation/test,
//! 2. ranks every other subject by how well a forest trained on that subject
//!    alone predicts the target's validation records, and keeps the top `k`,
//! 3. plays a cooperative game over the kept subjects (exact Shapley values;
//!    a coalition's payoff is the validation MAE of a forest trained on the
//!    target's training records plus the coalition's records), squashes and
//!    normalises the values into per-subject weights,
//! 4. turns the weights into per-subject instance quotas under a hard cap,
//!    scores each candidate record with a sampled-coalition Shapley
//!    estimator, and keeps only records whose estimated contribution lowers
//!    the validation error,
//! 5. retrains the forest on the extended training set and reports MAE,
//!    RMSE, and error volatility on the held-out test records.
//!
//! Two baselines share the same splits, seeds, and forest settings: `rf`
//! (target-only forest) and `st` (transfer every record of the top-k
//! subjects).
//!
//! The default `parallel` feature fans work out through rayon; building with
//! `--no-default-features` gives a sequential binary with bit-identical
//! output. All randomness flows through seeds derived per (stage, target,
//! item), never through shared mutable RNG state, which is what makes the
//! two builds agree.

pub mod dataset;
pub mod experiment;
pub mod forest;
pub mod matrix;
pub mod shapley;
pub mod transfer;

mod par;
mod seeding;

pub use dataset::{Dataset, Record, SubjectSeries, TargetKind, TargetSplit};
pub use experiment::{AggregateReport, ExperimentConfig, ExperimentOutcome};
pub use forest::metrics::MetricsReport;
pub use forest::{Forest, ForestConfig};
pub use matrix::Matrix;
pub use transfer::{Method, RunResult, TransferConfig, TransferPlan};

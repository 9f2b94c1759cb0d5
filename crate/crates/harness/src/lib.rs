//! Experiment harness: run configs, seeded training runs, evaluation,
//! ablation sweeps, metrics files and checkpoints.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod metrics;
pub mod ops;

pub use checkpoint::{verify_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use ops::{
    resume, run_ablation, run_eval, run_train, Axis, EvalReport, Registries, SweepSummary,
    TrainSummary,
};

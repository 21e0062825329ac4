//! Toy preference tasks, training loops and numerical checks of the
//! bounded-loss guarantees.

mod simplex;
mod sweep;
mod task;
mod train;
mod verify;

use std::io;

use crate::losses::LossError;
use crate::policy::PolicyError;

pub use simplex::{minimize_over_simplex, minimize_over_simplex_with, ClearedSnapshot, SimplexOptions, SimplexPoint};
pub use sweep::{run_sweep, trace_distance, SweepParam, SweepResult, SweepRun};
pub use task::{
    generate_toy_task, generate_toy_task_with_mode, ResponseRole, TaskMode, ToyTask, TOY_PROMPTS, TOY_RESPONSES,
};
pub use train::{
    train_toy, train_toy_with_reference, StepOutcome, StopReason, TraceRow, Trainer, TrainingConfig, TrainingMetadata,
    TrainingTrace, TRACE_HEADER,
};
pub use verify::{
    sample_reference, verify_backprop, verify_corollary1, verify_gradients, verify_theorem1, verify_theorem2,
    BackpropCase, BackpropReport, Corollary1Options, Corollary1Report, EpsilonProbe, GradientReport, LossGradientStats,
    Theorem1Case, Theorem1Options, Theorem1Report, Theorem2Report, Theorem2Step,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f64 },
    #[error("loss evaluation failed at step {step}: {source}")]
    LossAt {
        step: usize,
        #[source]
        source: LossError,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

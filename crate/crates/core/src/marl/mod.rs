//! Centralized-critic actor-critic whose actor and critic inputs carry the
//! attention-fused consensus vectors.

mod buffer;
mod config;
mod execution;
mod nets;
mod objective;
mod trainer;

pub use buffer::{compute_returns_advantages, gae, normalize_advantages, RolloutBuffer, StepData};
pub use config::TrainConfig;
pub use execution::{AgentConsensus, ExecutionPolicy};
pub use nets::{log_softmax, sample_action, ActionSample, ActorNet, CriticNet};
pub use objective::{
    ClippedSurrogate, LiteralPolicyGradient, ObjectiveInputs, ObjectiveRegistry, PolicyObjective,
};
pub use trainer::{
    evaluate_policy, parameter_snapshot, ActorStats, HierarchySpec, MetricsRecord, Trainer,
    TrainerState, NONDETERMINISTIC_KEYS,
};

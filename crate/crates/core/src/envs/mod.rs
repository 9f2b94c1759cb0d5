//! Cooperative 2D kinematic tasks with partial observations and a shared
//! reward, plus a one-step contextual bandit for sanity checks.

mod bandit;
mod navigation;
mod predator_prey;
mod rendezvous;
mod world;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bandit::Bandit;
pub use navigation::Navigation;
pub use predator_prey::PredatorPrey;
pub use rendezvous::Rendezvous;
pub use world::{
    apply_action, dist, mean_pairwise_distance, Body, EnvConfig, Transition, WorldState,
    ACTION_COUNT,
};

use crate::error::{CoreError, Result};

/// A cooperative task. Implementations are stateless: everything that
/// changes lives in [`WorldState`].
pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;
    fn config(&self) -> &EnvConfig;
    fn agents(&self) -> usize {
        self.config().agents
    }
    fn step_limit(&self) -> usize {
        self.config().step_limit
    }
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize {
        ACTION_COUNT
    }
    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<WorldState>;
    fn step(&self, state: &mut WorldState, actions: &[usize]) -> Result<Transition>;
    /// Agent `i`'s local view; a pure function of the state.
    fn observe(&self, state: &WorldState, i: usize) -> Vec<f64>;
    fn global_state(&self, state: &WorldState) -> Vec<f64>;
    fn is_success(&self, state: &WorldState) -> bool;
    /// Inclusive bounds on the per-step shared reward.
    fn reward_bounds(&self) -> (f64, f64);
}

pub type TaskFactory = fn(&EnvConfig) -> Result<Arc<dyn Task>>;

/// Tasks selectable by name.
#[derive(Clone)]
pub struct TaskRegistry {
    factories: BTreeMap<&'static str, TaskFactory>,
}

impl TaskRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("rendezvous", |c| Ok(Arc::new(Rendezvous::new(c.clone())?)));
        r.register("predator_prey", |c| {
            Ok(Arc::new(PredatorPrey::new(c.clone())?))
        });
        r.register("navigation", |c| Ok(Arc::new(Navigation::new(c.clone())?)));
        r.register("bandit", |c| Ok(Arc::new(Bandit::new(c.clone())?)));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: TaskFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, cfg: &EnvConfig) -> Result<Arc<dyn Task>> {
        let f = self.factories.get(name).ok_or_else(|| CoreError::Unknown {
            kind: "task",
            name: name.to_string(),
            available: self.names().collect::<Vec<_>>().join(", "),
        })?;
        f(cfg)
    }
}

/// Outcome of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps_to_complete: usize,
    pub total_reward: f64,
}

/// One record per visited state. Record 0 is the reset state, with zero
/// reward and no actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub positions: Vec<[f64; 2]>,
    pub prey: Option<[f64; 2]>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub success: bool,
}

impl StepRecord {
    pub fn capture(state: &WorldState, actions: Vec<usize>, reward: f64, success: bool) -> Self {
        Self {
            t: state.timestep,
            positions: state.agents.iter().map(|b| b.pos).collect(),
            prey: state.prey.map(|b| b.pos),
            actions,
            reward,
            success,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step_limit: usize,
    pub records: Vec<StepRecord>,
}

/// First record index whose success predicate holds, else the step limit.
pub fn episode_metrics(traj: &Trajectory) -> EpisodeResult {
    let first = traj.records.iter().position(|r| r.success);
    EpisodeResult {
        success: first.is_some(),
        steps_to_complete: first.unwrap_or(traj.step_limit).min(traj.step_limit),
        total_reward: traj.records.iter().map(|r| r.reward).sum(),
    }
}

/// Runs one episode with a per-step action callback and records it.
pub fn run_episode<F>(task: &dyn Task, rng: &mut ChaCha8Rng, mut policy: F) -> Result<Trajectory>
where
    F: FnMut(&WorldState) -> Result<Vec<usize>>,
{
    let mut state = task.reset(rng)?;
    let mut traj = Trajectory {
        step_limit: task.step_limit(),
        records: vec![StepRecord::capture(
            &state,
            vec![],
            0.0,
            task.is_success(&state),
        )],
    };
    if traj.records[0].success {
        return Ok(traj);
    }
    loop {
        let actions = policy(&state)?;
        let tr = task.step(&mut state, &actions)?;
        traj.records
            .push(StepRecord::capture(&state, actions, tr.reward, tr.success));
        if tr.done || tr.truncated {
            return Ok(traj);
        }
    }
}

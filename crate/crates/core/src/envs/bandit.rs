use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::world::*;
use super::Task;
use crate::error::{CoreError, Result};

/// One-step contextual bandit: the observation is a one-hot context `c`
/// and action `(c + 1) % actions` pays 1, everything else 0.
pub struct Bandit {
    cfg: EnvConfig,
}

impl Bandit {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.bandit_contexts > ACTION_COUNT {
            return Err(CoreError::Config(format!(
                "bandit supports at most {ACTION_COUNT} contexts"
            )));
        }
        Ok(Self { cfg })
    }

    pub fn optimal_action(context: usize) -> usize {
        (context + 1) % ACTION_COUNT
    }
}

impl Task for Bandit {
    fn name(&self) -> &'static str {
        "bandit"
    }

    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn step_limit(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        self.cfg.bandit_contexts
    }

    fn state_dim(&self) -> usize {
        self.cfg.bandit_contexts
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<WorldState> {
        let context = rng.random_range(0..self.cfg.bandit_contexts);
        Ok(WorldState {
            agents: vec![Body::default(); self.cfg.agents],
            prey: None,
            obstacles: vec![],
            goals: vec![],
            context,
            timestep: 0,
            step_limit: 1,
            rng: ChaCha8Rng::from_rng(rng),
        })
    }

    fn step(&self, state: &mut WorldState, actions: &[usize]) -> Result<Transition> {
        check_actions(actions, state.agents.len(), self.action_count())?;
        let best = Self::optimal_action(state.context);
        let hits = actions.iter().filter(|&&a| a == best).count();
        state.timestep += 1;
        Ok(Transition {
            reward: hits as f64 / actions.len() as f64,
            done: true,
            success: hits == actions.len(),
            truncated: false,
        })
    }

    fn observe(&self, state: &WorldState, _i: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.cfg.bandit_contexts];
        o[state.context] = 1.0;
        o
    }

    fn global_state(&self, state: &WorldState) -> Vec<f64> {
        self.observe(state, 0)
    }

    fn is_success(&self, _state: &WorldState) -> bool {
        false
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::world::*;
use super::Task;
use crate::error::{Result, ResultExt};

/// Agents must gather: every pairwise distance below the gather radius.
pub struct Rendezvous {
    cfg: EnvConfig,
}

impl Rendezvous {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn reward(&self, state: &WorldState) -> f64 {
        let pts: Vec<_> = state.agents.iter().map(|b| b.pos).collect();
        -mean_pairwise_distance(&pts) / self.cfg.arena
    }
}

impl Task for Rendezvous {
    fn name(&self) -> &'static str {
        "rendezvous"
    }

    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        4 + 2 * self.cfg.neighbors
    }

    fn state_dim(&self) -> usize {
        4 * self.cfg.agents + 1
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<WorldState> {
        let c = &self.cfg;
        let l = c.arena;
        let pts = place_separated(
            rng,
            c.agents,
            (0.0, l),
            (0.0, l),
            c.min_separation * l,
            c.reset_attempts,
            &[],
        )
        .context(|| "rendezvous reset".to_string())?;
        Ok(WorldState {
            agents: pts
                .into_iter()
                .map(|pos| Body { pos, vel: [0.0; 2] })
                .collect(),
            prey: None,
            obstacles: vec![],
            goals: vec![],
            context: 0,
            timestep: 0,
            step_limit: c.step_limit,
            rng: ChaCha8Rng::from_rng(rng),
        })
    }

    fn step(&self, state: &mut WorldState, actions: &[usize]) -> Result<Transition> {
        check_actions(actions, state.agents.len(), self.action_count())?;
        for (b, &a) in state.agents.iter_mut().zip(actions) {
            apply_action(b, a, &self.cfg);
        }
        state.timestep += 1;
        let success = self.is_success(state);
        let reward = self.reward(state) + if success { self.cfg.success_bonus } else { 0.0 };
        Ok(Transition {
            reward,
            done: success,
            success,
            truncated: !success && state.timestep >= state.step_limit,
        })
    }

    fn observe(&self, state: &WorldState, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim());
        self_features(&state.agents[i], &self.cfg, &mut out);
        neighbor_features(state, i, &self.cfg, &mut out);
        out
    }

    fn global_state(&self, state: &WorldState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_dim());
        agent_state_features(state, &self.cfg, &mut out);
        out.push(time_feature(state));
        out
    }

    fn is_success(&self, state: &WorldState) -> bool {
        let r = self.cfg.gather_radius * self.cfg.arena;
        let a = &state.agents;
        (0..a.len()).all(|i| (i + 1..a.len()).all(|j| dist(a[i].pos, a[j].pos) < r))
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-std::f64::consts::SQRT_2, self.cfg.success_bonus)
    }
}

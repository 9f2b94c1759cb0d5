use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::world::*;
use super::Task;
use crate::error::{Result, ResultExt};

/// Agents start on the left, cross between two obstacles, and must each
/// reach an assigned goal on the right.
pub struct Navigation {
    cfg: EnvConfig,
}

impl Navigation {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn obstacle_centers(&self) -> Vec<[f64; 2]> {
        let l = self.cfg.arena;
        self.cfg
            .obstacles
            .iter()
            .map(|o| [o[0] * l, o[1] * l])
            .collect()
    }

    /// Number of agent-agent pairs and agent-obstacle pairs in contact.
    pub fn collisions(&self, state: &WorldState) -> usize {
        let l = self.cfg.arena;
        let ra = self.cfg.agent_radius * l;
        let ro = self.cfg.obstacle_radius * l;
        let a = &state.agents;
        let mut n = 0;
        for i in 0..a.len() {
            n += (i + 1..a.len())
                .filter(|&j| dist(a[i].pos, a[j].pos) < 2.0 * ra)
                .count();
            n += state
                .obstacles
                .iter()
                .filter(|&&o| dist(a[i].pos, o) < ra + ro)
                .count();
        }
        n
    }

    pub fn mean_goal_distance(&self, state: &WorldState) -> f64 {
        state
            .agents
            .iter()
            .zip(&state.goals)
            .map(|(b, g)| dist(b.pos, *g))
            .sum::<f64>()
            / state.agents.len() as f64
    }
}

impl Task for Navigation {
    fn name(&self) -> &'static str {
        "navigation"
    }

    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        4 + 2 + 2 * self.cfg.obstacles.len() + 2 * self.cfg.neighbors
    }

    fn state_dim(&self) -> usize {
        6 * self.cfg.agents + 1
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<WorldState> {
        let c = &self.cfg;
        let l = c.arena;
        let sep = c.min_separation * l;
        let obstacles = self.obstacle_centers();
        let keep_out: Vec<_> = obstacles
            .iter()
            .map(|&o| (o, (c.obstacle_radius + c.agent_radius) * l))
            .collect();
        let starts = place_separated(
            rng,
            c.agents,
            (0.05 * l, 0.25 * l),
            (0.05 * l, 0.95 * l),
            sep,
            c.reset_attempts,
            &keep_out,
        )
        .context(|| "navigation start placement".to_string())?;
        let goals = place_separated(
            rng,
            c.agents,
            (0.75 * l, 0.95 * l),
            (0.05 * l, 0.95 * l),
            sep,
            c.reset_attempts,
            &keep_out,
        )
        .context(|| "navigation goal placement".to_string())?;
        Ok(WorldState {
            agents: starts
                .into_iter()
                .map(|pos| Body { pos, vel: [0.0; 2] })
                .collect(),
            prey: None,
            obstacles,
            goals,
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
        let reward = -self.mean_goal_distance(state) / self.cfg.arena
            - self.cfg.collision_penalty * self.collisions(state) as f64
            + if success { self.cfg.success_bonus } else { 0.0 };
        Ok(Transition {
            reward,
            done: success,
            success,
            truncated: !success && state.timestep >= state.step_limit,
        })
    }

    fn observe(&self, state: &WorldState, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim());
        let me = &state.agents[i];
        self_features(me, &self.cfg, &mut out);
        relative(me.pos, state.goals[i], &self.cfg, &mut out);
        for o in &state.obstacles {
            relative(me.pos, *o, &self.cfg, &mut out);
        }
        neighbor_features(state, i, &self.cfg, &mut out);
        out
    }

    fn global_state(&self, state: &WorldState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_dim());
        agent_state_features(state, &self.cfg, &mut out);
        for g in &state.goals {
            out.push(g[0] / self.cfg.arena);
            out.push(g[1] / self.cfg.arena);
        }
        out.push(time_feature(state));
        out
    }

    fn is_success(&self, state: &WorldState) -> bool {
        let r = self.cfg.goal_radius * self.cfg.arena;
        state
            .agents
            .iter()
            .zip(&state.goals)
            .all(|(b, g)| dist(b.pos, *g) < r)
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let n = self.cfg.agents;
        let max_collisions = n * (n - 1) / 2 + n * self.cfg.obstacles.len();
        (
            -std::f64::consts::SQRT_2 - self.cfg.collision_penalty * max_collisions as f64,
            self.cfg.success_bonus,
        )
    }
}

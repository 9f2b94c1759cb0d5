use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::world::*;
use super::Task;
use crate::error::{Result, ResultExt};

/// Predators chase a scripted prey; capture when any predator is within
/// the capture radius.
pub struct PredatorPrey {
    cfg: EnvConfig,
}

impl PredatorPrey {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn resample_heading(&self, prey: &mut Body, rng: &mut ChaCha8Rng) {
        let speed = self.cfg.prey_speed * self.cfg.max_speed();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        prey.vel = [speed * theta.cos(), speed * theta.sin()];
    }

    fn move_prey(&self, state: &mut WorldState) {
        let Some(mut prey) = state.prey else { return };
        if state.timestep % self.cfg.prey_heading_period == 0 {
            self.resample_heading(&mut prey, &mut state.rng);
        }
        let l = self.cfg.arena;
        for k in 0..2 {
            let mut p = prey.pos[k] + prey.vel[k];
            if p < 0.0 {
                p = -p;
                prey.vel[k] = -prey.vel[k];
            } else if p > l {
                p = 2.0 * l - p;
                prey.vel[k] = -prey.vel[k];
            }
            prey.pos[k] = p.clamp(0.0, l);
        }
        state.prey = Some(prey);
    }

    fn prey_pos(state: &WorldState) -> [f64; 2] {
        state.prey.map(|b| b.pos).unwrap_or_default()
    }
}

impl Task for PredatorPrey {
    fn name(&self) -> &'static str {
        "predator_prey"
    }

    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        4 + 2 + 2 * self.cfg.neighbors
    }

    fn state_dim(&self) -> usize {
        4 * self.cfg.agents + 4 + 1
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<WorldState> {
        let c = &self.cfg;
        let l = c.arena;
        let pts = place_separated(
            rng,
            c.agents + 1,
            (0.0, l),
            (0.0, l),
            c.min_separation * l,
            c.reset_attempts,
            &[],
        )
        .context(|| "predator_prey reset".to_string())?;
        let mut world_rng = ChaCha8Rng::from_rng(rng);
        let mut prey = Body {
            pos: pts[c.agents],
            vel: [0.0; 2],
        };
        self.resample_heading(&mut prey, &mut world_rng);
        let mut state = WorldState {
            agents: pts[..c.agents]
                .iter()
                .map(|&pos| Body { pos, vel: [0.0; 2] })
                .collect(),
            prey: Some(prey),
            obstacles: vec![],
            goals: vec![],
            context: 0,
            timestep: 0,
            step_limit: c.step_limit,
            rng: world_rng,
        };
        // A capture at reset would end the episode before any decision.
        if self.is_success(&state) {
            state.prey = Some(Body {
                pos: [l - prey.pos[0], l - prey.pos[1]],
                ..prey
            });
        }
        Ok(state)
    }

    fn step(&self, state: &mut WorldState, actions: &[usize]) -> Result<Transition> {
        check_actions(actions, state.agents.len(), self.action_count())?;
        for (b, &a) in state.agents.iter_mut().zip(actions) {
            apply_action(b, a, &self.cfg);
        }
        state.timestep += 1;
        let mut success = self.is_success(state);
        if !success {
            self.move_prey(state);
            success = self.is_success(state);
        }
        let prey = Self::prey_pos(state);
        let mean =
            state.agents.iter().map(|b| dist(b.pos, prey)).sum::<f64>() / state.agents.len() as f64;
        let reward = -mean / self.cfg.arena + if success { self.cfg.success_bonus } else { 0.0 };
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
        relative(me.pos, Self::prey_pos(state), &self.cfg, &mut out);
        neighbor_features(state, i, &self.cfg, &mut out);
        out
    }

    fn global_state(&self, state: &WorldState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_dim());
        agent_state_features(state, &self.cfg, &mut out);
        let prey = state.prey.unwrap_or_default();
        out.extend_from_slice(&[
            prey.pos[0] / self.cfg.arena,
            prey.pos[1] / self.cfg.arena,
            prey.vel[0] / self.cfg.max_speed(),
            prey.vel[1] / self.cfg.max_speed(),
        ]);
        out.push(time_feature(state));
        out
    }

    fn is_success(&self, state: &WorldState) -> bool {
        let prey = Self::prey_pos(state);
        let r = self.cfg.capture_radius * self.cfg.arena;
        state.agents.iter().any(|b| dist(b.pos, prey) < r)
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-std::f64::consts::SQRT_2, self.cfg.success_bonus)
    }
}

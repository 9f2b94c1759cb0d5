use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Lengths are fractions of the arena side unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub agents: usize,
    /// Arena side in meters.
    pub arena: f64,
    pub step_limit: usize,
    pub speed_cap: f64,
    /// Velocity increment per action, as a fraction of the speed cap.
    pub accel: f64,
    pub sensing_radius: f64,
    pub neighbors: usize,
    pub min_separation: f64,
    pub capture_radius: f64,
    pub gather_radius: f64,
    pub goal_radius: f64,
    pub agent_radius: f64,
    pub obstacle_radius: f64,
    pub obstacles: Vec<[f64; 2]>,
    /// Prey speed as a multiple of the agents' speed cap.
    pub prey_speed: f64,
    pub prey_heading_period: usize,
    pub success_bonus: f64,
    pub collision_penalty: f64,
    pub reset_attempts: usize,
    /// Context count of the bandit task.
    pub bandit_contexts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            agents: 3,
            arena: 2.0,
            step_limit: 200,
            speed_cap: 0.05,
            accel: 0.5,
            sensing_radius: 0.5,
            neighbors: 3,
            min_separation: 0.1,
            capture_radius: 0.1,
            gather_radius: 0.1,
            goal_radius: 0.05,
            agent_radius: 0.025,
            obstacle_radius: 0.08,
            obstacles: vec![[0.5, 0.35], [0.5, 0.65]],
            prey_speed: 1.2,
            prey_heading_period: 10,
            success_bonus: 10.0,
            collision_penalty: 1.0,
            reset_attempts: 1000,
            bandit_contexts: 2,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.agents == 0 {
            return bad("env.agents must be >= 1".into());
        }
        if self.step_limit == 0 {
            return bad("env.step_limit must be >= 1".into());
        }
        for (k, v) in [
            ("arena", self.arena),
            ("speed_cap", self.speed_cap),
            ("accel", self.accel),
            ("sensing_radius", self.sensing_radius),
            ("capture_radius", self.capture_radius),
            ("gather_radius", self.gather_radius),
            ("goal_radius", self.goal_radius),
            ("prey_speed", self.prey_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("env.{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [
            ("min_separation", self.min_separation),
            ("agent_radius", self.agent_radius),
            ("obstacle_radius", self.obstacle_radius),
            ("collision_penalty", self.collision_penalty),
            ("success_bonus", self.success_bonus),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("env.{k} must be >= 0, got {v}"));
            }
        }
        if self.prey_heading_period == 0 || self.reset_attempts == 0 {
            return bad("env.prey_heading_period and env.reset_attempts must be >= 1".into());
        }
        if self.bandit_contexts == 0 {
            return bad("env.bandit_contexts must be >= 1".into());
        }
        Ok(())
    }

    pub fn max_speed(&self) -> f64 {
        self.speed_cap * self.arena
    }

    pub fn dv(&self) -> f64 {
        self.accel * self.max_speed()
    }

    pub fn sensing(&self) -> f64 {
        self.sensing_radius * self.arena
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

/// Full simulator state. Holds its own random stream so that a transition
/// is a pure function of the state and the joint action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<Body>,
    pub prey: Option<Body>,
    pub obstacles: Vec<[f64; 2]>,
    pub goals: Vec<[f64; 2]>,
    /// Bandit context index.
    pub context: usize,
    pub timestep: usize,
    pub step_limit: usize,
    pub rng: ChaCha8Rng,
}

/// Result of one environment step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub reward: f64,
    /// The task reached a terminal (success) state.
    pub done: bool,
    pub success: bool,
    /// The step limit was reached without termination.
    pub truncated: bool,
}

pub const ACTION_COUNT: usize = 5;

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Samples `n` points in `[lo, hi]` boxes with pairwise distance at least
/// `min_sep`, retrying the whole placement up to `attempts` times.
pub fn place_separated(
    rng: &mut ChaCha8Rng,
    n: usize,
    x: (f64, f64),
    y: (f64, f64),
    min_sep: f64,
    attempts: usize,
    avoid: &[([f64; 2], f64)],
) -> Result<Vec<[f64; 2]>> {
    'outer: for _ in 0..attempts {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
        for _ in 0..n {
            let p = [rng.random_range(x.0..=x.1), rng.random_range(y.0..=y.1)];
            if pts.iter().any(|q| dist(*q, p) < min_sep)
                || avoid.iter().any(|(c, r)| dist(*c, p) < *r)
            {
                continue 'outer;
            }
            pts.push(p);
        }
        return Ok(pts);
    }
    Err(CoreError::Env(format!(
        "could not place {n} entities with separation {min_sep} after {attempts} attempts"
    )))
}

/// Velocity-increment kinematics: stay zeroes velocity, other actions add
/// `dv` along one axis; speed is capped and positions clamped to the arena.
pub fn apply_action(body: &mut Body, action: usize, cfg: &EnvConfig) {
    let dv = cfg.dv();
    match action {
        0 => body.vel = [0.0, 0.0],
        1 => body.vel[0] += dv,
        2 => body.vel[0] -= dv,
        3 => body.vel[1] += dv,
        _ => body.vel[1] -= dv,
    }
    let speed = (body.vel[0].powi(2) + body.vel[1].powi(2)).sqrt();
    let cap = cfg.max_speed();
    if speed > cap {
        body.vel = [body.vel[0] * cap / speed, body.vel[1] * cap / speed];
    }
    for k in 0..2 {
        let p = body.pos[k] + body.vel[k];
        if p < 0.0 || p > cfg.arena {
            body.vel[k] = 0.0;
        }
        body.pos[k] = p.clamp(0.0, cfg.arena);
    }
}

pub fn check_actions(actions: &[usize], agents: usize, count: usize) -> Result<()> {
    if actions.len() != agents {
        return Err(CoreError::Env(format!(
            "joint action has {} entries for {agents} agents",
            actions.len()
        )));
    }
    if let Some(a) = actions.iter().find(|&&a| a >= count) {
        return Err(CoreError::Env(format!("action {a} outside 0..{count}")));
    }
    Ok(())
}

/// Own position and velocity, normalized.
pub fn self_features(body: &Body, cfg: &EnvConfig, out: &mut Vec<f64>) {
    let v = cfg.max_speed();
    out.extend_from_slice(&[
        body.pos[0] / cfg.arena,
        body.pos[1] / cfg.arena,
        body.vel[0] / v,
        body.vel[1] / v,
    ]);
}

pub fn relative(from: [f64; 2], to: [f64; 2], cfg: &EnvConfig, out: &mut Vec<f64>) {
    out.push((to[0] - from[0]) / cfg.arena);
    out.push((to[1] - from[1]) / cfg.arena);
}

/// Relative positions of the nearest visible neighbors of agent `i`,
/// sorted by distance (ties by index) and zero-filled to `cfg.neighbors`.
pub fn neighbor_features(state: &WorldState, i: usize, cfg: &EnvConfig, out: &mut Vec<f64>) {
    let me = state.agents[i].pos;
    let mut seen: Vec<(f64, usize)> = state
        .agents
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, b)| (dist(me, b.pos), j))
        .filter(|(d, _)| *d <= cfg.sensing())
        .collect();
    seen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for slot in 0..cfg.neighbors {
        match seen.get(slot) {
            Some(&(_, j)) => relative(me, state.agents[j].pos, cfg, out),
            None => out.extend_from_slice(&[0.0, 0.0]),
        }
    }
}

pub fn agent_state_features(state: &WorldState, cfg: &EnvConfig, out: &mut Vec<f64>) {
    for b in &state.agents {
        self_features(b, cfg, out);
    }
}

pub fn time_feature(state: &WorldState) -> f64 {
    state.timestep as f64 / state.step_limit as f64
}

pub fn mean_pairwise_distance(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += dist(points[i], points[j]);
        }
    }
    total / (n * (n - 1) / 2) as f64
}

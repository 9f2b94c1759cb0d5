//! Flat `key = value` run configuration.
//!
//! Keys are dotted (`train.actor_lr`) or grouped under a `[section]` header.
//! The first entry of every file must be `format_version`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hcmarl_autodiff::Activation;
use hcmarl_core::envs::{EnvConfig, TaskRegistry};
use hcmarl_core::hierarchy::LayerSpec;
use hcmarl_core::marl::{HierarchySpec, ObjectiveRegistry, TrainConfig};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    /// Iterations between checkpoints; 0 saves only at the end of a run.
    pub checkpoint_every: usize,
    /// Fraction of trailing iterations summarized as the final window.
    pub final_window: f64,
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub hierarchy: HierarchySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: "rendezvous".into(),
            iterations: 300,
            seeds: vec![0, 1, 2, 3, 4],
            eval_episodes: 20,
            checkpoint_every: 25,
            final_window: 0.1,
            out: None,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            hierarchy: HierarchySpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| HarnessError::config(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_pairs(key: &str, v: &str) -> Result<Vec<(String, String)>> {
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',')
        .map(|p| match p.trim().split_once(':') {
            Some((a, b)) => Ok((a.trim().to_string(), b.trim().to_string())),
            None => Err(HarnessError::config(
                key,
                format!("expected `a:b` pairs, got `{p}`"),
            )),
        })
        .collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen: Vec<String> = vec![];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[') {
                let name = s.strip_suffix(']').ok_or_else(|| {
                    HarnessError::config(format!("line {}", n + 1), "unterminated section header")
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(format!("line {}", n + 1), "expected `key = value`")
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            let v = v.trim();
            if seen.is_empty() {
                if key != "format_version" {
                    return Err(HarnessError::config(
                        key,
                        "config must start with `format_version`",
                    ));
                }
                let found: u32 = parse("format_version", v)?;
                if found != CONFIG_VERSION {
                    return Err(HarnessError::Version {
                        path: "config".into(),
                        found: v.to_string(),
                        expected: CONFIG_VERSION,
                    });
                }
            } else if seen.contains(&key) {
                return Err(HarnessError::config(key, "duplicate key"));
            } else {
                cfg.set(&key, v)?;
            }
            seen.push(key);
        }
        if seen.is_empty() {
            return Err(HarnessError::config("format_version", "missing"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.env;
        let t = &mut self.train;
        let h = &mut self.hierarchy;
        let c = &mut h.consensus;
        match key {
            "task" => self.task = v.to_string(),
            "iterations" => self.iterations = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "final_window" => self.final_window = parse(key, v)?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),

            "env.agents" => e.agents = parse(key, v)?,
            "env.arena" => e.arena = parse(key, v)?,
            "env.step_limit" => e.step_limit = parse(key, v)?,
            "env.speed_cap" => e.speed_cap = parse(key, v)?,
            "env.accel" => e.accel = parse(key, v)?,
            "env.sensing_radius" => e.sensing_radius = parse(key, v)?,
            "env.neighbors" => e.neighbors = parse(key, v)?,
            "env.min_separation" => e.min_separation = parse(key, v)?,
            "env.capture_radius" => e.capture_radius = parse(key, v)?,
            "env.gather_radius" => e.gather_radius = parse(key, v)?,
            "env.goal_radius" => e.goal_radius = parse(key, v)?,
            "env.agent_radius" => e.agent_radius = parse(key, v)?,
            "env.obstacle_radius" => e.obstacle_radius = parse(key, v)?,
            "env.obstacles" => {
                e.obstacles = parse_pairs(key, v)?
                    .iter()
                    .map(|(x, y)| Ok([parse(key, x)?, parse(key, y)?]))
                    .collect::<Result<_>>()?
            }
            "env.prey_speed" => e.prey_speed = parse(key, v)?,
            "env.prey_heading_period" => e.prey_heading_period = parse(key, v)?,
            "env.success_bonus" => e.success_bonus = parse(key, v)?,
            "env.collision_penalty" => e.collision_penalty = parse(key, v)?,
            "env.reset_attempts" => e.reset_attempts = parse(key, v)?,
            "env.bandit_contexts" => e.bandit_contexts = parse(key, v)?,

            "train.gamma" => t.gamma = parse(key, v)?,
            "train.gae_lambda" => t.gae_lambda = parse(key, v)?,
            "train.clip" => t.clip = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.minibatch" => t.minibatch = parse(key, v)?,
            "train.rollout_length" => t.rollout_length = parse(key, v)?,
            "train.actor_lr" => t.actor_lr = parse(key, v)?,
            "train.critic_lr" => t.critic_lr = parse(key, v)?,
            "train.aggregator_lr" => t.aggregator_lr = parse(key, v)?,
            "train.entropy_coef" => t.entropy_coef = parse(key, v)?,
            "train.max_grad_norm" => t.max_grad_norm = parse(key, v)?,
            "train.consensus" => t.consensus = parse(key, v)?,
            "train.objective" => t.objective = v.to_string(),
            "train.target_critic" => t.target_critic = parse(key, v)?,
            "train.target_momentum" => t.target_momentum = parse(key, v)?,
            "train.share_actor" => t.share_actor = parse(key, v)?,
            "train.hidden" => t.hidden = parse_list(key, v)?,
            "train.activation" => t.activation = parse::<Activation>(key, v)?,
            "train.consensus_epochs" => t.consensus_epochs = parse(key, v)?,
            "train.consensus_minibatch" => t.consensus_minibatch = parse(key, v)?,
            "train.pretrain_iterations" => t.pretrain_iterations = parse(key, v)?,
            "train.normalize_advantages" => t.normalize_advantages = parse(key, v)?,

            "hierarchy.layers" => {
                h.layers = parse_pairs(key, v)?
                    .iter()
                    .map(|(w, s)| {
                        LayerSpec::new(parse(key, w)?, parse(key, s)?)
                            .map_err(|e| HarnessError::config(key, e.to_string()))
                    })
                    .collect::<Result<_>>()?
            }
            "hierarchy.embed_dim" => h.embed_dim = parse(key, v)?,
            "hierarchy.heads" => h.heads = parse(key, v)?,
            "hierarchy.categories" => c.categories = parse(key, v)?,
            "hierarchy.student_temperature" => c.student_temperature = parse(key, v)?,
            "hierarchy.teacher_temperature" => c.teacher_temperature = parse(key, v)?,
            "hierarchy.ema_momentum" => c.ema_momentum = parse(key, v)?,
            "hierarchy.center_momentum" => c.center_momentum = parse(key, v)?,
            "hierarchy.hidden" => c.hidden = parse_list(key, v)?,
            "hierarchy.include_self_pairs" => c.include_self_pairs = parse(key, v)?,
            "hierarchy.learning_rate" => c.learning_rate = parse(key, v)?,
            _ => return Err(HarnessError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let tasks = TaskRegistry::with_builtins();
        if !tasks.names().any(|n| n == self.task) {
            return Err(HarnessError::config(
                "task",
                format!(
                    "unknown task `{}` (available: {})",
                    self.task,
                    tasks.names().collect::<Vec<_>>().join(", ")
                ),
            ));
        }
        let objectives = ObjectiveRegistry::with_builtins();
        if objectives.get(&self.train.objective).is_err() {
            return Err(HarnessError::config(
                "train.objective",
                format!("unknown objective `{}`", self.train.objective),
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config(
                "seeds",
                "at least one seed is required",
            ));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::config("eval_episodes", "must be >= 1"));
        }
        if !(self.final_window > 0.0 && self.final_window <= 1.0) {
            return Err(HarnessError::config("final_window", "must lie in (0, 1]"));
        }
        self.env
            .validate()
            .map_err(|e| HarnessError::config("env", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| HarnessError::config("train", e.to_string()))?;
        self.hierarchy
            .resolve(1)
            .map_err(|e| HarnessError::config("hierarchy", e.to_string()))?;
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let e = &self.env;
        let t = &self.train;
        let h = &self.hierarchy;
        let c = &h.consensus;
        let mut out: Vec<(&str, String)> = vec![
            ("task", self.task.clone()),
            ("iterations", self.iterations.to_string()),
            ("seeds", join(&self.seeds)),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("final_window", self.final_window.to_string()),
            (
                "out",
                self.out
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
        ];
        out.extend([
            ("env.agents", e.agents.to_string()),
            ("env.arena", e.arena.to_string()),
            ("env.step_limit", e.step_limit.to_string()),
            ("env.speed_cap", e.speed_cap.to_string()),
            ("env.accel", e.accel.to_string()),
            ("env.sensing_radius", e.sensing_radius.to_string()),
            ("env.neighbors", e.neighbors.to_string()),
            ("env.min_separation", e.min_separation.to_string()),
            ("env.capture_radius", e.capture_radius.to_string()),
            ("env.gather_radius", e.gather_radius.to_string()),
            ("env.goal_radius", e.goal_radius.to_string()),
            ("env.agent_radius", e.agent_radius.to_string()),
            ("env.obstacle_radius", e.obstacle_radius.to_string()),
            (
                "env.obstacles",
                e.obstacles
                    .iter()
                    .map(|[x, y]| format!("{x}:{y}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("env.prey_speed", e.prey_speed.to_string()),
            ("env.prey_heading_period", e.prey_heading_period.to_string()),
            ("env.success_bonus", e.success_bonus.to_string()),
            ("env.collision_penalty", e.collision_penalty.to_string()),
            ("env.reset_attempts", e.reset_attempts.to_string()),
            ("env.bandit_contexts", e.bandit_contexts.to_string()),
        ]);
        out.extend([
            ("train.gamma", t.gamma.to_string()),
            ("train.gae_lambda", t.gae_lambda.to_string()),
            ("train.clip", t.clip.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.minibatch", t.minibatch.to_string()),
            ("train.rollout_length", t.rollout_length.to_string()),
            ("train.actor_lr", t.actor_lr.to_string()),
            ("train.critic_lr", t.critic_lr.to_string()),
            ("train.aggregator_lr", t.aggregator_lr.to_string()),
            ("train.entropy_coef", t.entropy_coef.to_string()),
            ("train.max_grad_norm", t.max_grad_norm.to_string()),
            ("train.consensus", t.consensus.to_string()),
            ("train.objective", t.objective.clone()),
            ("train.target_critic", t.target_critic.to_string()),
            ("train.target_momentum", t.target_momentum.to_string()),
            ("train.share_actor", t.share_actor.to_string()),
            ("train.hidden", join(&t.hidden)),
            ("train.activation", t.activation.to_string()),
            ("train.consensus_epochs", t.consensus_epochs.to_string()),
            (
                "train.consensus_minibatch",
                t.consensus_minibatch.to_string(),
            ),
            (
                "train.pretrain_iterations",
                t.pretrain_iterations.to_string(),
            ),
            (
                "train.normalize_advantages",
                t.normalize_advantages.to_string(),
            ),
        ]);
        out.extend([
            (
                "hierarchy.layers",
                h.layers
                    .iter()
                    .map(|l| format!("{}:{}", l.window, l.stride))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("hierarchy.embed_dim", h.embed_dim.to_string()),
            ("hierarchy.heads", h.heads.to_string()),
            ("hierarchy.categories", c.categories.to_string()),
            (
                "hierarchy.student_temperature",
                c.student_temperature.to_string(),
            ),
            (
                "hierarchy.teacher_temperature",
                c.teacher_temperature.to_string(),
            ),
            ("hierarchy.ema_momentum", c.ema_momentum.to_string()),
            ("hierarchy.center_momentum", c.center_momentum.to_string()),
            ("hierarchy.hidden", join(&c.hidden)),
            (
                "hierarchy.include_self_pairs",
                c.include_self_pairs.to_string(),
            ),
            ("hierarchy.learning_rate", c.learning_rate.to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Canonical text form; `parse(render())` gives back an equal config.
    pub fn render(&self) -> String {
        let mut s = format!("format_version = {CONFIG_VERSION}\n");
        let mut section = String::new();
        for (k, v) in self.entries() {
            let (sec, name) = k.split_once('.').unwrap_or(("", &k));
            if sec != section {
                let _ = write!(s, "\n[{sec}]\n");
                section = sec.to_string();
            }
            let _ = writeln!(s, "{name} = {v}");
        }
        s
    }
}

use crate::consensus::ConsensusCategory;
use crate::envs::EpisodeResult;
use crate::error::{CoreError, Result};

use super::config::TrainConfig;

/// Everything recorded for one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepData {
    pub episode: u64,
    pub timestep: usize,
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub truncated: bool,
    /// Value of `next_state` used when the episode is cut by the step limit.
    pub bootstrap: f64,
    /// Per agent.
    pub obs: Vec<Vec<f64>>,
    pub c_att: Vec<Vec<f64>>,
    pub categories: Vec<Vec<ConsensusCategory>>,
    pub next_categories: Vec<Vec<ConsensusCategory>>,
    pub next_c_att: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Per agent, per layer stacked consensus inputs.
    pub layer_inputs: Vec<Vec<Vec<f64>>>,
}

/// On-policy storage. Step-level fields have one entry per step; agent
/// fields have `agents` entries per step, step-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub agents: usize,
    pub episode: Vec<u64>,
    pub timestep: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    pub next_states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    pub bootstrap: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub c_att: Vec<Vec<f64>>,
    pub categories: Vec<Vec<ConsensusCategory>>,
    pub next_categories: Vec<Vec<ConsensusCategory>>,
    pub next_c_att: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub layer_inputs: Vec<Vec<Vec<f64>>>,
    pub returns: Option<Vec<f64>>,
    pub advantages: Option<Vec<f64>>,
    pub episodes: Vec<EpisodeResult>,
    pub(crate) actor_consumed: bool,
    pub(crate) critic_consumed: bool,
}

impl RolloutBuffer {
    pub fn new(agents: usize) -> Self {
        Self {
            agents,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, s: StepData) -> Result<()> {
        let n = self.agents;
        if [
            s.obs.len(),
            s.c_att.len(),
            s.categories.len(),
            s.next_categories.len(),
            s.next_c_att.len(),
            s.actions.len(),
            s.log_probs.len(),
            s.layer_inputs.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(CoreError::Dimension(format!(
                "step record does not carry {n} agents"
            )));
        }
        self.episode.push(s.episode);
        self.timestep.push(s.timestep);
        self.states.push(s.state);
        self.next_states.push(s.next_state);
        self.rewards.push(s.reward);
        self.values.push(s.value);
        self.dones.push(s.done);
        self.truncated.push(s.truncated);
        self.bootstrap.push(s.bootstrap);
        self.obs.extend(s.obs);
        self.c_att.extend(s.c_att);
        self.categories.extend(s.categories);
        self.next_categories.extend(s.next_categories);
        self.next_c_att.extend(s.next_c_att);
        self.actions.extend(s.actions);
        self.log_probs.extend(s.log_probs);
        self.layer_inputs.extend(s.layer_inputs);
        Ok(())
    }

    /// Concatenated consensus vectors of all agents at step `t`.
    pub fn joint_c_att(&self, t: usize) -> Vec<f64> {
        self.c_att[t * self.agents..(t + 1) * self.agents].concat()
    }

    pub fn joint_next_c_att(&self, t: usize) -> Vec<f64> {
        self.next_c_att[t * self.agents..(t + 1) * self.agents].concat()
    }

    pub fn actor_consumed(&self) -> bool {
        self.actor_consumed
    }

    pub fn critic_consumed(&self) -> bool {
        self.critic_consumed
    }
}

/// Generalized advantage estimation with per-step termination flags.
///
/// A `done` step ends its episode without bootstrapping; a `truncated` step
/// ends it bootstrapping from `bootstrap[t]`. The final step of the slice is
/// treated as truncated if it carries neither flag. Returns
/// `(returns, advantages)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    truncated: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(CoreError::EmptyBatch("compute_returns_advantages"));
    }
    if [values.len(), dones.len(), truncated.len(), bootstrap.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(CoreError::Dimension(
            "advantage inputs differ in length".into(),
        ));
    }
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, next_adv) = if dones[t] {
            (0.0, 0.0)
        } else if truncated[t] || t + 1 == n {
            (bootstrap[t], 0.0)
        } else {
            (values[t + 1], carry)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        carry = delta + gamma * lambda * next_adv;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((returns, adv))
}

/// Fills `buffer.returns` and `buffer.advantages` (normalized when the
/// config asks for it) and returns the raw advantages.
pub fn compute_returns_advantages(
    buffer: &mut RolloutBuffer,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let (returns, adv) = gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.dones,
        &buffer.truncated,
        &buffer.bootstrap,
        cfg.gamma,
        cfg.gae_lambda,
    )?;
    buffer.returns = Some(returns);
    buffer.advantages = Some(if cfg.normalize_advantages {
        normalize_advantages(&adv)
    } else {
        adv.clone()
    });
    Ok(adv)
}

/// Shifts to mean 0 and scales to population std 1. A single element or a
/// constant batch is only centered.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return vec![];
    }
    let mean = adv.iter().sum::<f64>() / n;
    let centered: Vec<f64> = adv.iter().map(|a| a - mean).collect();
    let var = centered.iter().map(|c| c * c).sum::<f64>() / n;
    let std = var.sqrt();
    if adv.len() < 2 || std < 1e-12 {
        return centered;
    }
    let scaled: Vec<f64> = centered.iter().map(|c| c / std).collect();
    // One correction pass removes the rounding left by the first.
    let m2 = scaled.iter().sum::<f64>() / n;
    scaled.iter().map(|s| s - m2).collect()
}

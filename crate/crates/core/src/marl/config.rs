use hcmarl_autodiff::Activation;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Minibatch size in agent-steps for the actor and in steps for the critic.
    pub minibatch: usize,
    /// Minimum environment steps per iteration; whole episodes are collected.
    pub rollout_length: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub aggregator_lr: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// When false the consensus path is disabled end to end and the
    /// consensus slots of every network input are zero.
    pub consensus: bool,
    /// Name of the registered policy objective.
    pub objective: String,
    pub target_critic: bool,
    pub target_momentum: f64,
    pub share_actor: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub consensus_epochs: usize,
    /// Timestep groups per consensus minibatch.
    pub consensus_minibatch: usize,
    /// Iterations at the start of a run that train only the consensus layers.
    pub pretrain_iterations: usize,
    pub normalize_advantages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 256,
            rollout_length: 1000,
            actor_lr: 5e-4,
            critic_lr: 1e-3,
            aggregator_lr: 5e-4,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            consensus: true,
            objective: "clipped".into(),
            target_critic: false,
            target_momentum: 0.99,
            share_actor: true,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            consensus_epochs: 1,
            consensus_minibatch: 64,
            pretrain_iterations: 0,
            normalize_advantages: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!(
                "train.gamma must lie in (0, 1), got {}",
                self.gamma
            ));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!(
                "train.gae_lambda must lie in [0, 1], got {}",
                self.gae_lambda
            ));
        }
        if !(self.clip > 0.0) {
            return bad(format!("train.clip must be positive, got {}", self.clip));
        }
        for (k, v) in [
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
            ("rollout_length", self.rollout_length),
            ("consensus_minibatch", self.consensus_minibatch),
        ] {
            if v == 0 {
                return bad(format!("train.{k} must be >= 1"));
            }
        }
        for (k, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("aggregator_lr", self.aggregator_lr),
            ("entropy_coef", self.entropy_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("train.{k} must be a finite value >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.target_momentum) {
            return bad(format!(
                "train.target_momentum must lie in [0, 1], got {}",
                self.target_momentum
            ));
        }
        if self.hidden.contains(&0) {
            return bad("train.hidden must list positive widths".into());
        }
        Ok(())
    }
}

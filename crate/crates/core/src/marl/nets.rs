use hcmarl_autodiff::{mlp_infer, Activation, MlpSpec, ParameterSet};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Categorical policy over the discrete action set. Input rows are
/// `obs ⊕ c_att`, followed by an agent one-hot when parameters are shared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorNet {
    pub spec: MlpSpec,
    /// One set when shared, otherwise one per agent.
    pub params: Vec<ParameterSet>,
    pub obs_dim: usize,
    pub consensus_dim: usize,
    pub agents: usize,
    pub shared: bool,
}

impl ActorNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        consensus_dim: usize,
        agents: usize,
        actions: usize,
        shared: bool,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let input = obs_dim + consensus_dim + if shared { agents } else { 0 };
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(actions);
        let spec = MlpSpec::new(sizes, activation)?;
        let copies = if shared { 1 } else { agents };
        let params = (0..copies).map(|_| spec.init(rng, 0.01)).collect();
        Ok(Self {
            spec,
            params,
            obs_dim,
            consensus_dim,
            agents,
            shared,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn actions(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn params_for(&self, agent: usize) -> &ParameterSet {
        &self.params[if self.shared { 0 } else { agent }]
    }

    /// Appends agent `agent`'s input row to `out`.
    pub fn input_row(
        &self,
        obs: &[f64],
        c_att: &[f64],
        agent: usize,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        if obs.len() != self.obs_dim || c_att.len() != self.consensus_dim {
            return Err(CoreError::Dimension(format!(
                "actor input of {}+{} values, expected {}+{}",
                obs.len(),
                c_att.len(),
                self.obs_dim,
                self.consensus_dim
            )));
        }
        if agent >= self.agents {
            return Err(CoreError::Dimension(format!("no agent {agent}")));
        }
        out.extend_from_slice(obs);
        out.extend_from_slice(c_att);
        if self.shared {
            out.extend((0..self.agents).map(|j| if j == agent { 1.0 } else { 0.0 }));
        }
        Ok(())
    }

    pub fn logits(&self, agent: usize, obs: &[f64], c_att: &[f64]) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.input_dim());
        self.input_row(obs, c_att, agent, &mut row)?;
        Ok(mlp_infer(self.params_for(agent), &self.spec, &row)?)
    }
}

/// Centralized state-value critic over `global state ⊕ c_att_1 ⊕ ... ⊕ c_att_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub spec: MlpSpec,
    pub params: ParameterSet,
    pub target: Option<ParameterSet>,
    pub state_dim: usize,
    pub consensus_dim: usize,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        consensus_dim: usize,
        hidden: &[usize],
        activation: Activation,
        with_target: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + consensus_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, activation)?;
        let params = spec.init(rng, 1.0);
        Ok(Self {
            spec,
            target: with_target.then(|| params.clone()),
            params,
            state_dim,
            consensus_dim,
        })
    }

    pub fn input_row(&self, state: &[f64], c_all: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if state.len() != self.state_dim || c_all.len() != self.consensus_dim {
            return Err(CoreError::Dimension(format!(
                "critic input of {}+{} values, expected {}+{}",
                state.len(),
                c_all.len(),
                self.state_dim,
                self.consensus_dim
            )));
        }
        out.extend_from_slice(state);
        out.extend_from_slice(c_all);
        Ok(())
    }

    pub fn value(&self, state: &[f64], c_all: &[f64]) -> Result<f64> {
        self.value_with(&self.params, state, c_all)
    }

    /// Value under the target copy, or the online critic when there is none.
    pub fn target_value(&self, state: &[f64], c_all: &[f64]) -> Result<f64> {
        self.value_with(self.target.as_ref().unwrap_or(&self.params), state, c_all)
    }

    fn value_with(&self, params: &ParameterSet, state: &[f64], c_all: &[f64]) -> Result<f64> {
        let mut row = Vec::with_capacity(self.spec.input_dim());
        self.input_row(state, c_all, &mut row)?;
        Ok(mlp_infer(params, &self.spec, &row)?[0])
    }
}

/// Probabilities and log-probabilities of a logit row.
pub fn log_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let logp: Vec<f64> = logits.iter().map(|l| l - lse).collect();
    (logp.iter().map(|l| l.exp()).collect(), logp)
}

/// The chosen action and its log-probability under the policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub action: usize,
    pub log_prob: f64,
    pub probs: Vec<f64>,
}

/// Samples from (or, when `greedy`, takes the argmax of) a logit row. Ties
/// in greedy mode go to the smallest index.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], greedy: bool, rng: &mut R) -> ActionSample {
    let (probs, logp) = log_softmax(logits);
    let action = if greedy {
        crate::consensus::argmax(&probs)
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    ActionSample {
        action,
        log_prob: logp[action],
        probs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let s = sample_action(&[0.3; 5], false, &mut rng);
            assert!((s.probs[s.action] - 0.2).abs() < 1e-15);
            counts[s.action] += 1;
        }
        let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
        for c in counts {
            assert!(
                (c as f64 / n as f64 - 0.2).abs() < 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn dominant_logit_wins_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_action(&[0.0, 0.0, 20.0, 0.0, 0.0], true, &mut rng);
        assert_eq!(s.action, 2);
        assert!((s.log_prob - s.probs[2].ln()).abs() < 1e-12);
    }

    #[test]
    fn actor_input_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = ActorNet::new(2, 3, 3, 5, true, &[4], Activation::Tanh, &mut rng).unwrap();
        let mut row = vec![];
        a.input_row(&[1.0, 2.0], &[0.1, 0.2, 0.3], 1, &mut row)
            .unwrap();
        assert_eq!(row, vec![1.0, 2.0, 0.1, 0.2, 0.3, 0.0, 1.0, 0.0]);
        assert!(a.input_row(&[1.0], &[0.1, 0.2, 0.3], 1, &mut row).is_err());
        let a = ActorNet::new(2, 3, 3, 5, false, &[4], Activation::Tanh, &mut rng).unwrap();
        assert_eq!(a.params.len(), 3);
        assert_eq!(a.input_dim(), 5);
    }
}

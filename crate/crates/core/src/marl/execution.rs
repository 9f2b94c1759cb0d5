//! Decentralized execution: everything an agent needs to act, computed from
//! its own observation and its own history only.

use std::collections::HashMap;

use hcmarl_autodiff::ParameterSet;
use rand::Rng;

use crate::consensus::{consensus_category, ConsensusCategory, ConsensusHead};
use crate::error::Result;
use crate::hierarchy::{build_layer_input, consensus_vector, HierarchyConfig, ObservationHistory};

use super::nets::{sample_action, ActionSample, ActorNet};

/// An agent's consensus at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConsensus {
    /// Stacked per-layer inputs, empty when consensus is disabled.
    pub inputs: Vec<Vec<f64>>,
    pub categories: Vec<ConsensusCategory>,
    pub c_att: Vec<f64>,
    /// Mean attention weight each layer receives.
    pub attention: Vec<f64>,
}

/// Frozen copies of the actor, the consensus students and the aggregator.
#[derive(Clone, Debug)]
pub struct ExecutionPolicy {
    pub actor: ActorNet,
    pub heads: Vec<ConsensusHead>,
    pub aggregator: ParameterSet,
    pub hierarchy: HierarchyConfig,
    pub consensus: bool,
    cache: HashMap<Vec<ConsensusCategory>, (Vec<f64>, Vec<f64>)>,
}

impl ExecutionPolicy {
    pub fn new(
        actor: ActorNet,
        heads: Vec<ConsensusHead>,
        aggregator: ParameterSet,
        hierarchy: HierarchyConfig,
        consensus: bool,
    ) -> Self {
        Self {
            actor,
            heads,
            aggregator,
            hierarchy,
            consensus,
            cache: HashMap::new(),
        }
    }

    pub fn consensus_dim(&self) -> usize {
        self.hierarchy.embed_dim
    }

    /// Consensus of `agent` at timestep `t` from its own history.
    pub fn consensus(
        &mut self,
        history: &ObservationHistory,
        agent: usize,
        t: usize,
    ) -> Result<AgentConsensus> {
        let layers = self.hierarchy.layers.len();
        if !self.consensus {
            return Ok(AgentConsensus {
                inputs: vec![],
                categories: vec![],
                c_att: vec![0.0; self.consensus_dim()],
                attention: vec![0.0; layers],
            });
        }
        let mut inputs = Vec::with_capacity(layers);
        let mut categories = Vec::with_capacity(layers);
        for (l, spec) in self.hierarchy.layers.iter().enumerate() {
            let x = build_layer_input(history, agent, *spec, t)?;
            categories.push(consensus_category(
                &self.heads[l],
                &x,
                &self.hierarchy.consensus[l],
            )?);
            inputs.push(x);
        }
        let (c_att, attention) = match self.cache.get(&categories) {
            Some(hit) => hit.clone(),
            None => {
                let (v, w) = consensus_vector(&self.aggregator, &categories, &self.hierarchy)?;
                self.cache
                    .insert(categories.clone(), (v.0.clone(), w.clone()));
                (v.0, w)
            }
        };
        Ok(AgentConsensus {
            inputs,
            categories,
            c_att,
            attention,
        })
    }

    /// Action for `agent` given its observation and consensus.
    pub fn act_with<R: Rng + ?Sized>(
        &self,
        agent: usize,
        obs: &[f64],
        consensus: &AgentConsensus,
        greedy: bool,
        rng: &mut R,
    ) -> Result<ActionSample> {
        let logits = self.actor.logits(agent, obs, &consensus.c_att)?;
        Ok(sample_action(&logits, greedy, rng))
    }

    /// Consensus and action for `agent` at `t`; `obs` must be the newest
    /// entry of the agent's history.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        agent: usize,
        obs: &[f64],
        history: &ObservationHistory,
        t: usize,
        greedy: bool,
        rng: &mut R,
    ) -> Result<(ActionSample, AgentConsensus)> {
        let c = self.consensus(history, agent, t)?;
        let a = self.act_with(agent, obs, &c, greedy, rng)?;
        Ok((a, c))
    }
}

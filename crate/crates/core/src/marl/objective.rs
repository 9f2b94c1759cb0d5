use std::collections::BTreeMap;
use std::sync::Arc;

use hcmarl_autodiff::{Tape, Var};

use crate::error::{CoreError, Result};

use super::config::TrainConfig;

/// Per-row quantities a policy objective is built from.
pub struct ObjectiveInputs<'a> {
    /// `[B]` log-probabilities of the taken actions under the current policy.
    pub log_probs: Var,
    /// `[B]` log-probabilities recorded at collection time.
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    /// `[B]` policy entropies.
    pub entropy: Var,
}

/// A policy-improvement objective, expressed as a loss to minimize.
pub trait PolicyObjective: Send + Sync {
    fn name(&self) -> &'static str;
    fn loss(&self, tape: &mut Tape, inputs: &ObjectiveInputs, cfg: &TrainConfig) -> Result<Var>;
}

/// Clipped importance-ratio surrogate with an entropy bonus.
pub struct ClippedSurrogate;

impl PolicyObjective for ClippedSurrogate {
    fn name(&self) -> &'static str {
        "clipped"
    }

    fn loss(&self, tape: &mut Tape, inp: &ObjectiveInputs, cfg: &TrainConfig) -> Result<Var> {
        let b = inp.advantages.len();
        let old = tape.constant_from(vec![b], inp.old_log_probs.to_vec())?;
        let adv = tape.constant_from(vec![b], inp.advantages.to_vec())?;
        let diff = tape.sub(inp.log_probs, old)?;
        let ratio = tape.exp(diff);
        let unclipped = tape.mul(ratio, adv)?;
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let clipped = tape.mul(clipped, adv)?;
        let surr = tape.minimum(unclipped, clipped)?;
        let surr = tape.mean(surr);
        let ent = tape.mean(inp.entropy);
        let ent = tape.scale(ent, cfg.entropy_coef);
        let objective = tape.add(surr, ent)?;
        Ok(tape.scale(objective, -1.0))
    }
}

/// `mean(log pi(a|o) * A)` with no clipping and no entropy term.
pub struct LiteralPolicyGradient;

impl PolicyObjective for LiteralPolicyGradient {
    fn name(&self) -> &'static str {
        "literal_pg"
    }

    fn loss(&self, tape: &mut Tape, inp: &ObjectiveInputs, _cfg: &TrainConfig) -> Result<Var> {
        let b = inp.advantages.len();
        let adv = tape.constant_from(vec![b], inp.advantages.to_vec())?;
        let weighted = tape.mul(inp.log_probs, adv)?;
        let m = tape.mean(weighted);
        Ok(tape.scale(m, -1.0))
    }
}

/// Policy objectives selectable by name.
#[derive(Clone)]
pub struct ObjectiveRegistry {
    entries: BTreeMap<&'static str, Arc<dyn PolicyObjective>>,
}

impl ObjectiveRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(ClippedSurrogate));
        r.register(Arc::new(LiteralPolicyGradient));
        r
    }

    pub fn register(&mut self, objective: Arc<dyn PolicyObjective>) {
        self.entries.insert(objective.name(), objective);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn PolicyObjective>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| CoreError::Unknown {
                kind: "policy objective",
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }
}

//! Multi-window consensus layers fused by attention.
//!
//! Each layer stacks `window` observations of one agent, sampled `stride`
//! steps apart, and runs its own consensus head on the stack. The resulting
//! per-layer categories are embedded, attended over, and mean-pooled into
//! the consensus vector appended to the agent's policy input.

use std::collections::{BTreeMap, VecDeque};

use hcmarl_autodiff::{
    adam_step, multi_head_attention, AdamState, AttentionSpec, Bound, ParameterSet, Tape, Tensor,
    Var,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consensus::{
    consensus_category, consensus_loss_grouped, update_teacher, ConsensusCategory, ConsensusConfig,
    ConsensusHead,
};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub window: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(CoreError::Config(format!(
                "layer window and stride must be >= 1, got {window}:{stride}"
            )));
        }
        Ok(Self { window, stride })
    }

    /// Number of past steps (inclusive of the current one) the layer spans.
    pub fn span(&self) -> usize {
        (self.window - 1) * self.stride + 1
    }
}

/// Per-agent ring buffer of recent observations for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationHistory {
    capacity: usize,
    obs_dim: usize,
    agents: Vec<AgentHistory>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct AgentHistory {
    entries: VecDeque<(usize, Vec<f64>)>,
    evicted: bool,
}

impl ObservationHistory {
    pub fn new(agents: usize, capacity: usize, obs_dim: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            obs_dim,
            agents: vec![AgentHistory::default(); agents],
        }
    }

    /// History long enough for every layer in `layers`.
    pub fn for_layers(agents: usize, layers: &[LayerSpec], obs_dim: usize) -> Self {
        let cap = layers.iter().map(LayerSpec::span).max().unwrap_or(1);
        Self::new(agents, cap, obs_dim)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn agents(&self) -> usize {
        self.agents.len()
    }

    pub fn clear(&mut self) {
        self.agents
            .iter_mut()
            .for_each(|a| *a = AgentHistory::default());
    }

    pub fn push(&mut self, agent: usize, timestep: usize, obs: Vec<f64>) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(CoreError::Dimension(format!(
                "observation of length {} for history of dim {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let h = self
            .agents
            .get_mut(agent)
            .ok_or_else(|| CoreError::History(format!("no agent {agent}")))?;
        if let Some((last, _)) = h.entries.back() {
            if timestep <= *last {
                return Err(CoreError::History(format!(
                    "timestep {timestep} does not follow {last}"
                )));
            }
        }
        if h.entries.len() == self.capacity {
            h.entries.pop_front();
            h.evicted = true;
        }
        h.entries.push_back((timestep, obs));
        Ok(())
    }

    pub fn latest(&self, agent: usize) -> Option<(usize, &[f64])> {
        self.agents
            .get(agent)?
            .entries
            .back()
            .map(|(t, o)| (*t, o.as_slice()))
    }

    fn lookup(&self, agent: usize, timestep: usize) -> Result<&[f64]> {
        let h = &self.agents[agent];
        let (first_t, first_obs) = h
            .entries
            .front()
            .ok_or_else(|| CoreError::History(format!("agent {agent} has no observations")))?;
        if timestep < *first_t {
            if h.evicted {
                return Err(CoreError::History(format!(
                    "timestep {timestep} was evicted from a history of capacity {}",
                    self.capacity
                )));
            }
            return Ok(first_obs);
        }
        h.entries
            .binary_search_by_key(&timestep, |(t, _)| *t)
            .map(|i| h.entries[i].1.as_slice())
            .map_err(|_| {
                CoreError::History(format!("agent {agent} has no observation at {timestep}"))
            })
    }
}

/// Stacks observations at `t, t - stride, ..., t - (window-1) * stride`,
/// newest first. Timesteps before the episode start repeat the earliest
/// observation.
pub fn build_layer_input(
    history: &ObservationHistory,
    agent: usize,
    spec: LayerSpec,
    t: usize,
) -> Result<Vec<f64>> {
    if agent >= history.agents() {
        return Err(CoreError::History(format!("no agent {agent}")));
    }
    let mut out = Vec::with_capacity(spec.window * history.obs_dim);
    for k in 0..spec.window {
        let ts = t.checked_sub(k * spec.stride);
        let obs = match ts {
            Some(ts) => history.lookup(agent, ts)?,
            None => history.lookup(agent, 0).or_else(|_| {
                let h = &history.agents[agent];
                h.entries
                    .front()
                    .map(|(_, o)| o.as_slice())
                    .ok_or_else(|| CoreError::History(format!("agent {agent} has no observations")))
            })?,
        };
        out.extend_from_slice(obs);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub layers: Vec<LayerSpec>,
    pub embed_dim: usize,
    pub heads: usize,
    /// One consensus configuration per layer; `input_dim` must equal
    /// `window * obs_dim` of that layer.
    pub consensus: Vec<ConsensusConfig>,
}

impl HierarchyConfig {
    /// Layers sharing one consensus template, with input dims filled in.
    pub fn uniform(
        layers: Vec<LayerSpec>,
        obs_dim: usize,
        template: &ConsensusConfig,
        embed_dim: usize,
        heads: usize,
    ) -> Self {
        let consensus = layers
            .iter()
            .map(|l| ConsensusConfig {
                input_dim: l.window * obs_dim,
                ..template.clone()
            })
            .collect();
        Self {
            layers,
            embed_dim,
            heads,
            consensus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::Config(
                "hierarchy needs at least one layer".into(),
            ));
        }
        if self.consensus.len() != self.layers.len() {
            return Err(CoreError::Config(format!(
                "{} consensus configs for {} layers",
                self.consensus.len(),
                self.layers.len()
            )));
        }
        AttentionSpec::new(self.embed_dim, self.heads)
            .map_err(|e| CoreError::Config(e.to_string()))?;
        for (l, c) in self.consensus.iter().enumerate() {
            c.validate().map_err(|e| e.context(format!("layer {l}")))?;
        }
        Ok(())
    }

    pub fn attention(&self) -> AttentionSpec {
        AttentionSpec::new(self.embed_dim, self.heads).expect("validated")
    }

    pub fn history_capacity(&self) -> usize {
        self.layers.iter().map(LayerSpec::span).max().unwrap_or(1)
    }
}

/// Attention-weighted consensus for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusVector(pub Vec<f64>);

impl ConsensusVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn embedding_name(layer: usize) -> String {
    format!("embed.{layer}")
}

pub const POSITION_NAME: &str = "pos";
pub const ATTENTION_PREFIX: &str = "attn.";

/// Embedding tables, layer-position embeddings and attention projections.
pub fn init_aggregator<R: Rng + ?Sized>(
    cfg: &HierarchyConfig,
    rng: &mut R,
) -> Result<ParameterSet> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let dist = Normal::new(0.0, 0.5).expect("valid std");
    let mut params = ParameterSet::new();
    for (l, c) in cfg.consensus.iter().enumerate() {
        let table = (0..c.categories * d).map(|_| dist.sample(rng)).collect();
        params.insert(embedding_name(l), Tensor::matrix(c.categories, d, table)?);
    }
    let pos = (0..cfg.layers.len() * d)
        .map(|_| dist.sample(rng))
        .collect();
    params.insert(POSITION_NAME, Tensor::matrix(cfg.layers.len(), d, pos)?);
    cfg.attention().init(rng, ATTENTION_PREFIX, &mut params);
    Ok(params)
}

/// Output of [`aggregate_attention`] on a tape.
pub struct Aggregated {
    /// `[1, embed_dim]`
    pub vector: Var,
    /// Per head, `[layers, layers]` attention weights.
    pub weights: Vec<Var>,
}

/// Embeds each layer's category, adds its layer-position embedding, runs
/// multi-head self-attention across layers and mean-pools the outputs.
pub fn aggregate_attention(
    tape: &mut Tape,
    agg: &Bound,
    categories: &[ConsensusCategory],
    cfg: &HierarchyConfig,
) -> Result<Aggregated> {
    if categories.len() != cfg.layers.len() {
        return Err(CoreError::Dimension(format!(
            "{} categories for {} layers",
            categories.len(),
            cfg.layers.len()
        )));
    }
    let mut rows = Vec::with_capacity(categories.len());
    for (l, (c, lc)) in categories.iter().zip(&cfg.consensus).enumerate() {
        if c.index() >= lc.categories {
            return Err(CoreError::CategoryOutOfRange {
                layer: l,
                index: c.index(),
                categories: lc.categories,
            });
        }
        let table = agg.get(&embedding_name(l))?;
        rows.push(tape.gather_rows(table, &[c.index()])?);
    }
    let tokens = if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat_rows(&rows)?
    };
    let pos = agg.get(POSITION_NAME)?;
    let tokens = tape.add(tokens, pos)?;
    let att = multi_head_attention(tape, agg, ATTENTION_PREFIX, tokens, &cfg.attention())?;
    let vector = tape.mean_rows(att.output)?;
    Ok(Aggregated {
        vector,
        weights: att.weights,
    })
}

/// Inference-only aggregation: the consensus vector and, per layer, the mean
/// attention weight that layer receives (over heads and queries).
pub fn consensus_vector(
    agg: &ParameterSet,
    categories: &[ConsensusCategory],
    cfg: &HierarchyConfig,
) -> Result<(ConsensusVector, Vec<f64>)> {
    let mut tape = Tape::new();
    let b = tape.bind_frozen(agg);
    let out = aggregate_attention(&mut tape, &b, categories, cfg)?;
    let layers = categories.len();
    let mut received = vec![0.0; layers];
    for w in &out.weights {
        for row in tape.value(*w).chunks(layers) {
            received.iter_mut().zip(row).for_each(|(r, x)| *r += x);
        }
    }
    let norm = (out.weights.len() * layers) as f64;
    received.iter_mut().for_each(|r| *r /= norm);
    Ok((ConsensusVector(tape.value(out.vector).to_vec()), received))
}

/// Consensus vectors for a batch of category tuples, `[batch, embed_dim]`.
/// Each distinct tuple is aggregated once and gathered back into place.
pub fn aggregate_batch(
    tape: &mut Tape,
    agg: &Bound,
    batch: &[Vec<ConsensusCategory>],
    cfg: &HierarchyConfig,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(CoreError::EmptyBatch("aggregate_batch"));
    }
    let mut unique: BTreeMap<&[ConsensusCategory], usize> = BTreeMap::new();
    let mut order = Vec::new();
    let index: Vec<usize> = batch
        .iter()
        .map(|cats| {
            let next = unique.len();
            *unique.entry(cats.as_slice()).or_insert_with(|| {
                order.push(cats.as_slice());
                next
            })
        })
        .collect();
    let mut vectors = Vec::with_capacity(order.len());
    for cats in order {
        vectors.push(aggregate_attention(tape, agg, cats, cfg)?.vector);
    }
    let table = if vectors.len() == 1 {
        vectors[0]
    } else {
        tape.concat_rows(&vectors)?
    };
    Ok(tape.gather_rows(table, &index)?)
}

/// Per-layer argmax categories for one agent's stacked inputs.
pub fn layer_consensus(
    heads: &[ConsensusHead],
    inputs: &[Vec<f64>],
    cfg: &HierarchyConfig,
) -> Result<Vec<ConsensusCategory>> {
    if heads.len() != cfg.layers.len() || inputs.len() != cfg.layers.len() {
        return Err(CoreError::Dimension(format!(
            "{} heads and {} inputs for {} layers",
            heads.len(),
            inputs.len(),
            cfg.layers.len()
        )));
    }
    heads
        .iter()
        .zip(inputs)
        .zip(&cfg.consensus)
        .map(|((h, x), c)| consensus_category(h, x, c))
        .collect()
}

/// One agent's stacked inputs (one per layer) at a given timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusSample {
    pub episode: u64,
    pub timestep: usize,
    pub inputs: Vec<Vec<f64>>,
}

/// A consensus layer's head and its optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusLayer {
    pub head: ConsensusHead,
    pub optimizer: AdamState,
}

/// All consensus layers plus the attention aggregator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub config: HierarchyConfig,
    pub layers: Vec<ConsensusLayer>,
    pub aggregator: ParameterSet,
}

impl Hierarchy {
    pub fn new<R: Rng + ?Sized>(config: HierarchyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .consensus
            .iter()
            .map(|c| {
                Ok(ConsensusLayer {
                    head: ConsensusHead::new(c, rng)?,
                    optimizer: AdamState::new(c.learning_rate),
                })
            })
            .collect::<Result<_>>()?;
        let aggregator = init_aggregator(&config, rng)?;
        Ok(Self {
            config,
            layers,
            aggregator,
        })
    }

    pub fn heads(&self) -> Vec<ConsensusHead> {
        self.layers.iter().map(|l| l.head.clone()).collect()
    }

    /// Per-layer categories for `agent` at timestep `t` from its own history.
    pub fn categorize(
        &self,
        history: &ObservationHistory,
        agent: usize,
        t: usize,
    ) -> Result<(Vec<Vec<f64>>, Vec<ConsensusCategory>)> {
        let inputs = self
            .config
            .layers
            .iter()
            .map(|&spec| build_layer_input(history, agent, spec, t))
            .collect::<Result<Vec<_>>>()?;
        let cats = self
            .layers
            .iter()
            .zip(&inputs)
            .zip(&self.config.consensus)
            .map(|((l, x), c)| consensus_category(&l.head, x, c))
            .collect::<Result<Vec<_>>>()?;
        Ok((inputs, cats))
    }

    /// One optimizer step per layer on the pairwise loss of `groups`, each
    /// group holding one sample per agent from a single timestep. Returns the
    /// per-layer losses measured before the step.
    pub fn train_step(&mut self, groups: &[Vec<ConsensusSample>]) -> Result<Vec<f64>> {
        hierarchy_train_step(self, groups)
    }
}

/// See [`Hierarchy::train_step`].
pub fn hierarchy_train_step(
    h: &mut Hierarchy,
    groups: &[Vec<ConsensusSample>],
) -> Result<Vec<f64>> {
    if groups.is_empty() || groups[0].is_empty() {
        return Err(CoreError::EmptyBatch("hierarchy_train_step"));
    }
    let n = groups[0].len();
    for g in groups {
        if g.len() != n {
            return Err(CoreError::Dimension(format!(
                "consensus groups of sizes {n} and {}",
                g.len()
            )));
        }
        let (ep, t) = (g[0].episode, g[0].timestep);
        if let Some(bad) = g.iter().find(|s| s.episode != ep || s.timestep != t) {
            return Err(CoreError::MixedTimestep(format!(
                "episode {ep} step {t} grouped with episode {} step {}",
                bad.episode, bad.timestep
            )));
        }
    }
    let mut losses = Vec::with_capacity(h.layers.len());
    for (l, (layer, cfg)) in h.layers.iter_mut().zip(&h.config.consensus).enumerate() {
        let mut data = Vec::with_capacity(groups.len() * n * cfg.input_dim);
        for s in groups.iter().flatten() {
            let x = s.inputs.get(l).ok_or_else(|| {
                CoreError::Dimension(format!("sample has no input for layer {l}"))
            })?;
            if x.len() != cfg.input_dim {
                return Err(CoreError::Dimension(format!(
                    "layer {l} input has {} values, expected {}",
                    x.len(),
                    cfg.input_dim
                )));
            }
            data.extend_from_slice(x);
        }
        let x = Tensor::matrix(groups.len() * n, cfg.input_dim, data)?;
        let mut tape = Tape::new();
        let bound = tape.bind(&layer.head.student);
        let out = consensus_loss_grouped(&mut tape, &layer.head, &bound, &x, n, cfg)?;
        losses.push(tape.scalar(out.loss));
        let grads = tape.backward(out.loss)?;
        grads.write_to(&bound, &mut layer.head.student)?;
        adam_step(&mut layer.optimizer, &mut layer.head.student)?;
        update_teacher(&mut layer.head, cfg, &out.teacher_logits)?;
    }
    Ok(losses)
}

/// Fraction of ordered pairs `i != j` whose categories match; 1 for a
/// single agent.
pub fn agreement_rate(categories: &[ConsensusCategory]) -> f64 {
    let n = categories.len();
    if n < 2 {
        return 1.0;
    }
    let mut same = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && categories[i] == categories[j] {
                same += 1;
            }
        }
    }
    same as f64 / (n * (n - 1)) as f64
}

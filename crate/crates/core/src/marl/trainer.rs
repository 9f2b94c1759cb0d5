use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use hcmarl_autodiff::{
    adam_step, clip_grad_norm, ema_blend, mlp_forward, AdamState, Bound, ParameterSet, Tape, Var,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusCategory, ConsensusConfig};
use crate::envs::{run_episode, EnvConfig, EpisodeResult, Task, TaskRegistry};
use crate::error::{CoreError, Result, ResultExt};
use crate::hierarchy::{
    aggregate_batch, agreement_rate, consensus_vector, ConsensusSample, Hierarchy, HierarchyConfig,
    LayerSpec, ObservationHistory,
};
use crate::rng::RngStreams;

use super::buffer::{compute_returns_advantages, RolloutBuffer, StepData};
use super::config::TrainConfig;
use super::execution::{AgentConsensus, ExecutionPolicy};
use super::nets::{ActorNet, CriticNet};
use super::objective::{ObjectiveInputs, ObjectiveRegistry, PolicyObjective};

/// Hierarchy layout before the observation width is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub layers: Vec<LayerSpec>,
    pub embed_dim: usize,
    pub heads: usize,
    /// Shared by every layer; `input_dim` is filled in per layer.
    pub consensus: ConsensusConfig,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerSpec {
                    window: 1,
                    stride: 1,
                },
                LayerSpec {
                    window: 5,
                    stride: 3,
                },
            ],
            embed_dim: 16,
            heads: 4,
            consensus: ConsensusConfig::new(1, 8),
        }
    }
}

impl HierarchySpec {
    pub fn resolve(&self, obs_dim: usize) -> Result<HierarchyConfig> {
        let cfg = HierarchyConfig::uniform(
            self.layers.clone(),
            obs_dim,
            &self.consensus,
            self.embed_dim,
            self.heads,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flat, ordered metrics for one iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord(pub Vec<(String, f64)>);

/// Keys whose values depend on the machine rather than the seed.
pub const NONDETERMINISTIC_KEYS: &[&str] = &["wall_clock_s"];

impl MetricsRecord {
    pub fn push(&mut self, key: impl Into<String>, value: f64) {
        self.0.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(k, _)| k.as_str())
    }

    /// The record without machine-dependent entries.
    pub fn deterministic(&self) -> MetricsRecord {
        MetricsRecord(
            self.0
                .iter()
                .filter(|(k, _)| !NONDETERMINISTIC_KEYS.contains(&k.as_str()))
                .cloned()
                .collect(),
        )
    }
}

/// Everything that evolves during training. Serializable for checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub task: String,
    pub env: EnvConfig,
    pub config: TrainConfig,
    pub hierarchy: Hierarchy,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub actor_opt: Vec<AdamState>,
    pub critic_opt: AdamState,
    pub aggregator_opt: AdamState,
    pub env_rng: ChaCha8Rng,
    pub sample_rng: ChaCha8Rng,
    pub shuffle_rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
    pub episodes: u64,
}

/// Update statistics of [`Trainer::actor_update`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorStats {
    /// Mean minibatch loss (negated objective) over the update.
    pub loss: f64,
    pub entropy: f64,
}

pub struct Trainer {
    pub state: TrainerState,
    task: Arc<dyn Task>,
    objective: Arc<dyn PolicyObjective>,
}

impl Trainer {
    pub fn new(
        task_name: &str,
        env: EnvConfig,
        config: TrainConfig,
        spec: &HierarchySpec,
        seed: u64,
        tasks: &TaskRegistry,
        objectives: &ObjectiveRegistry,
    ) -> Result<Self> {
        config.validate()?;
        let task = tasks.create(task_name, &env)?;
        let objective = objectives.get(&config.objective)?;
        let hcfg = spec.resolve(task.obs_dim())?;
        let streams = RngStreams::new(seed);
        let hierarchy = Hierarchy::new(hcfg, &mut streams.stream("init.hierarchy"))?;
        let n = task.agents();
        let d = spec.embed_dim;
        let actor = ActorNet::new(
            task.obs_dim(),
            d,
            n,
            task.action_count(),
            config.share_actor,
            &config.hidden,
            config.activation,
            &mut streams.stream("init.actor"),
        )?;
        let critic = CriticNet::new(
            task.state_dim(),
            n * d,
            &config.hidden,
            config.activation,
            config.target_critic,
            &mut streams.stream("init.critic"),
        )?;
        let state = TrainerState {
            task: task_name.to_string(),
            env,
            actor_opt: (0..actor.params.len())
                .map(|_| AdamState::new(config.actor_lr))
                .collect(),
            critic_opt: AdamState::new(config.critic_lr),
            aggregator_opt: AdamState::new(config.aggregator_lr),
            config,
            hierarchy,
            actor,
            critic,
            env_rng: streams.stream("env"),
            sample_rng: streams.stream("sampling"),
            shuffle_rng: streams.stream("shuffle"),
            iteration: 0,
            env_steps: 0,
            episodes: 0,
        };
        Ok(Self {
            state,
            task,
            objective,
        })
    }

    pub fn from_state(
        state: TrainerState,
        tasks: &TaskRegistry,
        objectives: &ObjectiveRegistry,
    ) -> Result<Self> {
        state.config.validate()?;
        let task = tasks.create(&state.task, &state.env)?;
        let objective = objectives.get(&state.config.objective)?;
        Ok(Self {
            state,
            task,
            objective,
        })
    }

    pub fn task(&self) -> &Arc<dyn Task> {
        &self.task
    }

    pub fn agents(&self) -> usize {
        self.task.agents()
    }

    fn hcfg(&self) -> &HierarchyConfig {
        &self.state.hierarchy.config
    }

    fn consensus_dim(&self) -> usize {
        self.hcfg().embed_dim
    }

    /// Frozen copies of everything needed to act.
    pub fn execution_policy(&self) -> ExecutionPolicy {
        ExecutionPolicy::new(
            self.state.actor.clone(),
            self.state.hierarchy.heads(),
            self.state.hierarchy.aggregator.clone(),
            self.hcfg().clone(),
            self.state.config.consensus,
        )
    }

    fn all_consensus(
        policy: &mut ExecutionPolicy,
        hist: &ObservationHistory,
        n: usize,
        t: usize,
    ) -> Result<Vec<AgentConsensus>> {
        (0..n).map(|i| policy.consensus(hist, i, t)).collect()
    }

    /// Collects whole episodes with a policy snapshot until at least
    /// `rollout_length` steps are stored.
    pub fn collect_rollout(&mut self) -> Result<RolloutBuffer> {
        let mut policy = self.execution_policy();
        let task = self.task.clone();
        let n = task.agents();
        let mut buf = RolloutBuffer::new(n);
        let mut hist = ObservationHistory::for_layers(n, &self.hcfg().layers, task.obs_dim());
        while buf.len() < self.state.config.rollout_length {
            let episode = self.state.episodes;
            self.state.episodes += 1;
            let mut world = task
                .reset(&mut self.state.env_rng)
                .context(|| format!("episode {episode}"))?;
            hist.clear();
            let mut t = 0;
            let mut obs: Vec<Vec<f64>> = (0..n).map(|i| task.observe(&world, i)).collect();
            for (i, o) in obs.iter().enumerate() {
                hist.push(i, t, o.clone())?;
            }
            let mut cons = Self::all_consensus(&mut policy, &hist, n, t)?;
            let mut total = 0.0;
            loop {
                let state = task.global_state(&world);
                let mut actions = Vec::with_capacity(n);
                let mut log_probs = Vec::with_capacity(n);
                for i in 0..n {
                    let s =
                        policy.act_with(i, &obs[i], &cons[i], false, &mut self.state.sample_rng)?;
                    actions.push(s.action);
                    log_probs.push(s.log_prob);
                }
                let joint: Vec<f64> = cons.iter().flat_map(|c| c.c_att.iter().copied()).collect();
                let value = self.state.critic.value(&state, &joint)?;
                let tr = task.step(&mut world, &actions)?;
                t += 1;
                total += tr.reward;
                let next_obs: Vec<Vec<f64>> = (0..n).map(|i| task.observe(&world, i)).collect();
                for (i, o) in next_obs.iter().enumerate() {
                    hist.push(i, t, o.clone())?;
                }
                let next_cons = Self::all_consensus(&mut policy, &hist, n, t)?;
                let next_state = task.global_state(&world);
                let next_joint: Vec<f64> = next_cons
                    .iter()
                    .flat_map(|c| c.c_att.iter().copied())
                    .collect();
                let bootstrap = if tr.truncated {
                    self.state.critic.value(&next_state, &next_joint)?
                } else {
                    0.0
                };
                let ended = tr.done || tr.truncated;
                buf.push(StepData {
                    episode,
                    timestep: t - 1,
                    state,
                    next_state,
                    reward: tr.reward,
                    value,
                    done: tr.done,
                    truncated: tr.truncated,
                    bootstrap,
                    obs: std::mem::take(&mut obs),
                    c_att: cons.iter().map(|c| c.c_att.clone()).collect(),
                    categories: cons.iter().map(|c| c.categories.clone()).collect(),
                    next_categories: next_cons.iter().map(|c| c.categories.clone()).collect(),
                    next_c_att: next_cons.iter().map(|c| c.c_att.clone()).collect(),
                    actions,
                    log_probs,
                    layer_inputs: cons.into_iter().map(|c| c.inputs).collect(),
                })?;
                self.state.env_steps += 1;
                if ended {
                    buf.episodes.push(EpisodeResult {
                        success: tr.success,
                        steps_to_complete: if tr.success { t } else { task.step_limit() },
                        total_reward: total,
                    });
                    break;
                }
                obs = next_obs;
                cons = next_cons;
            }
        }
        Ok(buf)
    }

    /// Trains every consensus layer on the buffer's same-timestep agent
    /// groups. Returns the mean per-layer loss.
    pub fn consensus_update(&mut self, buf: &RolloutBuffer) -> Result<Vec<f64>> {
        let layers = self.hcfg().layers.len();
        if !self.state.config.consensus {
            return Ok(vec![0.0; layers]);
        }
        let n = buf.agents;
        let groups: Vec<Vec<ConsensusSample>> = (0..buf.len())
            .map(|t| {
                (0..n)
                    .map(|i| ConsensusSample {
                        episode: buf.episode[t],
                        timestep: buf.timestep[t],
                        inputs: buf.layer_inputs[t * n + i].clone(),
                    })
                    .collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..groups.len()).collect();
        let mut sums = vec![0.0; layers];
        let mut count = 0usize;
        for _ in 0..self.state.config.consensus_epochs {
            order.shuffle(&mut self.state.shuffle_rng);
            for chunk in order.chunks(self.state.config.consensus_minibatch) {
                let batch: Vec<Vec<ConsensusSample>> =
                    chunk.iter().map(|&g| groups[g].clone()).collect();
                let losses = self.state.hierarchy.train_step(&batch)?;
                sums.iter_mut().zip(&losses).for_each(|(s, l)| *s += l);
                count += 1;
            }
        }
        Ok(sums.iter().map(|s| s / count.max(1) as f64).collect())
    }

    /// `[rows, n * d]` consensus inputs for the critic at the given steps.
    fn critic_consensus(
        &self,
        tape: &mut Tape,
        agg: Option<&Bound>,
        cats: &[Vec<ConsensusCategory>],
        steps: &[usize],
    ) -> Result<Var> {
        let n = self.agents();
        let d = self.consensus_dim();
        match agg {
            Some(agg) => {
                let batch: Vec<Vec<ConsensusCategory>> = steps
                    .iter()
                    .flat_map(|&t| (0..n).map(move |i| t * n + i))
                    .map(|r| cats[r].clone())
                    .collect();
                let flat = aggregate_batch(tape, agg, &batch, self.hcfg())?;
                Ok(tape.reshape(flat, vec![steps.len(), n * d])?)
            }
            None => {
                Ok(tape.constant_from(vec![steps.len(), n * d], vec![0.0; steps.len() * n * d])?)
            }
        }
    }

    /// Regression of the critic onto its targets: GAE returns by default,
    /// one-step bootstraps through the target critic when it is enabled.
    /// Returns the full-batch loss measured before any update.
    pub fn critic_update(&mut self, buf: &mut RolloutBuffer) -> Result<f64> {
        if buf.critic_consumed {
            return Err(CoreError::StaleBuffer("critic_update"));
        }
        let returns = buf
            .returns
            .clone()
            .ok_or_else(|| CoreError::Config("critic_update needs computed returns".into()))?;
        let cfg = self.state.config.clone();
        let targets: Vec<f64> = if cfg.target_critic {
            (0..buf.len())
                .map(|t| {
                    let next = if buf.dones[t] {
                        0.0
                    } else {
                        self.state
                            .critic
                            .target_value(&buf.next_states[t], &buf.joint_next_c_att(t))?
                    };
                    Ok(buf.rewards[t] + cfg.gamma * next)
                })
                .collect::<Result<_>>()?
        } else {
            returns
        };
        let mut pre = 0.0;
        for t in 0..buf.len() {
            let v = self
                .state
                .critic
                .value(&buf.states[t], &buf.joint_c_att(t))?;
            pre += (v - targets[t]).powi(2);
        }
        pre /= buf.len() as f64;

        let sd = self.state.critic.state_dim;
        let mut order: Vec<usize> = (0..buf.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.state.shuffle_rng);
            for chunk in order.chunks(cfg.minibatch) {
                let b = chunk.len();
                let mut tape = Tape::new();
                let cb = tape.bind(&self.state.critic.params);
                let ab = cfg
                    .consensus
                    .then(|| tape.bind(&self.state.hierarchy.aggregator));
                let c_all =
                    self.critic_consensus(&mut tape, ab.as_ref(), &buf.categories, chunk)?;
                let states: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&t| buf.states[t].iter().copied())
                    .collect();
                let s = tape.constant_from(vec![b, sd], states)?;
                let x = tape.concat_cols(&[s, c_all])?;
                let v = mlp_forward(&mut tape, &cb, x, &self.state.critic.spec)?;
                let tg =
                    tape.constant_from(vec![b, 1], chunk.iter().map(|&t| targets[t]).collect())?;
                let err = tape.sub(v, tg)?;
                let sq = tape.square(err);
                let loss = tape.mean(sq);
                let grads = tape.backward(loss)?;
                grads.write_to(&cb, &mut self.state.critic.params)?;
                if let Some(ab) = &ab {
                    grads.write_to(ab, &mut self.state.hierarchy.aggregator)?;
                    clip_grad_norm(
                        &mut [
                            &mut self.state.critic.params,
                            &mut self.state.hierarchy.aggregator,
                        ],
                        cfg.max_grad_norm,
                    );
                    adam_step(
                        &mut self.state.aggregator_opt,
                        &mut self.state.hierarchy.aggregator,
                    )?;
                } else {
                    clip_grad_norm(&mut [&mut self.state.critic.params], cfg.max_grad_norm);
                }
                adam_step(&mut self.state.critic_opt, &mut self.state.critic.params)?;
                if let Some(target) = self.state.critic.target.as_mut() {
                    ema_blend(target, &self.state.critic.params, cfg.target_momentum)?;
                }
            }
        }
        buf.critic_consumed = true;
        Ok(pre)
    }

    /// Policy update with the configured objective over `epochs` passes of
    /// shuffled agent-step minibatches.
    pub fn actor_update(&mut self, buf: &mut RolloutBuffer) -> Result<ActorStats> {
        if buf.actor_consumed {
            return Err(CoreError::StaleBuffer("actor_update"));
        }
        let adv = buf
            .advantages
            .clone()
            .ok_or_else(|| CoreError::Config("actor_update needs computed advantages".into()))?;
        let cfg = self.state.config.clone();
        let n = buf.agents;
        let rows = buf.len() * n;
        let mut order: Vec<usize> = (0..rows).collect();
        let (mut loss_sum, mut ent_sum, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.state.shuffle_rng);
            for chunk in order.chunks(cfg.minibatch) {
                let (loss, ent) = self.actor_minibatch(buf, chunk, &adv)?;
                loss_sum += loss;
                ent_sum += ent;
                count += 1;
            }
        }
        buf.actor_consumed = true;
        Ok(ActorStats {
            loss: loss_sum / count as f64,
            entropy: ent_sum / count as f64,
        })
    }

    fn actor_minibatch(
        &mut self,
        buf: &RolloutBuffer,
        chunk: &[usize],
        adv: &[f64],
    ) -> Result<(f64, f64)> {
        let cfg = &self.state.config;
        let n = buf.agents;
        let actor = &self.state.actor;
        let sets = actor.params.len();
        let mut groups: Vec<Vec<usize>> = vec![vec![]; sets];
        for &r in chunk {
            groups[if actor.shared { 0 } else { r % n }].push(r);
        }
        let mut tape = Tape::new();
        let ab = cfg
            .consensus
            .then(|| tape.bind(&self.state.hierarchy.aggregator));
        let mut bounds: Vec<Option<Bound>> = vec![None; sets];
        let mut total: Option<Var> = None;
        let mut ent_total = 0.0;
        let d = self.hcfg().embed_dim;
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let b = rows.len();
            let pb = tape.bind(&actor.params[g]);
            let c = match &ab {
                Some(ab) => {
                    let cats: Vec<Vec<ConsensusCategory>> =
                        rows.iter().map(|&r| buf.categories[r].clone()).collect();
                    aggregate_batch(&mut tape, ab, &cats, self.hcfg())?
                }
                None => tape.constant_from(vec![b, d], vec![0.0; b * d])?,
            };
            let obs: Vec<f64> = rows
                .iter()
                .flat_map(|&r| buf.obs[r].iter().copied())
                .collect();
            let o = tape.constant_from(vec![b, actor.obs_dim], obs)?;
            let mut parts = vec![o, c];
            if actor.shared {
                let mut onehot = vec![0.0; b * n];
                for (k, &r) in rows.iter().enumerate() {
                    onehot[k * n + r % n] = 1.0;
                }
                parts.push(tape.constant_from(vec![b, n], onehot)?);
            }
            let x = tape.concat_cols(&parts)?;
            let logits = mlp_forward(&mut tape, &pb, x, &actor.spec)?;
            let logp_all = tape.log_softmax_rows(logits, 1.0)?;
            let actions: Vec<usize> = rows.iter().map(|&r| buf.actions[r]).collect();
            let logp = tape.pick(logp_all, &actions)?;
            let probs = tape.exp(logp_all);
            let plogp = tape.mul(probs, logp_all)?;
            let neg_ent = tape.sum_cols(plogp)?;
            let entropy = tape.scale(neg_ent, -1.0);
            ent_total += tape.value(entropy).iter().sum::<f64>();
            let old: Vec<f64> = rows.iter().map(|&r| buf.log_probs[r]).collect();
            let a: Vec<f64> = rows.iter().map(|&r| adv[r / n]).collect();
            let loss = self.objective.loss(
                &mut tape,
                &ObjectiveInputs {
                    log_probs: logp,
                    old_log_probs: &old,
                    advantages: &a,
                    entropy,
                },
                cfg,
            )?;
            let weighted = tape.scale(loss, b as f64 / chunk.len() as f64);
            total = Some(match total {
                Some(t) => tape.add(t, weighted)?,
                None => weighted,
            });
            bounds[g] = Some(pb);
        }
        let total = total.ok_or(CoreError::EmptyBatch("actor_update"))?;
        let loss_value = tape.scalar(total);
        let grads = tape.backward(total)?;
        let max_norm = cfg.max_grad_norm;
        let actor = &mut self.state.actor;
        for (g, pb) in bounds.iter().enumerate() {
            if let Some(pb) = pb {
                grads.write_to(pb, &mut actor.params[g])?;
            }
        }
        let mut sets: Vec<&mut ParameterSet> = actor
            .params
            .iter_mut()
            .zip(&bounds)
            .filter(|(_, b)| b.is_some())
            .map(|(p, _)| p)
            .collect();
        if let Some(ab) = &ab {
            grads.write_to(ab, &mut self.state.hierarchy.aggregator)?;
            sets.push(&mut self.state.hierarchy.aggregator);
        }
        clip_grad_norm(&mut sets, max_norm);
        for (g, pb) in bounds.iter().enumerate() {
            if pb.is_some() {
                adam_step(&mut self.state.actor_opt[g], &mut actor.params[g])?;
            }
        }
        if ab.is_some() {
            adam_step(
                &mut self.state.aggregator_opt,
                &mut self.state.hierarchy.aggregator,
            )?;
        }
        Ok((loss_value, ent_total / chunk.len() as f64))
    }

    /// Rollout, consensus training, then critic and actor updates.
    pub fn train_iteration(&mut self) -> Result<MetricsRecord> {
        let start = Instant::now();
        let it = self.state.iteration;
        let mut buf = self
            .collect_rollout()
            .context(|| format!("iteration {it}: rollout"))?;
        let cons_losses = self
            .consensus_update(&buf)
            .context(|| format!("iteration {it}: consensus update"))?;
        compute_returns_advantages(&mut buf, &self.state.config)?;
        let (critic_loss, actor) = if it >= self.state.config.pretrain_iterations as u64 {
            let c = self
                .critic_update(&mut buf)
                .context(|| format!("iteration {it}: critic update"))?;
            let a = self
                .actor_update(&mut buf)
                .context(|| format!("iteration {it}: actor update"))?;
            (c, a)
        } else {
            (
                0.0,
                ActorStats {
                    loss: 0.0,
                    entropy: 0.0,
                },
            )
        };
        self.state.iteration += 1;
        let mut m = self.rollout_metrics(&buf, it);
        for (l, v) in cons_losses.iter().enumerate() {
            m.push(format!("consensus_loss_l{l}"), *v);
        }
        m.push("critic_loss", critic_loss);
        m.push("actor_loss", actor.loss);
        m.push("entropy", actor.entropy);
        m.push("wall_clock_s", start.elapsed().as_secs_f64());
        Ok(m)
    }

    fn rollout_metrics(&self, buf: &RolloutBuffer, iteration: u64) -> MetricsRecord {
        let mut m = MetricsRecord::default();
        let eps = &buf.episodes;
        let ne = eps.len().max(1) as f64;
        m.push("iteration", iteration as f64);
        m.push("env_steps", self.state.env_steps as f64);
        m.push("episodes", eps.len() as f64);
        m.push(
            "mean_episode_reward",
            eps.iter().map(|e| e.total_reward).sum::<f64>() / ne,
        );
        m.push(
            "mean_steps_to_complete",
            eps.iter().map(|e| e.steps_to_complete as f64).sum::<f64>() / ne,
        );
        m.push(
            "success_rate",
            eps.iter().filter(|e| e.success).count() as f64 / ne,
        );
        let layers = self.hcfg().layers.len();
        let n = buf.agents;
        let mut agree = vec![0.0; layers];
        if self.state.config.consensus {
            for t in 0..buf.len() {
                let cats = &buf.categories[t * n..(t + 1) * n];
                for (l, a) in agree.iter_mut().enumerate() {
                    let layer: Vec<ConsensusCategory> = cats.iter().map(|c| c[l]).collect();
                    *a += agreement_rate(&layer);
                }
            }
            agree.iter_mut().for_each(|a| *a /= buf.len().max(1) as f64);
        }
        m.push("agreement_rate", agree.iter().sum::<f64>() / layers as f64);
        for (l, a) in agree.iter().enumerate() {
            m.push(format!("agreement_rate_l{l}"), *a);
        }
        let attention = self.attention_means(buf);
        for (l, a) in attention.iter().enumerate() {
            m.push(format!("attention_l{l}"), *a);
        }
        m
    }

    fn attention_means(&self, buf: &RolloutBuffer) -> Vec<f64> {
        let layers = self.hcfg().layers.len();
        if !self.state.config.consensus || buf.is_empty() {
            return vec![0.0; layers];
        }
        let agg = &self.state.hierarchy.aggregator;
        let mut cache: HashMap<&[ConsensusCategory], Vec<f64>> = HashMap::new();
        let mut sums = vec![0.0; layers];
        for cats in &buf.categories {
            let w = cache.entry(cats).or_insert_with(|| {
                consensus_vector(agg, cats, self.hcfg())
                    .map(|(_, w)| w)
                    .unwrap_or_else(|_| vec![0.0; layers])
            });
            sums.iter_mut().zip(w.iter()).for_each(|(s, x)| *s += x);
        }
        sums.iter()
            .map(|s| s / buf.categories.len() as f64)
            .collect()
    }

    /// Episodes under the current policy, sampled or greedy.
    pub fn evaluate(
        &self,
        episodes: usize,
        greedy: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EpisodeResult>> {
        evaluate_policy(
            self.task.as_ref(),
            self.execution_policy(),
            episodes,
            greedy,
            rng,
        )
    }
}

/// Runs `episodes` episodes with decentralized execution and reports each.
pub fn evaluate_policy(
    task: &dyn Task,
    mut policy: ExecutionPolicy,
    episodes: usize,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeResult>> {
    if episodes == 0 {
        return Err(CoreError::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let n = task.agents();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut env_rng = ChaCha8Rng::from_rng(&mut *rng);
        let mut hist = ObservationHistory::for_layers(n, &policy.hierarchy.layers, task.obs_dim());
        let mut sample_rng = ChaCha8Rng::from_rng(&mut *rng);
        let traj = run_episode(task, &mut env_rng, |world| {
            let t = world.timestep;
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let o = task.observe(world, i);
                hist.push(i, t, o.clone())?;
                let (a, _) = policy.act(i, &o, &hist, t, greedy, &mut sample_rng)?;
                actions.push(a.action);
            }
            Ok(actions)
        })?;
        out.push(crate::envs::episode_metrics(&traj));
    }
    Ok(out)
}

/// Parameters that any update touches, for bitwise no-op checks.
pub fn parameter_snapshot(state: &TrainerState) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    let mut add = |prefix: String, p: &ParameterSet| {
        for (k, t) in p.iter() {
            out.push((format!("{prefix}{k}"), t.data().to_vec()));
        }
    };
    for (g, p) in state.actor.params.iter().enumerate() {
        add(format!("actor{g}."), p);
    }
    add("critic.".into(), &state.critic.params);
    if let Some(t) = &state.critic.target {
        add("critic_target.".into(), t);
    }
    add("aggregator.".into(), &state.hierarchy.aggregator);
    for (l, layer) in state.hierarchy.layers.iter().enumerate() {
        add(format!("layer{l}.student."), &layer.head.student);
        add(format!("layer{l}.teacher."), &layer.head.teacher);
    }
    out
}

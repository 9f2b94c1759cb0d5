//! Shared-latent multi-view data: each sample draws one of `K` latent
//! prototypes, and every agent sees it through its own fixed orthogonal
//! transform plus Gaussian noise.

use hcmarl_autodiff::{adam_step, AdamState, Tape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::consensus::{
    consensus_category, consensus_loss_grouped, update_teacher, ConsensusCategory, ConsensusConfig,
    ConsensusHead,
};
use crate::error::{CoreError, Result};
use crate::hierarchy::agreement_rate;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticViews {
    pub prototypes: Vec<Vec<f64>>,
    /// Row-major `dim x dim` orthogonal matrix per agent.
    pub views: Vec<Vec<f64>>,
    pub noise: f64,
    pub dim: usize,
}

/// One timestep: the latent index and every agent's view of it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub latent: usize,
    pub views: Vec<Vec<f64>>,
}

impl SyntheticViews {
    pub fn new<R: Rng + ?Sized>(
        latents: usize,
        agents: usize,
        dim: usize,
        separation: f64,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if latents == 0 || agents == 0 || dim == 0 {
            return Err(CoreError::Config(
                "synthetic task needs latents, agents and dim >= 1".into(),
            ));
        }
        let prototypes = (0..latents)
            .map(|_| {
                (0..dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let views = (0..agents).map(|_| random_orthogonal(dim, rng)).collect();
        Ok(Self {
            prototypes,
            views,
            noise,
            dim,
        })
    }

    pub fn agents(&self) -> usize {
        self.views.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SyntheticSample {
        let latent = rng.random_range(0..self.prototypes.len());
        self.sample_latent(latent, rng)
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, latent: usize, rng: &mut R) -> SyntheticSample {
        let p = &self.prototypes[latent];
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("valid std");
        let d = self.dim;
        let views = self
            .views
            .iter()
            .map(|m| {
                (0..d)
                    .map(|r| {
                        let clean: f64 = (0..d).map(|c| m[r * d + c] * p[c]).sum();
                        clean
                            + if self.noise > 0.0 {
                                noise.sample(rng)
                            } else {
                                0.0
                            }
                    })
                    .collect()
            })
            .collect();
        SyntheticSample { latent, views }
    }

    /// Rows of a batch, group-major: each sample contributes one row per agent.
    pub fn batch_tensor(samples: &[SyntheticSample], dim: usize) -> Result<Tensor> {
        let data: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.views.iter().flatten().copied())
            .collect();
        let rows = data.len() / dim;
        Ok(Tensor::matrix(rows, dim, data)?)
    }
}

/// Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

/// Mean per-sample agreement rate of the head's categories.
pub fn mean_agreement(
    head: &ConsensusHead,
    cfg: &ConsensusConfig,
    samples: &[SyntheticSample],
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let cats = categories_of(head, cfg, s)?;
        total += agreement_rate(&cats);
    }
    Ok(total / samples.len().max(1) as f64)
}

pub fn categories_of(
    head: &ConsensusHead,
    cfg: &ConsensusConfig,
    s: &SyntheticSample,
) -> Result<Vec<ConsensusCategory>> {
    s.views
        .iter()
        .map(|v| consensus_category(head, v, cfg))
        .collect()
}

/// Shannon entropy (nats) of the empirical category distribution.
pub fn category_entropy(categories: &[ConsensusCategory], k: usize) -> f64 {
    if categories.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; k.max(1)];
    for c in categories {
        if c.index() < counts.len() {
            counts[c.index()] += 1;
        }
    }
    let n = categories.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Trains `head` on freshly drawn batches of `groups` samples for `steps`
/// optimizer steps. Returns the loss of every step.
pub fn train_on_views<R: Rng + ?Sized>(
    head: &mut ConsensusHead,
    cfg: &ConsensusConfig,
    task: &SyntheticViews,
    steps: usize,
    groups: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut opt = AdamState::new(cfg.learning_rate);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let samples: Vec<_> = (0..groups).map(|_| task.sample(rng)).collect();
        let x = SyntheticViews::batch_tensor(&samples, task.dim)?;
        let mut tape = Tape::new();
        let b = tape.bind(&head.student);
        let out = consensus_loss_grouped(&mut tape, head, &b, &x, task.agents(), cfg)?;
        losses.push(tape.scalar(out.loss));
        let g = tape.backward(out.loss)?;
        g.write_to(&b, &mut head.student)?;
        adam_step(&mut opt, &mut head.student)?;
        update_teacher(head, cfg, &out.teacher_logits)?;
    }
    Ok(losses)
}

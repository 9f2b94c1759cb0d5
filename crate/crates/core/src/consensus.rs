//! Teacher/student categorical self-distillation over agents' local views.
//!
//! Every agent's observation of one environment timestep is treated as an
//! augmented view of the same global state. The student is trained so that
//! its distribution for agent `i` matches the (centered, sharpened) teacher
//! distribution of every agent `j`; the teacher tracks the student by EMA.
//! The executed consensus is the argmax of the student distribution.

use hcmarl_autodiff::{
    cross_entropy_soft, ema_blend, mlp_forward, mlp_infer, softmax_vec, Activation, Bound, MlpSpec,
    ParameterSet, Tape, Tensor, Var,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Number of consensus categories K.
    pub categories: usize,
    pub student_temperature: f64,
    pub teacher_temperature: f64,
    pub ema_momentum: f64,
    pub center_momentum: f64,
    pub hidden: Vec<usize>,
    pub input_dim: usize,
    /// Whether the `i == j` terms of the pairwise loss are included.
    pub include_self_pairs: bool,
    pub learning_rate: f64,
}

impl ConsensusConfig {
    pub fn new(input_dim: usize, categories: usize) -> Self {
        Self {
            categories,
            student_temperature: 0.1,
            teacher_temperature: 0.04,
            ema_momentum: 0.99,
            center_momentum: 0.9,
            hidden: vec![64, 64],
            input_dim,
            include_self_pairs: true,
            learning_rate: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        if self.categories == 0 {
            return bad("consensus categories must be >= 1".into());
        }
        if self.input_dim == 0 {
            return bad("consensus input_dim must be positive".into());
        }
        if !(self.student_temperature > 0.0) || !(self.teacher_temperature > 0.0) {
            return bad("consensus temperatures must be positive".into());
        }
        if self.teacher_temperature > self.student_temperature {
            return bad(format!(
                "teacher temperature {} exceeds student temperature {}",
                self.teacher_temperature, self.student_temperature
            ));
        }
        for (name, v) in [
            ("ema_momentum", self.ema_momentum),
            ("center_momentum", self.center_momentum),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("consensus {name} must lie in [0, 1], got {v}"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("consensus encoder widths must be positive".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad("consensus learning rate must be >= 0".into());
        }
        Ok(())
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend(&self.hidden);
        sizes.push(self.categories);
        MlpSpec::new(sizes, Activation::Relu).expect("validated sizes")
    }
}

/// Index of the winning consensus category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConsensusCategory(pub usize);

impl ConsensusCategory {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Student and teacher encoders plus the running teacher-logit center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusHead {
    pub student: ParameterSet,
    pub teacher: ParameterSet,
    pub center: Vec<f64>,
}

impl ConsensusHead {
    /// Fresh head whose teacher starts as an exact copy of the student.
    pub fn new<R: Rng + ?Sized>(cfg: &ConsensusConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let student = cfg.encoder_spec().init(rng, 1.0);
        Ok(Self {
            teacher: student.clone(),
            student,
            center: vec![0.0; cfg.categories],
        })
    }

    pub fn from_parts(
        student: ParameterSet,
        teacher: ParameterSet,
        center: Vec<f64>,
    ) -> Result<Self> {
        student.check_congruent(&teacher)?;
        if center.iter().any(|c| !c.is_finite()) {
            return Err(CoreError::Config("consensus center must be finite".into()));
        }
        Ok(Self {
            student,
            teacher,
            center,
        })
    }

    /// Student probabilities for a batch, outside any training tape.
    pub fn student_probs(&self, x: &Tensor, cfg: &ConsensusConfig) -> Result<Tensor> {
        check_input(x, cfg)?;
        let logits = mlp_infer(&self.student, &cfg.encoder_spec(), x.data())?;
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(cfg.categories) {
            probs.extend(softmax_vec(row, cfg.student_temperature)?);
        }
        Ok(Tensor::matrix(
            logits.len() / cfg.categories,
            cfg.categories,
            probs,
        )?)
    }
}

fn check_input(x: &Tensor, cfg: &ConsensusConfig) -> Result<()> {
    let shape = x.shape();
    let cols = *shape.last().unwrap();
    if cols != cfg.input_dim || shape.len() > 2 {
        return Err(CoreError::Dimension(format!(
            "consensus input has shape {shape:?}, expected [batch, {}]",
            cfg.input_dim
        )));
    }
    if !x.is_finite() {
        return Err(CoreError::Dimension("consensus input is not finite".into()));
    }
    Ok(())
}

fn input_var(tape: &mut Tape, x: &Tensor, cfg: &ConsensusConfig) -> Result<Var> {
    check_input(x, cfg)?;
    let rows = x.len() / cfg.input_dim;
    Ok(tape.constant_from(vec![rows, cfg.input_dim], x.data().to_vec())?)
}

fn student_logits(tape: &mut Tape, student: &Bound, x: Var, cfg: &ConsensusConfig) -> Result<Var> {
    Ok(mlp_forward(tape, student, x, &cfg.encoder_spec())?)
}

/// `softmax(student_logits / tau_s)` on the tape.
pub fn student_distribution(
    tape: &mut Tape,
    student: &Bound,
    x: Var,
    cfg: &ConsensusConfig,
) -> Result<Var> {
    let logits = student_logits(tape, student, x, cfg)?;
    Ok(tape.softmax_rows(logits, cfg.student_temperature)?)
}

/// Teacher output for a batch: `(probs, raw logits)`, where probs are
/// `softmax((logits - center) / tau_t)`. Never recorded on a training tape.
pub fn teacher_distribution(
    head: &ConsensusHead,
    x: &Tensor,
    cfg: &ConsensusConfig,
) -> Result<(Tensor, Tensor)> {
    check_input(x, cfg)?;
    let k = cfg.categories;
    let raw = mlp_infer(&head.teacher, &cfg.encoder_spec(), x.data())?;
    let logits = Tensor::matrix(raw.len() / k, k, raw)?;
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let centered: Vec<f64> = row.iter().zip(&head.center).map(|(l, c)| l - c).collect();
        probs.extend(softmax_vec(&centered, cfg.teacher_temperature)?);
    }
    let probs = Tensor::new(logits.shape().to_vec(), probs)?;
    Ok((probs, logits))
}

/// Pairwise distillation loss for groups of agents observing one timestep.
pub struct ConsensusLoss {
    /// Mean over groups of the per-group pairwise cross-entropy sum.
    pub loss: Var,
    /// Raw teacher logits for every row, for the center update.
    pub teacher_logits: Tensor,
}

/// Pairwise loss over `x`, whose rows are consecutive groups of
/// `group_size` agents, each group sharing one timestep.
///
/// For one group this is `sum_i sum_j CE(P_T(x_j), P_S(x_i))`; with several
/// groups the per-group sums are averaged.
pub fn consensus_loss_grouped(
    tape: &mut Tape,
    head: &ConsensusHead,
    student: &Bound,
    x: &Tensor,
    group_size: usize,
    cfg: &ConsensusConfig,
) -> Result<ConsensusLoss> {
    if x.is_empty() || group_size == 0 {
        return Err(CoreError::EmptyBatch("consensus_loss"));
    }
    let rows = x.len() / cfg.input_dim.max(1);
    if rows % group_size != 0 {
        return Err(CoreError::Dimension(format!(
            "{rows} rows do not split into groups of {group_size}"
        )));
    }
    let (teacher_probs, teacher_logits) = teacher_distribution(head, x, cfg)?;
    let k = cfg.categories;
    let tp = teacher_probs.data();

    let mut target = vec![0.0; rows * k];
    for g in 0..rows / group_size {
        let base = g * group_size;
        let mut sum = vec![0.0; k];
        for j in 0..group_size {
            sum.iter_mut()
                .zip(&tp[(base + j) * k..(base + j + 1) * k])
                .for_each(|(s, p)| *s += p);
        }
        for i in 0..group_size {
            let row = &mut target[(base + i) * k..(base + i + 1) * k];
            row.copy_from_slice(&sum);
            if !cfg.include_self_pairs {
                row.iter_mut()
                    .zip(&tp[(base + i) * k..(base + i + 1) * k])
                    .for_each(|(t, p)| *t -= p);
            }
        }
    }

    let xv = input_var(tape, x, cfg)?;
    let logits = student_logits(tape, student, xv, cfg)?;
    let logp = tape.log_softmax_rows(logits, cfg.student_temperature)?;
    let target = tape.constant_from(vec![rows, k], target)?;
    let total = cross_entropy_soft(tape, target, logp)?;
    let loss = tape.scale(total, group_size as f64 / rows as f64);
    Ok(ConsensusLoss {
        loss,
        teacher_logits,
    })
}

/// Pairwise loss for a single group of agents (`inputs` is `[n_agents, d]`).
pub fn consensus_loss(
    tape: &mut Tape,
    head: &ConsensusHead,
    student: &Bound,
    inputs: &Tensor,
    cfg: &ConsensusConfig,
) -> Result<ConsensusLoss> {
    let rows = inputs.len() / cfg.input_dim.max(1);
    consensus_loss_grouped(tape, head, student, inputs, rows, cfg)
}

/// Argmax of a probability row; ties go to the smallest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Consensus category of a single observation (or stacked window).
pub fn consensus_category(
    head: &ConsensusHead,
    x: &[f64],
    cfg: &ConsensusConfig,
) -> Result<ConsensusCategory> {
    if x.len() != cfg.input_dim {
        return Err(CoreError::Dimension(format!(
            "consensus input has {} values, expected {}",
            x.len(),
            cfg.input_dim
        )));
    }
    let probs = head.student_probs(&Tensor::row(x.to_vec()), cfg)?;
    Ok(ConsensusCategory(argmax(probs.data())))
}

/// EMA step of the teacher toward the student, then the center update
/// `center <- m * center + (1 - m) * mean(batch_teacher_logits)`.
pub fn update_teacher(
    head: &mut ConsensusHead,
    cfg: &ConsensusConfig,
    batch_teacher_logits: &Tensor,
) -> Result<()> {
    ema_blend(&mut head.teacher, &head.student, cfg.ema_momentum)?;
    let k = cfg.categories;
    if batch_teacher_logits.len() % k != 0 || batch_teacher_logits.is_empty() {
        return Err(CoreError::Dimension(format!(
            "teacher logits of length {} are not rows of {k}",
            batch_teacher_logits.len()
        )));
    }
    if cfg.center_momentum == 1.0 {
        return Ok(());
    }
    let rows = batch_teacher_logits.len() / k;
    let mut mean = vec![0.0; k];
    for row in batch_teacher_logits.data().chunks(k) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    let m = cfg.center_momentum;
    for (c, s) in head.center.iter_mut().zip(&mean) {
        *c = m * *c + (1.0 - m) * (s / rows as f64);
    }
    Ok(())
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::tensor::ParameterSet;

/// Adam with bias correction. Moment buffers are created lazily on the
/// first update of each parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }
}

/// One Adam update of every parameter in `params`, then clears the grads.
///
/// Fails without touching anything if any parameter lacks a gradient.
pub fn adam_step(state: &mut AdamState, params: &mut ParameterSet) -> Result<()> {
    for (name, t) in params.iter() {
        match t.grad() {
            Some(g) if g.len() == t.len() => {}
            Some(_) => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("gradient of `{name}` has the wrong length"),
                })
            }
            None => return Err(AutodiffError::MissingGrad(name.clone())),
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - state.beta1.powf(t);
    let c2 = 1.0 - state.beta2.powf(t);
    for (name, tensor) in params.iter_mut() {
        let grad = tensor.grad().expect("checked above").to_vec();
        let n = grad.len();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        for (((p, g), mi), vi) in tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * g;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        tensor.clear_grad();
    }
    Ok(())
}

/// Rescales the gradients of all sets so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(sets: &mut [&mut ParameterSet], max_norm: f64) -> f64 {
    let total: f64 = sets
        .iter()
        .flat_map(|s| s.iter())
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && total > max_norm {
        let scale = max_norm / total;
        for set in sets.iter_mut() {
            for (_, t) in set.iter_mut() {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|x| *x *= scale);
                }
            }
        }
    }
    total
}

/// `teacher <- momentum * teacher + (1 - momentum) * student`, elementwise.
///
/// `momentum = 1` leaves the teacher untouched and `momentum = 0` copies the
/// student exactly; elements already equal to the student are left as is.
pub fn ema_blend(teacher: &mut ParameterSet, student: &ParameterSet, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(AutodiffError::InvalidArgument(format!(
            "ema momentum must lie in [0, 1], got {momentum}"
        )));
    }
    teacher.check_congruent(student)?;
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
            if momentum == 0.0 {
                *tv = *sv;
            } else if momentum < 1.0 && *tv != *sv {
                *tv = momentum * *tv + (1.0 - momentum) * sv;
            }
        }
    }
    Ok(())
}

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, AutodiffError, Result};
use crate::tape::{Bound, Tape, Var};
use crate::tensor::{ParameterSet, Tensor};

/// Probability floor used by [`cross_entropy_soft`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Tanh | Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(AutodiffError::InvalidArgument(format!(
                "unknown nonlinearity `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// Layer widths `[in, h1, ..., out]` of a fully connected network. The
/// activation is applied after every layer but the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(AutodiffError::InvalidArgument(format!(
                "mlp needs at least two positive layer sizes, got {sizes:?}"
            )));
        }
        Ok(Self { sizes, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(layer: usize) -> String {
        format!("l{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("l{layer}.bias")
    }

    /// Gaussian fan-in initialization with zero biases; the output layer is
    /// scaled by `output_gain`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, output_gain: f64) -> ParameterSet {
        let mut params = ParameterSet::new();
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == self.layers() {
                output_gain
            } else {
                self.activation.init_gain()
            };
            let std = gain / (fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("valid std");
            let w = (0..fan_in * fan_out)
                .map(|_| if gain == 0.0 { 0.0 } else { dist.sample(rng) })
                .collect();
            params.insert(
                Self::weight_name(l),
                Tensor::matrix(fan_in, fan_out, w).expect("weight shape"),
            );
            params.insert(Self::bias_name(l), Tensor::zeros(vec![fan_out]));
        }
        params
    }
}

/// Forward pass of a dense network. `input` is `[batch, in]` (a bare vector
/// is treated as a single row).
pub fn mlp_forward(tape: &mut Tape, params: &Bound, input: Var, spec: &MlpSpec) -> Result<Var> {
    let mut x = match *tape.shape(input) {
        [n] => tape.reshape(input, vec![1, n])?,
        _ => input,
    };
    for l in 0..spec.layers() {
        let w = params.get(&MlpSpec::weight_name(l))?;
        let b = params.get(&MlpSpec::bias_name(l))?;
        let in_dim = tape.shape(x)[1];
        let expect = (spec.sizes[l], spec.sizes[l + 1]);
        if tape.shape(w) != [expect.0, expect.1] || tape.value(b).len() != expect.1 {
            return Err(shape_err(
                "mlp_forward",
                format!(
                    "layer {l}: parameters are {:?}/{:?}, spec wants [{}x{}]",
                    tape.shape(w),
                    tape.shape(b),
                    expect.0,
                    expect.1
                ),
            ));
        }
        if in_dim != expect.0 {
            return Err(shape_err(
                "mlp_forward",
                format!(
                    "layer {l}: input has {in_dim} features, layer expects {}",
                    expect.0
                ),
            ));
        }
        let h = tape.matmul(x, w)?;
        let h = tape.add_row(h, b)?;
        x = if l + 1 < spec.layers() {
            spec.activation.apply(tape, h)
        } else {
            h
        };
    }
    Ok(x)
}

/// Tape-free forward pass over `input.len() / in` rows, bitwise equal to
/// [`mlp_forward`] on the same values.
pub fn mlp_infer(params: &ParameterSet, spec: &MlpSpec, input: &[f64]) -> Result<Vec<f64>> {
    let in_dim = spec.input_dim();
    if input.is_empty() || input.len() % in_dim != 0 {
        return Err(shape_err(
            "mlp_infer",
            format!(
                "layer 0: {} values do not form rows of {in_dim}",
                input.len()
            ),
        ));
    }
    let rows = input.len() / in_dim;
    let mut x = input.to_vec();
    for l in 0..spec.layers() {
        let w = params.get(&MlpSpec::weight_name(l))?;
        let b = params.get(&MlpSpec::bias_name(l))?;
        let (k, n) = (spec.sizes[l], spec.sizes[l + 1]);
        if w.shape() != [k, n] || b.len() != n {
            return Err(shape_err(
                "mlp_infer",
                format!(
                    "layer {l}: parameters are {:?}/{:?}, spec wants [{k}x{n}]",
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        let (wd, bd) = (w.data(), b.data());
        let mut out = vec![0.0; rows * n];
        for i in 0..rows {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = x[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, bv) in row.iter_mut().zip(&wd[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
            for (o, bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
        if l + 1 < spec.layers() {
            match spec.activation {
                Activation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Identity => {}
            }
        }
        x = out;
    }
    Ok(x)
}

/// Row-wise `softmax(logits / temperature)`.
pub fn softmax(tape: &mut Tape, logits: Var, temperature: f64) -> Result<Var> {
    tape.softmax_rows(logits, temperature)
}

/// Plain-slice softmax for inference paths that do not need a tape.
pub fn softmax_vec(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(AutodiffError::NonFinite("softmax"));
    }
    let mut out = logits.to_vec();
    crate::tape::softmax_in_place(&mut out, temperature);
    Ok(out)
}

/// `-sum_rows sum_c target[r, c] * log pred[r, c]`.
///
/// `target` is treated as a constant (gradient-stopped). Log-probabilities
/// are floored at `ln(PROB_FLOOR)` so a zero predicted probability never
/// yields an infinite loss.
pub fn cross_entropy_soft(tape: &mut Tape, target: Var, pred_log_probs: Var) -> Result<Var> {
    if tape.shape(target) != tape.shape(pred_log_probs) {
        return Err(shape_err(
            "cross_entropy_soft",
            format!(
                "target {:?} vs prediction {:?}",
                tape.shape(target),
                tape.shape(pred_log_probs)
            ),
        ));
    }
    let target = tape.detach(target);
    let floored = tape.floor_max(pred_log_probs, PROB_FLOOR.ln());
    let prod = tape.mul(target, floored)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0))
}

/// Head split of a scaled dot-product self-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    dim: usize,
    heads: usize,
}

impl AttentionSpec {
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        if dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "embedding dim {dim} is not divisible into {heads} heads"
            )));
        }
        Ok(Self { dim, heads })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn query_name(prefix: &str) -> String {
        format!("{prefix}wq")
    }

    pub fn key_name(prefix: &str) -> String {
        format!("{prefix}wk")
    }

    pub fn value_name(prefix: &str) -> String {
        format!("{prefix}wv")
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, prefix: &str, params: &mut ParameterSet) {
        let dist = Normal::new(0.0, 1.0 / (self.dim as f64).sqrt()).expect("valid std");
        for name in [
            Self::query_name(prefix),
            Self::key_name(prefix),
            Self::value_name(prefix),
        ] {
            let w = (0..self.dim * self.dim).map(|_| dist.sample(rng)).collect();
            params.insert(name, Tensor::matrix(self.dim, self.dim, w).expect("square"));
        }
    }
}

pub struct AttentionOutput {
    /// `[tokens, dim]`, the per-head outputs concatenated along columns.
    pub output: Var,
    /// One `[tokens, tokens]` row-stochastic weight matrix per head.
    pub weights: Vec<Var>,
}

/// Multi-head self-attention over the rows of `tokens`.
///
/// Each head projects the tokens with its slice of `wq`, `wk`, `wv`, takes
/// `softmax(Q K^T / sqrt(head_dim))` over the token axis, and mixes the value
/// rows. Head outputs are concatenated; there is no output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    params: &Bound,
    prefix: &str,
    tokens: Var,
    spec: &AttentionSpec,
) -> Result<AttentionOutput> {
    let [_, d] = *tape.shape(tokens) else {
        return Err(shape_err(
            "multi_head_attention",
            format!("tokens must be a matrix, got {:?}", tape.shape(tokens)),
        ));
    };
    if d != spec.dim {
        return Err(shape_err(
            "multi_head_attention",
            format!("token width {d} vs attention dim {}", spec.dim),
        ));
    }
    let wq = params.get(&AttentionSpec::query_name(prefix))?;
    let wk = params.get(&AttentionSpec::key_name(prefix))?;
    let wv = params.get(&AttentionSpec::value_name(prefix))?;
    let q = tape.matmul(tokens, wq)?;
    let k = tape.matmul(tokens, wk)?;
    let v = tape.matmul(tokens, wv)?;

    let hd = spec.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(spec.heads);
    let mut weights = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let w = tape.softmax_rows(scores, 1.0)?;
        outs.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let output = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    Ok(AttentionOutput { output, weights })
}

//! Dynamic reverse-mode tape.
//!
//! Every forward operation appends a node holding its output value and the
//! indices of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! applies each op's vector-Jacobian product. A tape can be differentiated
//! once; build a new one for the next forward pass.

use std::collections::BTreeMap;

use crate::error::{shape_err, AutodiffError, Result};
use crate::tensor::{ParameterSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    FloorMax(Var, f64),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    MeanRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Parameter names bound to tape leaves.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        [n] => Ok((1, n)),
        _ => Err(shape_err(op, format!("expected a matrix, got {shape:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).data[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node shape")
    }

    /// Gradient-free input.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    /// Input that receives a gradient.
    pub fn variable(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&mut self, params: &ParameterSet) -> Bound {
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), self.variable(t)))
            .collect();
        Bound { vars }
    }

    /// Registers every parameter as a constant (no gradient flows into it).
    pub fn bind_frozen(&mut self, params: &ParameterSet) -> Bound {
        let vars = params
            .iter()
            .map(|(name, t)| (name.clone(), self.constant(t)))
            .collect();
        Bound { vars }
    }

    /// Gradient-stopped copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, data) = (n.shape.clone(), n.data.clone());
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.shape(a), "matmul")?;
        let (k2, n) = dims2(self.shape(b), "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let (ad, bd) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Adds a row vector `b` (length n) to every row of `a` (m x n).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "add_row")?;
        if self.value(b).len() != n {
            return Err(shape_err(
                "add_row",
                format!("row of {} vs {n} columns", self.value(b).len()),
            ));
        }
        let bd = self.value(b);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bd[i % n])
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::AddRow(a, b), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// `max(a, floor)`; the gradient is zero wherever the floor is active.
    pub fn floor_max(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| x.max(floor), Op::FloorMax(a, floor))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Row-wise `softmax(a / temperature)`.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "softmax")?;
        check_temperature(temperature)?;
        if self.value(a).iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite("softmax"));
        }
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row, temperature);
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        debug_assert_eq!(out.len(), m * n);
        Ok(self.push(shape, out, Op::Softmax(a, temperature), rg))
    }

    /// Row-wise `log_softmax(a / temperature)`.
    pub fn log_softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let (_, n) = dims2(self.shape(a), "log_softmax")?;
        check_temperature(temperature)?;
        if self.value(a).iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite("log_softmax"));
        }
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) / temperature;
            let lse = row
                .iter()
                .map(|x| (x / temperature - max).exp())
                .sum::<f64>()
                .ln()
                + max;
            row.iter_mut().for_each(|x| *x = *x / temperature - lse);
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::LogSoftmax(a, temperature), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::MeanAll(a), rg)
    }

    /// Sums each row of an m x n matrix, giving a length-m vector.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "sum_cols")?;
        let out = self.value(a).chunks(n).map(|r| r.iter().sum()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m], out, Op::SumCols(a), rg))
    }

    /// Averages the rows of an m x n matrix, giving a 1 x n matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "mean_rows")?;
        let mut out = vec![0.0; n];
        for row in self.value(a).chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(vec![1, n], out, Op::MeanRows(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "transpose")?;
        let d = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| dims2(self.shape(p), "concat_cols"))
            .collect::<Result<_>>()?;
        let m = dims[0].0;
        if dims.iter().any(|d| d.0 != m) {
            return Err(shape_err("concat_cols", format!("row counts {dims:?}")));
        }
        let n: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![m, n], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| dims2(self.shape(p), "concat_rows"))
            .collect::<Result<_>>()?;
        let n = dims[0].1;
        if dims.iter().any(|d| d.1 != n) {
            return Err(shape_err("concat_rows", format!("column counts {dims:?}")));
        }
        let m: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![m, n], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let d = self.value(a);
        let out = (0..m)
            .flat_map(|i| d[i * n + start..i * n + start + len].iter().copied())
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, len], out, Op::SliceCols(a, start), rg))
    }

    /// Selects rows of a table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (r, n) = dims2(self.shape(table), "gather_rows")?;
        if rows.is_empty() {
            return Err(shape_err("gather_rows", "no rows requested"));
        }
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for table with {r} rows"),
            ));
        }
        let d = self.value(table);
        let out = rows
            .iter()
            .flat_map(|&i| d[i * n..(i + 1) * n].iter().copied())
            .collect();
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![rows.len(), n],
            out,
            Op::GatherRows(table, rows.to_vec()),
            rg,
        ))
    }

    /// Picks one column per row: `out[i] = a[i, cols[i]]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "pick")?;
        if cols.len() != m {
            return Err(shape_err(
                "pick",
                format!("{} indices for {m} rows", cols.len()),
            ));
        }
        if let Some(bad) = cols.iter().find(|&&c| c >= n) {
            return Err(shape_err("pick", format!("column {bad} out of range {n}")));
        }
        let d = self.value(a);
        let out = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| d[i * n + c])
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m], out, Op::Pick(a, cols.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} into {shape:?}", self.shape(a)),
            ));
        }
        let data = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, data, Op::Reshape(a), rg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.node(loss).data.len() != 1 {
            return Err(AutodiffError::NotScalar(self.node(loss).shape.clone()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[i].requires_grad && g.iter().any(|x| !x.is_finite()) {
                    return Err(AutodiffError::NonFiniteGradient(i));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a), "").unwrap();
                let n = node.shape[1];
                let (ad, bd) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] = g[i * n..(i + 1) * n]
                                .iter()
                                .zip(brow)
                                .map(|(x, y)| x * y)
                                .sum();
                        }
                    }
                    send(*a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, x)| *o += av * x);
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                send(*a, g.to_vec());
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                send(*b, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a), self.value(*b));
                send(*a, g.iter().zip(bd).map(|(x, y)| x * y).collect());
                send(*b, g.iter().zip(ad).map(|(x, y)| x * y).collect());
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (self.value(*a), self.value(*b));
                let take_a: Vec<bool> = ad.iter().zip(bd).map(|(x, y)| x <= y).collect();
                send(
                    *a,
                    g.iter()
                        .zip(&take_a)
                        .map(|(x, &t)| if t { *x } else { 0.0 })
                        .collect(),
                );
                send(
                    *b,
                    g.iter()
                        .zip(&take_a)
                        .map(|(x, &t)| if t { 0.0 } else { *x })
                        .collect(),
                );
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|x| x * s).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Tanh(a) => send(
                *a,
                g.iter()
                    .zip(&node.data)
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect(),
            ),
            Op::Relu(a) => send(
                *a,
                g.iter()
                    .zip(self.value(*a))
                    .map(|(x, i)| if *i > 0.0 { *x } else { 0.0 })
                    .collect(),
            ),
            Op::Exp(a) => send(*a, g.iter().zip(&node.data).map(|(x, y)| x * y).collect()),
            Op::Square(a) => send(
                *a,
                g.iter()
                    .zip(self.value(*a))
                    .map(|(x, i)| 2.0 * x * i)
                    .collect(),
            ),
            Op::FloorMax(a, floor) => send(
                *a,
                g.iter()
                    .zip(self.value(*a))
                    .map(|(x, i)| if *i > *floor { *x } else { 0.0 })
                    .collect(),
            ),
            Op::Clamp(a, lo, hi) => send(
                *a,
                g.iter()
                    .zip(self.value(*a))
                    .map(|(x, i)| if *i > *lo && *i < *hi { *x } else { 0.0 })
                    .collect(),
            ),
            Op::Softmax(a, t) => {
                let n = *node.shape.last().unwrap();
                let mut ga = vec![0.0; g.len()];
                for ((gr, pr), out) in g.chunks(n).zip(node.data.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(pr).map(|(x, p)| x * p).sum();
                    for ((o, x), p) in out.iter_mut().zip(gr).zip(pr) {
                        *o = p * (x - dot) / t;
                    }
                }
                send(*a, ga);
            }
            Op::LogSoftmax(a, t) => {
                let n = *node.shape.last().unwrap();
                let mut ga = vec![0.0; g.len()];
                for ((gr, lr), out) in g.chunks(n).zip(node.data.chunks(n)).zip(ga.chunks_mut(n)) {
                    let total: f64 = gr.iter().sum();
                    for ((o, x), l) in out.iter_mut().zip(gr).zip(lr) {
                        *o = (x - l.exp() * total) / t;
                    }
                }
                send(*a, ga);
            }
            Op::SumAll(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::MeanAll(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::SumCols(a) => {
                let (_, n) = dims2(self.shape(*a), "").unwrap();
                send(
                    *a,
                    g.iter().flat_map(|x| std::iter::repeat_n(*x, n)).collect(),
                );
            }
            Op::MeanRows(a) => {
                let (m, _) = dims2(self.shape(*a), "").unwrap();
                let scaled: Vec<f64> = g.iter().map(|x| x / m as f64).collect();
                send(*a, (0..m).flat_map(|_| scaled.iter().copied()).collect());
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(self.shape(*a), "").unwrap();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                send(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let m = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = dims2(self.shape(p), "").unwrap();
                    let gp = (0..m)
                        .flat_map(|i| {
                            g[i * total + offset..i * total + offset + c]
                                .iter()
                                .copied()
                        })
                        .collect();
                    send(p, gp);
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    send(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = dims2(self.shape(*a), "").unwrap();
                let len = node.shape[1];
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                send(*a, ga);
            }
            Op::GatherRows(table, rows) => {
                let (r, n) = dims2(self.shape(*table), "").unwrap();
                let mut gt = vec![0.0; r * n];
                for (k, &row) in rows.iter().enumerate() {
                    gt[row * n..(row + 1) * n]
                        .iter_mut()
                        .zip(&g[k * n..(k + 1) * n])
                        .for_each(|(o, x)| *o += x);
                }
                send(*table, gt);
            }
            Op::Pick(a, cols) => {
                let (m, n) = dims2(self.shape(*a), "").unwrap();
                let mut ga = vec![0.0; m * n];
                for (i, &c) in cols.iter().enumerate() {
                    ga[i * n + c] = g[i];
                }
                send(*a, ga);
            }
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(AutodiffError::InvalidArgument(format!(
            "temperature must be positive, got {t}"
        )))
    }
}

/// Numerically stable in-place `softmax(row / temperature)`.
pub fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// Result of a backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the gradient of every bound parameter into `params`.
    /// Parameters the loss does not reach receive an explicit zero.
    pub fn write_to(&self, bound: &Bound, params: &mut ParameterSet) -> Result<()> {
        for (name, &var) in bound.iter() {
            let t = params.get_mut(name)?;
            match self.get(var) {
                Some(g) => t.accumulate_grad(g)?,
                None => {
                    let zeros = vec![0.0; t.len()];
                    t.accumulate_grad(&zeros)?
                }
            }
        }
        Ok(())
    }
}

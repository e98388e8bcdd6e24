//! Dense rank-2 math and a minimal reverse-mode differentiation tape.
//!
//! Everything is 64-bit and explicitly shaped; the only broadcast is the
//! per-row bias add. The [`Graph`] records eagerly-evaluated ops and
//! replays them backwards once per [`Graph::backward`] call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major matrix of `f64`. Vectors are 1xN or Nx1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} values for shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Glorot-uniform initialization for an affine weight of this shape.
    pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Tensor { rows, cols, data }
    }

    /// Gaussian initialization (used for embedding tables).
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        // Box-Muller keeps us off distribution crates.
        let mut data = Vec::with_capacity(rows * cols);
        while data.len() < rows * cols {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(r * theta.cos() * std);
            if data.len() < rows * cols {
                data.push(r * theta.sin() * std);
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] += bias.data[j];
            }
        }
        Ok(out)
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "div", |a, b| a / b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows);
        for t in parts {
            if t.rows != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: (rows, 0),
                    right: t.shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(i));
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "gather index {} out of {} rows",
                    i, self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn row_sum(&self) -> Tensor {
        let data = (0..self.rows)
            .map(|i| self.row(i).iter().sum())
            .collect();
        Tensor {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    pub fn col_sum(&self) -> Tensor {
        let mut data = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, &v) in data.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        Tensor {
            rows: 1,
            cols: self.cols,
            data,
        }
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^t) without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Custom-gradient hook: given (upstream grad, parent values, output value),
/// produce one gradient per parent.
pub type CustomVjp = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    Sigmoid(usize),
    Concat(Vec<usize>),
    Gather(usize, Vec<usize>),
    RowSum(usize),
    ColSum(usize),
    Sum(usize),
    LogisticLoss(usize, Vec<f64>),
    Custom(Vec<usize>, CustomVjp),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a parameter leaf; zeros if the leaf never reached the
    /// loss.
    pub fn take(&mut self, id: NodeId, shape: (usize, usize)) -> Tensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

/// Recorded computation over eagerly evaluated tensors.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Insert a non-trainable value.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a trainable parameter (gradient will be accumulated).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a.0, b.0), needs))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(x).add_bias(self.value(bias))?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(v, Op::AddBias(x.0, bias.0), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a.0, b.0), needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a.0, b.0), needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a.0, b.0), needs))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).div(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Div(a.0, b.0), needs))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).scale(c);
        let needs = self.needs(x);
        self.push(v, Op::Scale(x.0, c), needs)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v + c);
        let needs = self.needs(x);
        self.push(v, Op::AddConst(x.0), needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).relu();
        let needs = self.needs(x);
        self.push(v, Op::Relu(x.0), needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).sigmoid();
        let needs = self.needs(x);
        self.push(v, Op::Sigmoid(x.0), needs)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect()), needs))
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(table).gather_rows(indices)?;
        let needs = self.needs(table);
        Ok(self.push(v, Op::Gather(table.0, indices.to_vec()), needs))
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).row_sum();
        let needs = self.needs(x);
        self.push(v, Op::RowSum(x.0), needs)
    }

    pub fn col_sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).col_sum();
        let needs = self.needs(x);
        self.push(v, Op::ColSum(x.0), needs)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum_all());
        let needs = self.needs(x);
        self.push(v, Op::Sum(x.0), needs)
    }

    /// Σ_i w̃_i · v_i per row: elementwise product then row sum.
    pub fn weighted_sum(&mut self, weights: NodeId, values: NodeId) -> Result<NodeId> {
        let prod = self.mul(weights, values)?;
        Ok(self.row_sum(prod))
    }

    /// Mean binary cross-entropy over logits, evaluated as
    /// `softplus((1-2y)·z)` which is exact for both labels without
    /// cancellation. `labels` must be 0/1.
    pub fn logistic_loss(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let z = self.value(logits);
        if z.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "logistic_loss",
                left: z.shape(),
                right: (labels.len(), 1),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n = labels.len() as f64;
        let loss = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus((1.0 - 2.0 * y) * z))
            .sum::<f64>()
            / n;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::LogisticLoss(logits.0, labels.to_vec()),
            needs,
        ))
    }

    /// Attach an externally computed value with a custom backward rule.
    pub fn custom(&mut self, parents: &[NodeId], value: Tensor, vjp: CustomVjp) -> NodeId {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push(
            value,
            Op::Custom(parents.iter().map(|p| p.0).collect(), vjp),
            needs,
        )
    }

    /// Reverse-mode sweep from a scalar loss. Each node is visited exactly
    /// once, in reverse insertion order.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let da = g.matmul(&self.nodes[b].value.transpose())?;
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[b].needs_grad {
                        let db = self.nodes[a].value.transpose().matmul(&g)?;
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    if self.nodes[bias].needs_grad {
                        accumulate(&mut grads[bias], g.col_sum());
                    }
                    if self.nodes[x].needs_grad {
                        accumulate(&mut grads[x], g);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b].needs_grad {
                        accumulate(&mut grads[b], g.clone());
                    }
                    if self.nodes[a].needs_grad {
                        accumulate(&mut grads[a], g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b].needs_grad {
                        accumulate(&mut grads[b], g.scale(-1.0));
                    }
                    if self.nodes[a].needs_grad {
                        accumulate(&mut grads[a], g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let da = g.mul(&self.nodes[b].value)?;
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[b].needs_grad {
                        let db = g.mul(&self.nodes[a].value)?;
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let da = g.div(&self.nodes[b].value)?;
                        accumulate(&mut grads[a], da);
                    }
                    if self.nodes[b].needs_grad {
                        // d(a/b)/db = -a / b^2
                        let bb = self.nodes[b].value.mul(&self.nodes[b].value)?;
                        let db = g.mul(&self.nodes[a].value)?.div(&bb)?.scale(-1.0);
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    if self.nodes[x].needs_grad {
                        accumulate(&mut grads[x], g.scale(c));
                    }
                }
                Op::AddConst(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        accumulate(&mut grads[x], g);
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let mask = self.nodes[x].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                        accumulate(&mut grads[x], g.mul(&mask)?);
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let s = &self.nodes[id].value;
                        let ds = s.map(|p| p * (1.0 - p));
                        accumulate(&mut grads[x], g.mul(&ds)?);
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let rows = g.rows();
                    let mut col = 0;
                    for p in parts {
                        let width = self.nodes[p].value.cols();
                        if self.nodes[p].needs_grad {
                            let mut dp = Tensor::zeros(rows, width);
                            for i in 0..rows {
                                let src = &g.row(i)[col..col + width];
                                dp.data_mut()[i * width..(i + 1) * width].copy_from_slice(src);
                            }
                            accumulate(&mut grads[p], dp);
                        }
                        col += width;
                    }
                }
                Op::Gather(table, indices) => {
                    let (table, indices) = (*table, indices.clone());
                    if self.nodes[table].needs_grad {
                        let shape = self.nodes[table].value.shape();
                        let cols = shape.1;
                        let mut dt = Tensor::zeros(shape.0, shape.1);
                        for (r, &idx) in indices.iter().enumerate() {
                            let src = g.row(r);
                            let dst = &mut dt.data_mut()[idx * cols..(idx + 1) * cols];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        accumulate(&mut grads[table], dt);
                    }
                }
                Op::RowSum(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let (rows, cols) = self.nodes[x].value.shape();
                        let mut dx = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            let gi = g.at(i, 0);
                            for v in &mut dx.data_mut()[i * cols..(i + 1) * cols] {
                                *v = gi;
                            }
                        }
                        accumulate(&mut grads[x], dx);
                    }
                }
                Op::ColSum(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let (rows, cols) = self.nodes[x].value.shape();
                        let mut dx = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            dx.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(g.data());
                        }
                        accumulate(&mut grads[x], dx);
                    }
                }
                Op::Sum(x) => {
                    let x = *x;
                    if self.nodes[x].needs_grad {
                        let (rows, cols) = self.nodes[x].value.shape();
                        let gi = g.item();
                        let dx = Tensor::from_vec(rows, cols, vec![gi; rows * cols])?;
                        accumulate(&mut grads[x], dx);
                    }
                }
                Op::LogisticLoss(logits, labels) => {
                    let (logits, labels) = (*logits, labels.clone());
                    if self.nodes[logits].needs_grad {
                        let z = &self.nodes[logits].value;
                        let n = labels.len() as f64;
                        let gi = g.item();
                        let data: Vec<f64> = z
                            .data()
                            .iter()
                            .zip(&labels)
                            .map(|(&z, &y)| gi * (sigmoid(z) - y) / n)
                            .collect();
                        let dz = Tensor::from_vec(z.rows(), z.cols(), data)?;
                        accumulate(&mut grads[logits], dz);
                    }
                }
                Op::Custom(parents, vjp) => {
                    let parents = parents.clone();
                    let parent_vals: Vec<&Tensor> =
                        parents.iter().map(|&p| &self.nodes[p].value).collect();
                    let out_val = &self.nodes[id].value;
                    let parent_grads = vjp(&g, &parent_vals, out_val);
                    debug_assert_eq!(parent_grads.len(), parents.len());
                    for (p, dp) in parents.iter().zip(parent_grads) {
                        if self.nodes[*p].needs_grad {
                            accumulate(&mut grads[*p], dp);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// Central-difference gradient check.
///
/// `loss_fn` re-evaluates the loss for perturbed parameters; `analytic` are
/// the gradients under test, one per parameter tensor. At most `max_coords`
/// coordinates per tensor are sampled. Returns the max relative error.
pub fn grad_check<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    loss_fn: F,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> f64
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (t, grad) in params.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, max_coords).into_vec()
        };
        for c in coords {
            let orig = work[t].data()[c];
            work[t].data_mut()[c] = orig + h;
            let up = loss_fn(&work);
            work[t].data_mut()[c] = orig - h;
            let down = loss_fn(&work);
            work[t].data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[t].data()[c];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    worst
}

//! Dense tensors and a define-by-run reverse-mode tape.
//!
//! A [`Tensor`] is a plain row-major `f64` array. A [`Tape`] records the
//! operations applied to tensors wrapped as [`Var`] handles; calling
//! [`Tape::backward`] on a scalar walks the record in reverse and
//! accumulates gradients into every leaf that requires one.
//!
//! There is no implicit broadcasting. The only mixed-shape operations are
//! [`Tape::scale`] (scalar times tensor) and [`Tape::add_bias`], which adds
//! a length-`n` vector to each row of an `m x n` matrix.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Build an `m x n` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Contract(format!(
                "{op} expects a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
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
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, n) = self.dims2("add_bias")?;
        if bias.shape != [n] {
            return Err(Error::dim("add_bias", &self.shape, &bias.shape));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor applied to vector norms inside cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    RowCosine {
        a: Var,
        b: Var,
        raw: Vec<f64>,
    },
    RowNorm(Var),
    StackCols(Vec<Var>),
    LogSumExpRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

/// Records operations for one forward pass.
///
/// Nodes are appended in creation order, so the record is topologically
/// sorted by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value with no path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = self.any_grad(inputs);
        self.push(value, requires_grad, op)
    }

    fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
        if t.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain {
                op,
                detail: "result is not finite".into(),
            })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, &[a, b], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.record(value, &[a], Op::Transpose(a)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_bias(self.value(bias))?;
        Ok(self.record(value, &[x, bias], Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        Ok(self.record(value, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.record(value, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.record(value, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.record(value, &[a], Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        self.record(value, &[a], Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        Self::check_finite("exp", &value)?;
        Ok(self.record(value, &[a], Op::Exp(a)))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data.iter().find(|&&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.record(value, &[a], Op::Log(a)))
    }

    /// `ln(1 + e^x)` without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.record(value, &[a], Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        self.record(value, &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64);
        Ok(self.record(value, &[a], Op::Mean(a)))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, max-shifted.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, classes) = t.dims2("cross_entropy")?;
        if rows == 0 {
            return Err(Error::Contract("cross_entropy on an empty batch".into()));
        }
        if labels.len() != rows {
            return Err(Error::dim("cross_entropy", &t.shape, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = vec![0.0; rows * classes];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[i * classes..(i + 1) * classes];
            let mut z = 0.0;
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - max).exp();
                z += *pj;
            }
            for pj in p.iter_mut() {
                *pj /= z;
            }
            total += max + z.ln() - row[y];
        }
        let value = Tensor::scalar(total / rows as f64);
        Ok(self.record(
            value,
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Row-wise cosine similarity of two `m x d` matrices, giving `[m]`.
    ///
    /// Norms are floored at [`NORM_EPS`], so a zero row yields similarity
    /// zero instead of NaN. Results are clamped to `[-1, 1]`; the backward
    /// rule differentiates the unclamped quotient.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::dim("row_cosine", &ta.shape, &tb.shape));
        }
        let (rows, _) = ta.dims2("row_cosine")?;
        let mut raw = Vec::with_capacity(rows);
        for i in 0..rows {
            raw.push(cosine_raw(ta.row(i), tb.row(i)));
        }
        let value = Tensor::vector(raw.iter().map(|s| s.clamp(-1.0, 1.0)).collect());
        Ok(self.record(value, &[a, b], Op::RowCosine { a, b, raw }))
    }

    /// Euclidean norm of each row of an `m x d` matrix, giving `[m]`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, _) = t.dims2("row_norm")?;
        let norms = (0..rows).map(|i| norm(t.row(i))).collect();
        Ok(self.record(Tensor::vector(norms), &[x], Op::RowNorm(x)))
    }

    /// Stack `k` vectors of length `m` as the columns of an `m x k` matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Result<Var> {
        let first = cols
            .first()
            .ok_or_else(|| Error::Contract("stack_cols needs at least one column".into()))?;
        let shape = self.value(*first).shape.clone();
        if shape.len() != 1 {
            return Err(Error::Contract(format!("stack_cols expects vectors, got {shape:?}")));
        }
        let (m, k) = (shape[0], cols.len());
        let mut data = vec![0.0; m * k];
        for (j, &c) in cols.iter().enumerate() {
            let t = self.value(c);
            if t.shape != shape {
                return Err(Error::dim("stack_cols", &shape, &t.shape));
            }
            for i in 0..m {
                data[i * k + j] = t.data[i];
            }
        }
        let value = Tensor {
            shape: vec![m, k],
            data,
        };
        Ok(self.record(value, cols, Op::StackCols(cols.to_vec())))
    }

    /// `log sum_j exp(x[i, j])` per row, max-shifted.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, _) = t.dims2("logsumexp_rows")?;
        let out = (0..rows).map(|i| logsumexp(t.row(i))).collect();
        Ok(self.record(Tensor::vector(out), &[x], Op::LogSumExpRows(x)))
    }

    /// Reverse pass from a scalar. Gradients accumulate into leaves across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        node.grad = Some(Tensor {
                            shape: node.value.shape.clone(),
                            data: g,
                        })
                    }
                }
                continue;
            }
            for (input, contrib) in self.local_grads(id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn local_grads(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let b_row = &tb.data[p * n..(p + 1) * n];
                        ga[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        let a = ta.data[i * k + p];
                        if a != 0.0 {
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                *o += a * x;
                            }
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => {
                // node is n x m; input was m x n
                let (n, m) = (node.value.shape[0], node.value.shape[1]);
                let mut ga = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                vec![(*a, ga)]
            }
            Op::AddBias(x, b) => {
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                vec![(*x, g.to_vec()), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = g.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
                let gb = g.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, f) => vec![(*a, g.iter().map(|x| x * f).collect())],
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(&val(*a).data)
                    .map(|(x, &input)| if input > 0.0 { *x } else { 0.0 })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Exp(a) => {
                let ga = g.iter().zip(&node.value.data).map(|(x, y)| x * y).collect();
                vec![(*a, ga)]
            }
            Op::Log(a) => {
                let ga = g.iter().zip(&val(*a).data).map(|(x, y)| x / y).collect();
                vec![(*a, ga)]
            }
            Op::Softplus(a) => {
                let ga = g.iter().zip(&val(*a).data).map(|(x, &y)| x * sigmoid(y)).collect();
                vec![(*a, ga)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Mean(a) => {
                let n = val(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let rows = labels.len();
                let classes = probs.len() / rows;
                let scale = g[0] / rows as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    gl[i * classes + y] -= scale;
                }
                vec![(*logits, gl)]
            }
            Op::RowCosine { a, b, raw } => {
                let (ta, tb) = (val(*a), val(*b));
                let d = ta.shape[1];
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for (i, (&gi, &s)) in g.iter().zip(raw).enumerate() {
                    let (ra, rb) = (ta.row(i), tb.row(i));
                    let (la, lb) = (norm(ra), norm(rb));
                    let (na, nb) = (la.max(NORM_EPS), lb.max(NORM_EPS));
                    let inv = 1.0 / (na * nb);
                    let ca = if la > NORM_EPS { s / (na * na) } else { 0.0 };
                    let cb = if lb > NORM_EPS { s / (nb * nb) } else { 0.0 };
                    for j in 0..d {
                        ga[i * d + j] = gi * (rb[j] * inv - ca * ra[j]);
                        gb[i * d + j] = gi * (ra[j] * inv - cb * rb[j]);
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::RowNorm(x) => {
                let t = val(*x);
                let d = t.shape[1];
                let mut gx = vec![0.0; t.len()];
                for (i, (&gi, &n)) in g.iter().zip(&node.value.data).enumerate() {
                    if n > 0.0 {
                        for j in 0..d {
                            gx[i * d + j] = gi * t.data[i * d + j] / n;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::StackCols(cols) => {
                let k = cols.len();
                cols.iter()
                    .enumerate()
                    .map(|(j, &c)| (c, g.iter().skip(j).step_by(k).copied().collect()))
                    .collect()
            }
            Op::LogSumExpRows(x) => {
                let t = val(*x);
                let k = t.shape[1];
                let mut gx = vec![0.0; t.len()];
                for (i, (&gi, &lse)) in g.iter().zip(&node.value.data).enumerate() {
                    for j in 0..k {
                        gx[i * k + j] = gi * (t.data[i * k + j] - lse).exp();
                    }
                }
                vec![(*x, gx)]
            }
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a).max(NORM_EPS) * norm(b).max(NORM_EPS))
}

/// Cosine similarity of two vectors, clamped to `[-1, 1]`, zero-norm safe.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine_raw(a, b).clamp(-1.0, 1.0)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

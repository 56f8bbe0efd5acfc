use crate::error::{Error, Result};

use super::tensor::{gemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Selu,
}

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Selu => {
                if x > 0.0 {
                    SELU_SCALE * x
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_SCALE
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp()
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// How the right operand of a binary op is expanded to the left's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Col,
}

impl Broadcast {
    #[inline]
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Broadcast::Same => i * cols + j,
            Broadcast::Scalar => 0,
            Broadcast::Row => j,
            Broadcast::Col => i,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var, Broadcast),
    Scale(Var, f64),
    Shift(Var),
    Act(Var, Activation),
    NegLog {
        x: Var,
        eps: f64,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor,
        scale: f64,
    },
    RowCosine {
        a: Var,
        b: Var,
        sims: Vec<f64>,
        norms: Vec<(f64, f64)>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; [`Graph::backward`] walks it in reverse once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of the node's shape when none flowed.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copies the current value of `v` into a new constant leaf, cutting the
    /// gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        if k != k2 || bv.shape().len() != 2 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<Broadcast> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Ok(Broadcast::Same)
        } else if bv.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if bv.rows() == 1 && bv.cols() == av.cols() && bv.shape().len() <= 2 {
            Ok(Broadcast::Row)
        } else if bv.cols() == 1 && bv.rows() == av.rows() && bv.shape().len() == 2 {
            Ok(Broadcast::Col)
        } else {
            Err(Error::shape(op, av.shape(), bv.shape()))
        }
    }

    /// Elementwise `a ∘ b`; `b` may be a scalar, a row (`[n]` or `1×n`) or
    /// a column (`m×1`) broadcast against `a`.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let bc = self.broadcast_kind(a, b, name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(ad.len());
        for i in 0..av.rows() {
            for j in 0..cols {
                let x = ad[i * cols + j];
                let y = bd[bc.index(i, j, cols)];
                out.push(match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                });
            }
        }
        let value = Tensor::new(av.shape(), out)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(kind, a, b, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.needs(a);
        self.push(value, Op::Shift(a), rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x).map(|v| kind.apply(v));
        let rg = self.needs(x);
        self.push(value, Op::Act(x, kind), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn selu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Selu)
    }

    /// `−ln(max(x, eps))` elementwise.
    pub fn neg_log(&mut self, x: Var, eps: f64) -> Var {
        let value = self.value(x).map(|v| -(v.max(eps)).ln());
        let rg = self.needs(x);
        self.push(value, Op::NegLog { x, eps }, rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if start >= end || end > cols {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, end]));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, out)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes row `i` of the output.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let value = self.value(table).select_rows(ids)?;
        let rg = self.needs(table);
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Sum over rows with a target of `−log softmax(logits)[target]`,
    /// multiplied by `scale`. Rows whose target is `None` are masked out.
    pub fn softmax_xent_masked(&mut self, logits: Var, targets: &[Option<usize>], scale: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::shape("softmax_xent", lv.shape(), &[targets.len()]));
        }
        let mut probs = Tensor::zeros(&[rows, vocab]);
        let mut total = 0.0;
        for (i, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= vocab {
                return Err(Error::Index {
                    what: "softmax_xent target",
                    index: t,
                    bound: vocab,
                });
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = probs.row_mut(i);
            let mut z = 0.0;
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - max).exp();
                z += *pj;
            }
            for pj in p.iter_mut() {
                *pj /= z;
            }
            total += z.ln() - (row[t] - max);
        }
        let value = Tensor::scalar(scale * total);
        let rg = self.needs(logits);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            rg,
        ))
    }

    /// Mean over the batch of `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Empty("softmax_cross_entropy targets"));
        }
        let t: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
        self.softmax_xent_masked(logits, &t, 1.0 / targets.len() as f64)
    }

    /// Row-wise cosine distance `1 − a·b / (‖a‖‖b‖)`, one entry per row.
    pub fn cosine_distance_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("cosine_distance", av.shape(), bv.shape()));
        }
        let rows = av.rows();
        let mut sims = Vec::with_capacity(rows);
        let mut norms = Vec::with_capacity(rows);
        for i in 0..rows {
            let (ra, rb) = (av.row(i), bv.row(i));
            let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            sims.push(dot / (na * nb));
            norms.push((na, nb));
        }
        let value = Tensor::vector(sims.iter().map(|s| 1.0 - s).collect());
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::RowCosine { a, b, sims, norms }, rg))
    }

    /// Cosine distance between two vectors as a scalar node.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let rows = self.cosine_distance_rows(a, b)?;
        Ok(self.sum(rows))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.needs(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, false);
                    let t = Tensor::new(av.shape(), da).expect("matmul grad shape");
                    self.accumulate(grads, *a, t);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut db, false);
                    let t = Tensor::new(bv.shape(), db).expect("matmul grad shape");
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Binary(kind, a, b, bc) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                if self.needs(*a) {
                    let da: Vec<f64> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => gd.to_vec(),
                        BinaryKind::Mul => (0..gd.len())
                            .map(|idx| gd[idx] * bd[bc.index(idx / cols, idx % cols, cols)])
                            .collect(),
                    };
                    self.accumulate(grads, *a, Tensor::new(av.shape(), da).expect("shape"));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; bv.len()];
                    for (idx, &gi) in gd.iter().enumerate() {
                        let (i, j) = (idx / cols, idx % cols);
                        let contrib = match kind {
                            BinaryKind::Add => gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * ad[idx],
                        };
                        db[bc.index(i, j, cols)] += contrib;
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), db).expect("shape"));
                }
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Shift(a) => {
                self.accumulate(grads, *a, g.clone());
            }
            Op::Act(x, kind) => {
                let xv = self.value(*x);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(out.data()))
                    .map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape(), d).expect("shape"));
            }
            Op::NegLog { x, eps } => {
                let xv = self.value(*x);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gi, &xi)| if xi > *eps { -gi / xi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape(), d).expect("shape"));
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (rows, cols, width) = (xv.rows(), xv.cols(), out.cols());
                let mut d = Tensor::zeros(xv.shape());
                for i in 0..rows {
                    let src = g.row(i);
                    d.data_mut()[i * cols + start..i * cols + start + width].copy_from_slice(src);
                }
                self.accumulate(grads, *x, d);
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let mut d = Tensor::zeros(tv.shape());
                for (i, &id) in ids.iter().enumerate() {
                    for (dst, src) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *dst += src;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
                scale,
            } => {
                let gs = g.item() * scale;
                let mut d = Tensor::zeros(self.shape(*logits));
                for (i, target) in targets.iter().enumerate() {
                    let Some(t) = *target else { continue };
                    for (dj, &pj) in d.row_mut(i).iter_mut().zip(probs.row(i)) {
                        *dj = gs * pj;
                    }
                    d.row_mut(i)[t] -= gs;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::RowCosine { a, b, sims, norms } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                for (i, (&s, &(na, nb))) in sims.iter().zip(norms).enumerate() {
                    let gi = g.data()[i];
                    let (ra, rb) = (av.row(i), bv.row(i));
                    for j in 0..cols {
                        // d(1 − s)/da = −(b/(‖a‖‖b‖) − s·a/‖a‖²)
                        da.data_mut()[i * cols + j] = -gi * (rb[j] / (na * nb) - s * ra[j] / (na * na));
                        db.data_mut()[i * cols + j] = -gi * (ra[j] / (na * nb) - s * rb[j] / (nb * nb));
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let n = xv.len() as f64;
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.item() / n));
            }
        }
    }
}

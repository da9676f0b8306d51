//! Wengert tape: reverse-mode differentiation over dense f64 tensors.
//!
//! One tape per training step. The forward pass records every operation in
//! execution order; `backward` replays the record in reverse, accumulating
//! vector-Jacobian products into each node that is reachable from a
//! gradient-tracked leaf. Leaves registered via [`Tape::input`] never receive
//! gradients, which is how stop-gradient (frozen network) semantics are
//! expressed.
//!
//! Running `backward` twice on the same tape is rejected.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Loss kinds understood by [`Tape::loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
    CrossEntropy,
    L1,
}

// Sigmoid saturates to exactly 0.0 / 1.0 in f64 for |x| > ~37; clamp keeps
// outputs strictly inside (0, 1).
const SIGMOID_CLAMP: f64 = 1e-15;
const BCE_CLAMP: f64 = 1e-12;

fn stable_sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    AddBias { x: Var, bias: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    SoftmaxRows { x: Var },
    SumRows { x: Var },
    RowScale { scale: Var, x: Var },
    Mse { pred: Var, target: Var },
    Bce { pred: Var, target: Var },
    CrossEntropy { logits: Var, target: Var },
    L1 { pred: Var, target: Var },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), spent: false }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { shape, data, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Register a leaf that does not track gradients (inputs, targets, frozen
    /// parameters).
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    /// Register a gradient-tracked leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "constant shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(self.push(shape, data, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Copy the accumulated gradient of `v` into `t.grad`, adding to any
    /// gradient already present. Missing gradients count as zero.
    pub fn write_grad(&self, v: Var, t: &mut Tensor) -> Result<()> {
        let node = &self.nodes[v.0];
        if node.data.len() != t.numel() {
            return Err(Error::Shape(format!(
                "node has {} elements, tensor has {}",
                node.data.len(),
                t.numel()
            )));
        }
        let mut g = t.take_grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        if let Some(ng) = &node.grad {
            for (gi, ni) in g.iter_mut().zip(ng.iter()) {
                *gi += ni;
            }
        }
        t.set_grad(g)
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            2 => (s[0], s[1]),
            1 => (1, s[0]),
            _ => (1, self.nodes[v.0].data.len()),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Forward operations ──────────────────────────────────────────

    /// Matrix product `a[m×k] · b[k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.rows_cols(a);
        let (kb, n) = self.rows_cols(b);
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].data;
            let bv = &self.nodes[b.0].data;
            for i in 0..m {
                for k in 0..ka {
                    let aik = av[i * ka + k];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[k * n..(k + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, ng, Op::Matmul { a, b }))
    }

    fn broadcast_shapes(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
        let an = self.nodes[a.0].data.len();
        let bn = self.nodes[b.0].data.len();
        if an == bn && self.nodes[a.0].shape == self.nodes[b.0].shape {
            Ok(self.nodes[a.0].shape.clone())
        } else if an == 1 {
            Ok(self.nodes[b.0].shape.clone())
        } else if bn == 1 {
            Ok(self.nodes[a.0].shape.clone())
        } else {
            Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} are not broadcast-compatible \
                 (same-shape or scalar only)",
                self.shape_of(a),
                self.shape_of(b)
            )))
        }
    }

    /// Elementwise sum; one side may be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shapes(a, b, "add")?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, ng, Op::Add { a, b }))
    }

    /// Elementwise difference; one side may be a scalar.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shapes(a, b, "sub")?;
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, ng, Op::Sub { a, b }))
    }

    /// Elementwise (Hadamard) product; one side may be a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shapes(a, b, "mul")?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, ng, Op::Mul { a, b }))
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        if av.len() == bv.len() {
            av.iter().zip(bv.iter()).map(|(x, y)| f(*x, *y)).collect()
        } else if av.len() == 1 {
            bv.iter().map(|y| f(av[0], *y)).collect()
        } else {
            av.iter().map(|x| f(*x, bv[0])).collect()
        }
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.nodes[x.0].data.iter().map(|v| v * factor).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push(shape, data, ng, Op::Scale { x, factor })
    }

    /// Row-broadcast bias add: `x[m×n] + bias[n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.rows_cols(x);
        let bn = self.nodes[bias.0].data.len();
        if bn != n {
            return Err(Error::Shape(format!(
                "add_bias: bias length {bn} does not match row width {n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let xv = &self.nodes[x.0].data;
            let bv = &self.nodes[bias.0].data;
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = xv[i * n + j] + bv[j];
                }
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(shape, out, ng, Op::AddBias { x, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.nodes[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push(shape, data, ng, Op::Relu { x })
    }

    /// Numerically stable sigmoid, output strictly in (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.nodes[x.0].data.iter().map(|v| stable_sigmoid(*v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push(shape, data, ng, Op::Sigmoid { x })
    }

    /// Row-wise softmax with row-max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.rows_cols(x);
        if n == 0 || self.nodes[x.0].data.is_empty() {
            return Err(Error::Shape("softmax_rows: empty tensor".into()));
        }
        let mut out = vec![0.0; m * n];
        {
            let xv = &self.nodes[x.0].data;
            for i in 0..m {
                let row = &xv[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[i * n + j] /= sum;
                }
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        Ok(self.push(shape, out, ng, Op::SoftmaxRows { x }))
    }

    /// Sum along each row: `[m×n] -> [m×1]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.rows_cols(x);
        let xv = &self.nodes[x.0].data;
        let out: Vec<f64> = (0..m).map(|i| xv[i * n..(i + 1) * n].iter().sum()).collect();
        let ng = self.needs(x);
        self.push(vec![m, 1], out, ng, Op::SumRows { x })
    }

    /// Scale each row of `x[m×n]` by the matching entry of `scale[m×1]`.
    pub fn row_scale(&mut self, scale: Var, x: Var) -> Result<Var> {
        let (m, n) = self.rows_cols(x);
        let sn = self.nodes[scale.0].data.len();
        if sn != m {
            return Err(Error::Shape(format!(
                "row_scale: {sn} scale entries for {m} rows"
            )));
        }
        let mut out = vec![0.0; m * n];
        {
            let sv = &self.nodes[scale.0].data;
            let xv = &self.nodes[x.0].data;
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = sv[i] * xv[i * n + j];
                }
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(scale) || self.needs(x);
        Ok(self.push(shape, out, ng, Op::RowScale { scale, x }))
    }

    // ── Losses (scalar, mean-reduced) ───────────────────────────────

    pub fn loss(&mut self, kind: LossKind, prediction: Var, target: Var) -> Result<Var> {
        match kind {
            LossKind::Mse => self.mse(prediction, target),
            LossKind::Bce => self.bce(prediction, target),
            LossKind::CrossEntropy => self.cross_entropy(prediction, target),
            LossKind::L1 => self.l1(prediction, target),
        }
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        Ok(())
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same_shape(pred, target, "mse")?;
        let p = &self.nodes[pred.0].data;
        let t = &self.nodes[target.0].data;
        let n = p.len() as f64;
        let v = p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(vec![1], vec![v], ng, Op::Mse { pred, target }))
    }

    /// Mean binary cross-entropy. Predictions must lie in (0, 1); they are
    /// clamped to `[1e-12, 1-1e-12]` before the logs.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same_shape(pred, target, "bce")?;
        let p = &self.nodes[pred.0].data;
        let t = &self.nodes[target.0].data;
        if p.iter().any(|v| *v <= 0.0 || *v >= 1.0) {
            return Err(Error::Domain("bce: prediction outside (0, 1)".into()));
        }
        let n = p.len() as f64;
        let v = p
            .iter()
            .zip(t.iter())
            .map(|(pi, ti)| {
                let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(ti * pc.ln() + (1.0 - ti) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(vec![1], vec![v], ng, Op::Bce { pred, target }))
    }

    /// Softmax cross-entropy from logits against probability-vector targets,
    /// mean-reduced over rows.
    pub fn cross_entropy(&mut self, logits: Var, target: Var) -> Result<Var> {
        self.check_same_shape(logits, target, "cross_entropy")?;
        let (m, n) = self.rows_cols(logits);
        let z = &self.nodes[logits.0].data;
        let t = &self.nodes[target.0].data;
        let mut total = 0.0;
        for i in 0..m {
            let row = &z[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                total -= t[i * n + j] * (row[j] - lse);
            }
        }
        let v = total / m as f64;
        let ng = self.needs(logits) || self.needs(target);
        Ok(self.push(vec![1], vec![v], ng, Op::CrossEntropy { logits, target }))
    }

    /// Mean absolute error over all elements.
    pub fn l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same_shape(pred, target, "l1")?;
        let p = &self.nodes[pred.0].data;
        let t = &self.nodes[target.0].data;
        let n = p.len() as f64;
        let v = p.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(vec![1], vec![v], ng, Op::L1 { pred, target }))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar output. Rejects a second invocation on the
    /// same tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Tape(format!(
                "backward requires a scalar output, got shape {:?}",
                self.shape_of(loss)
            )));
        }
        self.spent = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            self.backward_op(idx, &op);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib.iter()) {
                    *gi += ci;
                }
            }
            None => self.nodes[v.0].grad = Some(contrib.to_vec()),
        }
    }

    /// Accumulate into a possibly-scalar operand of a broadcast op.
    fn accumulate_broadcast(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        if self.nodes[v.0].data.len() == 1 && contrib.len() > 1 {
            let s: f64 = contrib.iter().sum();
            self.accumulate(v, &[s]);
        } else {
            self.accumulate(v, contrib);
        }
    }

    fn backward_op(&mut self, idx: usize, op: &Op) {
        let d_out = self.nodes[idx].grad.clone().expect("gradient present");
        match *op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let (m, k) = self.rows_cols(a);
                let (_, n) = self.rows_cols(b);
                if self.needs(a) {
                    // dA = dOut · Bᵀ
                    let bv = &self.nodes[b.0].data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let d = d_out[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += d * bv[p * n + j];
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    // dB = Aᵀ · dOut
                    let av = &self.nodes[a.0].data;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * d_out[i * n + j];
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }

            Op::Add { a, b } => {
                self.accumulate_broadcast(a, &d_out);
                self.accumulate_broadcast(b, &d_out);
            }

            Op::Sub { a, b } => {
                self.accumulate_broadcast(a, &d_out);
                let neg: Vec<f64> = d_out.iter().map(|v| -v).collect();
                self.accumulate_broadcast(b, &neg);
            }

            Op::Mul { a, b } => {
                if self.needs(a) {
                    let bv = &self.nodes[b.0].data;
                    let da: Vec<f64> = if bv.len() == 1 {
                        d_out.iter().map(|d| d * bv[0]).collect()
                    } else {
                        d_out.iter().zip(bv.iter()).map(|(d, y)| d * y).collect()
                    };
                    self.accumulate_broadcast(a, &da);
                }
                if self.needs(b) {
                    let av = &self.nodes[a.0].data;
                    let db: Vec<f64> = if av.len() == 1 {
                        d_out.iter().map(|d| d * av[0]).collect()
                    } else {
                        d_out.iter().zip(av.iter()).map(|(d, x)| d * x).collect()
                    };
                    self.accumulate_broadcast(b, &db);
                }
            }

            Op::Scale { x, factor } => {
                let dx: Vec<f64> = d_out.iter().map(|d| d * factor).collect();
                self.accumulate(x, &dx);
            }

            Op::AddBias { x, bias } => {
                let (m, n) = self.rows_cols(x);
                self.accumulate(x, &d_out);
                if self.needs(bias) {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += d_out[i * n + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }

            Op::Relu { x } => {
                let xv = &self.nodes[x.0].data;
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(xv.iter())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate(x, &dx);
            }

            Op::Sigmoid { x } => {
                let yv = &self.nodes[idx].data;
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(yv.iter())
                    .map(|(d, y)| d * y * (1.0 - y))
                    .collect();
                self.accumulate(x, &dx);
            }

            Op::SoftmaxRows { x } => {
                let (m, n) = self.rows_cols(x);
                let yv = &self.nodes[idx].data;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let base = i * n;
                    let dot: f64 = (0..n).map(|j| d_out[base + j] * yv[base + j]).sum();
                    for j in 0..n {
                        dx[base + j] = yv[base + j] * (d_out[base + j] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }

            Op::SumRows { x } => {
                let (m, n) = self.rows_cols(x);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = d_out[i];
                    }
                }
                self.accumulate(x, &dx);
            }

            Op::RowScale { scale, x } => {
                let (m, n) = self.rows_cols(x);
                if self.needs(scale) {
                    let xv = &self.nodes[x.0].data;
                    let ds: Vec<f64> = (0..m)
                        .map(|i| (0..n).map(|j| d_out[i * n + j] * xv[i * n + j]).sum())
                        .collect();
                    self.accumulate(scale, &ds);
                }
                if self.needs(x) {
                    let sv = &self.nodes[scale.0].data;
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = sv[i] * d_out[i * n + j];
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }

            Op::Mse { pred, target } => {
                let d = d_out[0];
                let (dp, dt) = {
                    let p = &self.nodes[pred.0].data;
                    let t = &self.nodes[target.0].data;
                    let n = p.len() as f64;
                    let dp: Vec<f64> =
                        p.iter().zip(t.iter()).map(|(a, b)| d * 2.0 * (a - b) / n).collect();
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    (dp, dt)
                };
                self.accumulate(pred, &dp);
                self.accumulate(target, &dt);
            }

            Op::Bce { pred, target } => {
                let d = d_out[0];
                let (dp, dt) = {
                    let p = &self.nodes[pred.0].data;
                    let t = &self.nodes[target.0].data;
                    let n = p.len() as f64;
                    let dp: Vec<f64> = p
                        .iter()
                        .zip(t.iter())
                        .map(|(pi, ti)| {
                            let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                            d * (pc - ti) / (pc * (1.0 - pc) * n)
                        })
                        .collect();
                    let dt: Vec<f64> = p
                        .iter()
                        .map(|pi| {
                            let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                            d * ((1.0 - pc).ln() - pc.ln()) / n
                        })
                        .collect();
                    (dp, dt)
                };
                self.accumulate(pred, &dp);
                self.accumulate(target, &dt);
            }

            Op::CrossEntropy { logits, target } => {
                let d = d_out[0];
                let (m, n) = self.rows_cols(logits);
                let (dz, dt) = {
                    let z = &self.nodes[logits.0].data;
                    let t = &self.nodes[target.0].data;
                    let mut dz = vec![0.0; m * n];
                    let mut dt = vec![0.0; m * n];
                    for i in 0..m {
                        let row = &z[i * n..(i + 1) * n];
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut soft: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                        let sum: f64 = soft.iter().sum();
                        for s in soft.iter_mut() {
                            *s /= sum;
                        }
                        let lse = max + sum.ln();
                        let t_sum: f64 = t[i * n..(i + 1) * n].iter().sum();
                        for j in 0..n {
                            dz[i * n + j] = d * (soft[j] * t_sum - t[i * n + j]) / m as f64;
                            dt[i * n + j] = d * -(row[j] - lse) / m as f64;
                        }
                    }
                    (dz, dt)
                };
                self.accumulate(logits, &dz);
                self.accumulate(target, &dt);
            }

            Op::L1 { pred, target } => {
                let d = d_out[0];
                let (dp, dt) = {
                    let p = &self.nodes[pred.0].data;
                    let t = &self.nodes[target.0].data;
                    let n = p.len() as f64;
                    let dp: Vec<f64> = p
                        .iter()
                        .zip(t.iter())
                        .map(|(a, b)| d * (a - b).signum_or_zero() / n)
                        .collect();
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    (dp, dt)
                };
                self.accumulate(pred, &dp);
                self.accumulate(target, &dt);
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

//! Define-by-run reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are stored in
//! creation order, which is a topological order, so [`Tape::backward`] walks
//! the node list once in reverse. Layer-specific kernels (attention, KAN
//! encoders) plug in through [`CustomOp`] with their own fused backward.

use super::matrix::dot;
use super::{Matrix, NumError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fused operation with a hand-written vector-Jacobian product.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the gradient of the output. Entries
    /// may be `None` for inputs that do not need one (`needs[i] == false`).
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad_out: &Matrix, needs: &[bool]) -> Vec<Option<Matrix>>;

    fn as_any(&self) -> &dyn std::any::Any;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Silu(NodeId),
    Sum(NodeId),
    Reshape(NodeId),
    ConcatCols(Vec<NodeId>),
    Embedding {
        table: NodeId,
        indices: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
    Mse {
        pred: NodeId,
        targets: Vec<f64>,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros when the output does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Matrix {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, id: NodeId) -> Matrix {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// A differentiable leaf (parameter).
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable leaf (data).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a 1×cols row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumError> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(NumError::Shape {
                op: "add_row",
                lhs: (r, c),
                rhs: self.shape(bias),
            });
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..r {
            for (x, y) in v.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(v, Op::AddRow(a, bias), rg))
    }

    /// `x · w + b` with `w` of shape in×out and `b` of shape 1×out.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(silu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Silu(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, NumError> {
        let v = self.value(a).clone().reshape(rows, cols)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        let rows = parts.first().map_or(0, |p| self.shape(*p).0);
        let mut cols = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.0 != rows {
                return Err(NumError::Shape {
                    op: "concat_cols",
                    lhs: (rows, cols),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row lookup: output row `i` is `table[indices[i]]`.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, NumError> {
        let (vocab, dim) = self.shape(table);
        let mut v = Matrix::zeros(indices.len(), dim);
        for (i, &ix) in indices.iter().enumerate() {
            if ix >= vocab {
                return Err(NumError::Invalid(format!(
                    "embedding index {ix} out of range for vocabulary of {vocab}"
                )));
            }
            v.row_mut(i).copy_from_slice(self.value(table).row(ix));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            v,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Per-row layer normalization with learnable 1×cols gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId, NumError> {
        let (r, c) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (1, c) {
                return Err(NumError::Shape {
                    op: "layer_norm",
                    lhs: (r, c),
                    rhs: self.shape(p),
                });
            }
        }
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Matrix::zeros(r, c);
        let mut out = Matrix::zeros(r, c);
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            let xh = xhat.row_mut(i);
            for j in 0..c {
                xh[j] = (row[j] - mean) * is;
            }
            let o = out.row_mut(i);
            for j in 0..c {
                o[j] = xh[j] * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits` (rows × classes) against labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, NumError> {
        let (r, c) = self.shape(logits);
        if labels.len() != r || r == 0 {
            return Err(NumError::Shape {
                op: "softmax_cross_entropy",
                lhs: (r, c),
                rhs: (labels.len(), 1),
            });
        }
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(r, c);
        let mut loss = 0.0;
        for i in 0..r {
            if labels[i] >= c {
                return Err(NumError::Invalid(format!("label {} >= {c} classes", labels[i])));
            }
            let row = lv.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lz = m + z.ln();
            loss += lz - row[labels[i]];
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lz).exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Matrix::scalar(loss / r as f64),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error between `pred` (any shape) and `targets` (same length).
    pub fn mse(&mut self, pred: NodeId, targets: &[f64]) -> Result<NodeId, NumError> {
        let pv = self.value(pred);
        if pv.len() != targets.len() || targets.is_empty() {
            return Err(NumError::Shape {
                op: "mse",
                lhs: pv.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let loss = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / targets.len() as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::Mse {
                pred,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Records a fused op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[NodeId], value: Matrix, op: Box<dyn CustomOp>) -> NodeId {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// The custom op recorded at `id`, if any.
    pub fn custom_op(&self, id: NodeId) -> Option<&dyn CustomOp> {
        match &self.nodes[id.0].op {
            Op::Custom { op, .. } => Some(op.as_ref()),
            _ => None,
        }
    }

    /// Reverse pass from a 1×1 output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, NumError> {
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(NumError::NonScalarOutput { rows: r, cols: c });
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<(), NumError> {
        let mut acc = |id: NodeId, delta: Matrix| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul_nt(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).matmul_tn(g)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.hadamard(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(*b, g.hadamard(self.value(*a))?);
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*bias) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(*bias, gb);
                }
                acc(*a, g.clone());
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g.zip_with(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_with(x, |gi, xi| gi * gelu_grad(xi)));
            }
            Op::Silu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_with(x, |gi, xi| gi * silu_grad(xi)));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, g.clone().reshape(r, c)?);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.needs(*p) {
                        let mut d = Matrix::zeros(r, c);
                        for i in 0..r {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(*p, d);
                    }
                    off += c;
                }
            }
            Op::Embedding { table, indices } => {
                let (v, dim) = self.shape(*table);
                let mut d = Matrix::zeros(v, dim);
                for (i, &ix) in indices.iter().enumerate() {
                    for (x, y) in d.row_mut(ix).iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                acc(*table, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = xhat.shape();
                let gv = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = Matrix::zeros(1, c);
                    let mut db = Matrix::zeros(1, c);
                    for i in 0..r {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        for j in 0..c {
                            dg.data_mut()[j] += gr[j] * xr[j];
                            db.data_mut()[j] += gr[j];
                        }
                    }
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(r, c);
                    let cf = c as f64;
                    for i in 0..r {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let dxhat: Vec<f64> = (0..c).map(|j| gr[j] * gv[j]).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = dot(&dxhat, xr);
                        let out = dx.row_mut(i);
                        for j in 0..c {
                            out[j] = inv_std[i] / cf * (cf * dxhat[j] - s1 - xr[j] * s2);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let scale = g.get(0, 0) / labels.len() as f64;
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    let row = d.row_mut(i);
                    row[l] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(*logits, d);
            }
            Op::Mse { pred, targets } => {
                let pv = self.value(*pred);
                let k = 2.0 * g.get(0, 0) / targets.len() as f64;
                let data = pv.data().iter().zip(targets).map(|(p, t)| k * (p - t)).collect();
                acc(*pred, Matrix::from_vec(pv.rows(), pv.cols(), data)?);
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Matrix> = inputs.iter().map(|i| self.value(*i)).collect();
                let needs: Vec<bool> = inputs.iter().map(|i| self.needs(*i)).collect();
                let ds = op.backward(&vals, &node.value, g, &needs);
                for (id, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        if d.shape() != self.shape(*id) {
                            return Err(NumError::Shape {
                                op: op.name(),
                                lhs: self.shape(*id),
                                rhs: d.shape(),
                            });
                        }
                        acc(*id, d);
                    }
                }
            }
        }
        Ok(())
    }
}

impl Matrix {
    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        Matrix::from_vec(self.rows(), self.cols(), data).expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).get(0, 0), 6.0);
    }

    #[test]
    fn product_gradient() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(2.0));
        let y = t.param(Matrix::scalar(5.0));
        let z = t.mul(x, y).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.wrt(x).get(0, 0), 5.0);
        assert_eq!(g.wrt(y).get(0, 0), 2.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(
            t.backward(x),
            Err(NumError::NonScalarOutput { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(2.0));
        let w = t.param(Matrix::scalar(4.0));
        let y = t.mul(x, w).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.wrt(w).get(0, 0), 2.0);
    }

    #[test]
    fn shared_node_accumulates() {
        // y = (x + x) * x = 2x², dy/dx = 4x
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(1.5));
        let s = t.add(x, x).unwrap();
        let y = t.mul(s, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!((g.wrt(x).get(0, 0) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_xent_value() {
        let mut t = Tape::new();
        let l = t.param(Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let loss = t.softmax_cross_entropy(l, &[1]).unwrap();
        assert!((t.value(loss).get(0, 0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert!((gelu(0.0)).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841_191_990_607_477).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_808_009_392_523).abs() < 1e-12);
    }
}

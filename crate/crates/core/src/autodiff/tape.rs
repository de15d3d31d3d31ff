//! Reverse-mode differentiation over a linear tape of matrix primitives.
//!
//! Operations append nodes in topological order during the forward pass;
//! `backward` walks the tape once in reverse, accumulating adjoints.
//! A tape is single-threaded by contract; independent tapes may run in
//! parallel over the same (immutable) input matrices.

use std::rc::Rc;

use super::dense::DenseMatrix;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Spmm(Rc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    /// Softmax restricted to the sparsity pattern; other entries are zero.
    SoftmaxRowsMasked(Var, Rc<SparseMatrix>),
    L2NormalizeRows(Var),
    Transpose(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    RowSum(Var),
    SumAll(Var),
    LogSumExpAll(Var),
    RowLogSumExp(Var),
    Softplus(Var),
    /// Inverted dropout; the stored mask already carries the 1/(1-p) scale.
    Dropout(Var, Rc<Vec<f64>>),
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by a backward pass, indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for a node; zero matrix if the node was unreachable from the loss.
    pub fn grad(&self, v: Var) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> DenseMatrix {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| DenseMatrix::zeros(r, c))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Register an input matrix (parameter or constant).
    pub fn leaf(&mut self, m: DenseMatrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Sparse-dense product; differentiable w.r.t. the dense operand only.
    pub fn spmm(&mut self, s: Rc<SparseMatrix>, d: Var) -> Result<Var> {
        let out = s.spmm(self.value(d))?;
        Ok(self.push(out, Op::Spmm(s, d)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "hadamard")?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows()?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Row softmax over the entries present in `mask`; absent entries are zero.
    /// Rows with an empty mask come out all-zero.
    pub fn softmax_rows_masked(&mut self, a: Var, mask: Rc<SparseMatrix>) -> Result<Var> {
        let m = self.value(a);
        if m.rows != mask.rows || m.cols != mask.cols {
            return Err(Error::Shape("masked softmax: mask shape mismatch".into()));
        }
        let mut out = DenseMatrix::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let mut max = f64::NEG_INFINITY;
            for (c, _) in mask.row_entries(r) {
                max = max.max(m.get(r, c));
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for (c, _) in mask.row_entries(r) {
                let e = (m.get(r, c) - max).exp();
                out.set(r, c, e);
                sum += e;
            }
            for (c, _) in mask.row_entries(r) {
                let v = out.get(r, c) / sum;
                out.set(r, c, v);
            }
        }
        Ok(self.push(out, Op::SoftmaxRowsMasked(a, mask)))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).l2_normalize_rows();
        self.push(out, Op::L2NormalizeRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let m = self.value(a);
        let mut out = DenseMatrix::zeros(idx.len(), m.cols);
        for (o, &r) in idx.iter().enumerate() {
            if r >= m.rows {
                return Err(Error::Shape(format!("gather row {} of {}", r, m.rows)));
            }
            out.row_mut(o).copy_from_slice(m.row(r));
        }
        Ok(self.push(out, Op::GatherRows(a, idx)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.cols != mb.cols {
            return Err(Error::Shape("concat_rows: column mismatch".into()));
        }
        let mut values = ma.values.clone();
        values.extend_from_slice(&mb.values);
        let out = DenseMatrix {
            rows: ma.rows + mb.rows,
            cols: ma.cols,
            values,
        };
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols: empty".into()));
        }
        let rows = self.value(parts[0]).rows;
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows != rows {
                return Err(Error::Shape("concat_cols: row mismatch".into()));
            }
            cols += m.cols;
        }
        let mut out = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.rows {
            return Err(Error::Shape(format!(
                "slice_rows {}..{} of {}",
                start,
                start + len,
                m.rows
            )));
        }
        let out = DenseMatrix {
            rows: len,
            cols: m.cols,
            values: m.values[start * m.cols..(start + len) * m.cols].to_vec(),
        };
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Per-row sum, N×M → N×1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let values = (0..m.rows).map(|r| m.row(r).iter().sum()).collect();
        let out = DenseMatrix {
            rows: m.rows,
            cols: 1,
            values,
        };
        self.push(out, Op::RowSum(a))
    }

    /// Sum of all entries, → 1×1.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(
            DenseMatrix {
                rows: 1,
                cols: 1,
                values: vec![s],
            },
            Op::SumAll(a),
        )
    }

    /// log Σ exp over all entries, → 1×1. Stabilized by max subtraction.
    pub fn logsumexp_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let max = m.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = m.values.iter().map(|&v| (v - max).exp()).sum();
        let out = max + s.ln();
        self.push(
            DenseMatrix {
                rows: 1,
                cols: 1,
                values: vec![out],
            },
            Op::LogSumExpAll(a),
        )
    }

    /// Per-row log Σ exp, N×M → N×1. Stabilized per row.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let values = (0..m.rows)
            .map(|r| {
                let row = m.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                max + s.ln()
            })
            .collect();
        let out = DenseMatrix {
            rows: m.rows,
            cols: 1,
            values,
        };
        self.push(out, Op::RowLogSumExp(a))
    }

    /// Elementwise ln(1 + e^x), computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(out, Op::Softplus(a))
    }

    /// Apply a precomputed inverted-dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let m = self.value(a);
        if mask.len() != m.values.len() {
            return Err(Error::Shape("dropout mask length mismatch".into()));
        }
        let values = m.values.iter().zip(mask.iter()).map(|(&v, &k)| v * k).collect();
        let out = DenseMatrix {
            rows: m.rows,
            cols: m.cols,
            values,
        };
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (ma, mb) = (self.value(a), self.value(b));
        if !ma.same_shape(mb) {
            return Err(Error::Shape(format!(
                "{op}: {}x{} vs {}x{}",
                ma.rows, ma.cols, mb.rows, mb.cols
            )));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar loss node. Every node is visited exactly
    /// once; parameters unreachable from the loss get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lm = self.value(loss);
        if lm.rows != 1 || lm.cols != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {}x{}",
                lm.rows, lm.cols
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix {
            rows: 1,
            cols: 1,
            values: vec![1.0],
        });

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| (n.value.rows, n.value.cols))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, delta: DenseMatrix) {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &self,
        id: usize,
        g: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let bt = self.value(*b).transpose();
                Self::accumulate(grads, *a, g.matmul(&bt)?);
                let at = self.value(*a).transpose();
                Self::accumulate(grads, *b, at.matmul(g)?);
            }
            Op::Spmm(s, d) => {
                Self::accumulate(grads, *d, s.spmm_transpose(g)?);
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                Self::accumulate(grads, *a, g.zip(self.value(*b), |x, y| x * y));
                Self::accumulate(grads, *b, g.zip(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => {
                Self::accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::SoftmaxRows(a) => {
                // dx = y ⊙ (g − <g,y> 1) per row
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::SoftmaxRowsMasked(a, mask) => {
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let mut dot = 0.0;
                    for (c, _) in mask.row_entries(r) {
                        dot += y.get(r, c) * g.get(r, c);
                    }
                    for (c, _) in mask.row_entries(r) {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::L2NormalizeRows(a) => {
                // For nonzero rows y = x/‖x‖: dx = (g − <g,y> y)/‖x‖.
                // Zero rows pass through with zero gradient.
                let x = self.value(*a);
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..x.cols {
                        dx.set(r, c, (g.get(r, c) - dot * y.get(r, c)) / norm);
                    }
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::Transpose(a) => {
                Self::accumulate(grads, *a, g.transpose());
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let mut dx = DenseMatrix::zeros(src.rows, src.cols);
                for (o, &r) in idx.iter().enumerate() {
                    let row = g.row(o);
                    let dst = dx.row_mut(r);
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(*a).rows;
                let cols = g.cols;
                let ga = DenseMatrix {
                    rows: ra,
                    cols,
                    values: g.values[..ra * cols].to_vec(),
                };
                let gb = DenseMatrix {
                    rows: g.rows - ra,
                    cols,
                    values: g.values[ra * cols..].to_vec(),
                };
                Self::accumulate(grads, *a, ga);
                Self::accumulate(grads, *b, gb);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pm = self.value(p);
                    let mut gp = DenseMatrix::zeros(pm.rows, pm.cols);
                    for r in 0..pm.rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pm.cols]);
                    }
                    off += pm.cols;
                    Self::accumulate(grads, p, gp);
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut dx = DenseMatrix::zeros(src.rows, src.cols);
                for r in 0..g.rows {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::RowSum(a) => {
                let src = self.value(*a);
                let mut dx = DenseMatrix::zeros(src.rows, src.cols);
                for r in 0..src.rows {
                    let gv = g.get(r, 0);
                    for v in dx.row_mut(r) {
                        *v = gv;
                    }
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::SumAll(a) => {
                let src = self.value(*a);
                let gv = g.get(0, 0);
                Self::accumulate(grads, *a, src.map(|_| gv));
            }
            Op::LogSumExpAll(a) => {
                let src = self.value(*a);
                let gv = g.get(0, 0);
                let max = src.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = src.values.iter().map(|&v| (v - max).exp()).sum();
                Self::accumulate(grads, *a, src.map(|v| gv * (v - max).exp() / sum));
            }
            Op::RowLogSumExp(a) => {
                let src = self.value(*a);
                let mut dx = DenseMatrix::zeros(src.rows, src.cols);
                for r in 0..src.rows {
                    let gv = g.get(r, 0);
                    let row = src.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                    for c in 0..src.cols {
                        dx.set(r, c, gv * (src.get(r, c) - max).exp() / sum);
                    }
                }
                Self::accumulate(grads, *a, dx);
            }
            Op::Softplus(a) => {
                // d softplus = sigmoid
                let src = self.value(*a);
                let dx = src.zip(g, |x, gv| gv / (1.0 + (-x).exp()));
                Self::accumulate(grads, *a, dx);
            }
            Op::Dropout(a, mask) => {
                let values = g
                    .values
                    .iter()
                    .zip(mask.iter())
                    .map(|(&gv, &k)| gv * k)
                    .collect();
                Self::accumulate(
                    grads,
                    *a,
                    DenseMatrix {
                        rows: g.rows,
                        cols: g.cols,
                        values,
                    },
                );
            }
        }
        Ok(())
    }
}

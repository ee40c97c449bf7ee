//! Wengert tape: operations recorded in forward order, replayed in reverse.
//!
//! A tape owns every intermediate value of one forward computation. Leaves
//! enter via [`Tape::param`] (gradient wanted) or [`Tape::constant`]
//! (masks, one-hot targets, frozen features). [`Tape::backward`] seeds the
//! scalar root with 1 and accumulates vector-Jacobian products into every
//! node, returning the gradients without mutating the tape, so a tape can
//! be differentiated twice and compared bit-for-bit.
//!
//! Tapes are single-threaded by construction; parallel callers build one
//! tape per work item.

use super::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Leaf tensor. `param` marks it as wanting a gradient.
    Leaf { param: bool },
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    /// `[r×c] + [1×c]` bias broadcast, the only broadcast supported.
    AddRow { a: Var, bias: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    ConcatCols { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    GatherRows { src: Var, indices: Vec<usize> },
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Relu { x: Var },
    Log { x: Var },
    SoftmaxRows { x: Var },
    LogSoftmaxRows { x: Var },
    Sum { x: Var },
    StopGradient,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the root w.r.t. `v`, zeros when none flowed.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
}

/// Recording tape for one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf that should receive a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf { param: true })
    }

    /// Register a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf { param: false })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push_unchecked(value, op))
    }

    fn require_same_shape(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let value = matmul_raw(ta, tb);
        self.push("matmul", value, Op::Matmul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.require_same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", value, Op::Add { a, b })
    }

    /// Add a `[1×c]` bias row to each row of a `[r×c]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || ta.cols() != tb.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let cols = ta.cols();
        let mut data = Vec::with_capacity(ta.numel());
        for r in 0..ta.rows() {
            for c in 0..cols {
                data.push(ta.at(r, c) + tb.data()[c]);
            }
        }
        let value = Tensor::new(vec![ta.rows(), cols], data).expect("shape computed above");
        self.push("add_row", value, Op::AddRow { a, bias })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.require_same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", value, Op::Sub { a, b })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.require_same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar { x })
    }

    /// Concatenate along columns: `[r×c1] ⊕ [r×c2] ⊕ … → [r×Σc]`.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::new(vec![rows, cols], data).expect("shape computed above");
        self.push(
            "concat_cols",
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Concatenate along rows: `[r1×c] ⊕ [r2×c] ⊕ … → [Σr×c]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], data).expect("shape computed above");
        self.push(
            "concat_rows",
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    /// Row gather: `out[i] = src[indices[i]]`. Also serves as embedding
    /// lookup when `src` is an embedding table. Backward scatter-adds.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(src);
        let (rows, cols) = (t.rows(), t.cols());
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(vec![indices.len(), cols], data).expect("shape computed above");
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                src,
                indices: indices.to_vec(),
            },
        )
    }

    /// Contiguous row slice `src[start..start+len]`.
    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(src);
        if start + len > t.rows() {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_rows",
                index: start + len,
                len: t.rows(),
            });
        }
        let cols = t.cols();
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(vec![len, cols], data).expect("shape computed above");
        self.push("slice_rows", value, Op::SliceRows { src, start })
    }

    /// Contiguous column slice `src[:, start..start+len]`.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(src);
        if start + len > t.cols() {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_cols",
                index: start + len,
                len: t.cols(),
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            data.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new(vec![t.rows(), len], data).expect("shape computed above");
        self.push("slice_cols", value, Op::SliceCols { src, start })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(sigmoid_scalar);
        self.push("sigmoid", value, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(f64::tanh);
        self.push("tanh", value, Op::Tanh { x })
    }

    /// `max(0, x)` elementwise.
    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu { x })
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(f64::ln);
        self.push("log", value, Op::Log { x })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(t.numel());
        for r in 0..rows {
            let row = t.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|&e| e / sum));
        }
        let value = Tensor::new(vec![rows, cols], data).expect("shape computed above");
        self.push("softmax_rows", value, Op::SoftmaxRows { x })
    }

    /// Row-wise fused log-softmax: `x − max − ln Σ exp(x − max)`.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(t.numel());
        for r in 0..rows {
            let row = t.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&v| v - max - log_sum));
        }
        let value = Tensor::new(vec![rows, cols], data).expect("shape computed above");
        self.push("log_softmax_rows", value, Op::LogSoftmaxRows { x })
    }

    /// Sum of all elements, as a `[1×1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push("sum", value, Op::Sum { x })
    }

    /// Mean of all elements, as a `[1×1]` scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Identity forward, zero backward. Detaches the upstream graph.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).clone();
        self.push("stop_gradient", value, Op::StopGradient)
    }

    /// Reverse pass from a scalar root. Gradients accumulate additively at
    /// every node a path reaches; constant leaves absorb nothing, so
    /// [`Gradients::get`] returns `None` for them.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let root_t = self.value(root);
        if !root_t.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_t.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(out_grad) = grads[id].take() else {
                continue;
            };
            self.backward_op(id, &out_grad, &mut grads);
            grads[id] = Some(out_grad);
        }
        Ok(Gradients { grads })
    }

    fn backward_op(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let accumulate = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            if matches!(self.nodes[v.0].op, Op::Leaf { param: false }) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (acc, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *acc += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf { .. } | Op::StopGradient => {}
            Op::Matmul { a, b } => {
                let da = matmul_nt_raw(g, self.value(*b));
                let db = matmul_tn_raw(self.value(*a), g);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow { a, bias } => {
                accumulate(grads, *a, g.clone());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (acc, &gv) in db.iter_mut().zip(g.row_slice(r)) {
                        *acc += gv;
                    }
                }
                accumulate(grads, *bias, Tensor::row(&db));
            }
            Op::Sub { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                accumulate(grads, *a, zip_map(g, self.value(*b), |gv, bv| gv * bv));
                accumulate(grads, *b, zip_map(g, self.value(*a), |gv, av| gv * av));
            }
            Op::Scale { x, c } => accumulate(grads, *x, g.map(|v| v * c)),
            Op::AddScalar { x } => accumulate(grads, *x, g.clone()),
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let (rows, cols) = (t.rows(), t.cols());
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let row = g.row_slice(r);
                        data.extend_from_slice(&row[offset..offset + cols]);
                    }
                    accumulate(
                        grads,
                        p,
                        Tensor::new(vec![rows, cols], data).expect("split of g"),
                    );
                    offset += cols;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let (rows, cols) = (t.rows(), t.cols());
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(
                        grads,
                        p,
                        Tensor::new(vec![rows, cols], data).expect("split of g"),
                    );
                    offset += rows;
                }
            }
            Op::GatherRows { src, indices } => {
                let t = self.value(*src);
                let cols = t.cols();
                let mut dsrc = Tensor::zeros(t.rows(), cols);
                for (out_r, &src_r) in indices.iter().enumerate() {
                    let grow = g.row_slice(out_r);
                    let target = &mut dsrc.data_mut()[src_r * cols..(src_r + 1) * cols];
                    for (acc, &gv) in target.iter_mut().zip(grow) {
                        *acc += gv;
                    }
                }
                accumulate(grads, *src, dsrc);
            }
            Op::SliceRows { src, start } => {
                let t = self.value(*src);
                let cols = t.cols();
                let mut dsrc = Tensor::zeros(t.rows(), cols);
                dsrc.data_mut()[start * cols..start * cols + g.numel()]
                    .copy_from_slice(g.data());
                accumulate(grads, *src, dsrc);
            }
            Op::SliceCols { src, start } => {
                let t = self.value(*src);
                let mut dsrc = Tensor::zeros(t.rows(), t.cols());
                let cols = t.cols();
                for r in 0..g.rows() {
                    let grow = g.row_slice(r);
                    let target = &mut dsrc.data_mut()[r * cols + start..r * cols + start + grow.len()];
                    target.copy_from_slice(grow);
                }
                accumulate(grads, *src, dsrc);
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                accumulate(grads, *x, zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Tanh { x } => {
                let y = &node.value;
                accumulate(grads, *x, zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Relu { x } => {
                let input = self.value(*x);
                accumulate(
                    grads,
                    *x,
                    zip_map(g, input, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Log { x } => {
                let input = self.value(*x);
                accumulate(grads, *x, zip_map(g, input, |gv, xv| gv / xv));
            }
            Op::SoftmaxRows { x } => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut dx = Vec::with_capacity(y.numel());
                for r in 0..rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                accumulate(
                    grads,
                    *x,
                    Tensor::new(vec![rows, cols], dx).expect("same shape as y"),
                );
            }
            Op::LogSoftmaxRows { x } => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut dx = Vec::with_capacity(y.numel());
                for r in 0..rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let gsum: f64 = gr.iter().sum();
                    dx.extend(yr.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * gsum));
                }
                accumulate(
                    grads,
                    *x,
                    Tensor::new(vec![rows, cols], dx).expect("same shape as y"),
                );
            }
            Op::Sum { x } => {
                let t = self.value(*x);
                accumulate(grads, *x, Tensor::filled(t.rows(), t.cols(), g.item()));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("same shape")
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

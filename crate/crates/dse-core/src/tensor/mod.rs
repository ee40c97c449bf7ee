//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! The tensor core is deliberately small: row-major storage, rank ≤ 2
//! semantics in all recorded operations, and a Wengert tape ([`tape::Tape`])
//! that replays in reverse for gradients. Every forward op validates shapes
//! and rejects non-finite outputs, so numeric failures surface at the op
//! that produced them instead of three layers later.

pub mod gradcheck;
pub mod store;
pub mod suite;
pub mod tape;

pub use gradcheck::{gradcheck, GradcheckReport, ParamReport};
pub use store::{load_params, save_params, StoreError};
pub use suite::op_suite;
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds for {len} rows")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
}

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `[1 × n]` row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// A `[n × 1]` column vector.
    pub fn col(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![1, c],
                    rhs: vec![1, row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a `[1 × 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [r, _] => *r,
            [_] => 1,
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.as_slice() {
            [_, c] => *c,
            [n] => *n,
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Register-tile width (f64 lanes) for the blocked matmul kernels.
const NB: usize = 32;
/// Row-block height: output rows accumulated simultaneously so one
/// streamed `b` panel serves several `a` rows — this is what makes
/// batched matmuls faster per flop than row-at-a-time ones.
const MB: usize = 4;

/// Four-row register tile of `a · b` over one full-width column block.
/// Separate named accumulators (256 B each) so scalar replacement keeps
/// them in vector registers across the whole `p` sweep; every output
/// element still sums over `p` in strictly increasing order, so results
/// are bit-identical however `m`/`n` are blocked.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn nn_tile4(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    k: usize,
    n: usize,
    lda: usize,
    i0: usize,
    j0: usize,
) {
    let mut c0 = [0.0f64; NB];
    let mut c1 = [0.0f64; NB];
    let mut c2 = [0.0f64; NB];
    let mut c3 = [0.0f64; NB];
    let a0_row = &a[i0 * lda..i0 * lda + k];
    let a1_row = &a[(i0 + 1) * lda..(i0 + 1) * lda + k];
    let a2_row = &a[(i0 + 2) * lda..(i0 + 2) * lda + k];
    let a3_row = &a[(i0 + 3) * lda..(i0 + 3) * lda + k];
    let mut b_off = j0;
    for p in 0..k {
        let bc: &[f64; NB] = b[b_off..b_off + NB].try_into().expect("tile");
        let (a0, a1, a2, a3) = (a0_row[p], a1_row[p], a2_row[p], a3_row[p]);
        for l in 0..NB {
            c0[l] = a0.mul_add(bc[l], c0[l]);
            c1[l] = a1.mul_add(bc[l], c1[l]);
            c2[l] = a2.mul_add(bc[l], c2[l]);
            c3[l] = a3.mul_add(bc[l], c3[l]);
        }
        b_off += n;
    }
    out[i0 * n + j0..i0 * n + j0 + NB].copy_from_slice(&c0);
    out[(i0 + 1) * n + j0..(i0 + 1) * n + j0 + NB].copy_from_slice(&c1);
    out[(i0 + 2) * n + j0..(i0 + 2) * n + j0 + NB].copy_from_slice(&c2);
    out[(i0 + 3) * n + j0..(i0 + 3) * n + j0 + NB].copy_from_slice(&c3);
}

/// Single-row full-width tile; same ordering contract as [`nn_tile4`].
#[inline(always)]
fn nn_tile1(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize, lda: usize, i0: usize, j0: usize) {
    let mut c0 = [0.0f64; NB];
    let a0_row = &a[i0 * lda..i0 * lda + k];
    let mut b_off = j0;
    for p in 0..k {
        let bc: &[f64; NB] = b[b_off..b_off + NB].try_into().expect("tile");
        let a0 = a0_row[p];
        for l in 0..NB {
            c0[l] = a0.mul_add(bc[l], c0[l]);
        }
        b_off += n;
    }
    out[i0 * n + j0..i0 * n + j0 + NB].copy_from_slice(&c0);
}

/// Variable-width edge tile for the last `< NB` columns.
#[inline(always)]
fn nn_edge(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize, lda: usize, i0: usize, j0: usize, nb: usize) {
    let mut c0 = [0.0f64; NB];
    for p in 0..k {
        let bc = &b[p * n + j0..p * n + j0 + nb];
        let a0 = a[i0 * lda + p];
        for (o, &bv) in c0[..nb].iter_mut().zip(bc) {
            *o = a0.mul_add(bv, *o);
        }
    }
    out[i0 * n + j0..i0 * n + j0 + nb].copy_from_slice(&c0[..nb]);
}

/// `out = a · b` for `a: [m×k]`, `b: [k×n]`.
pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(k, b.rows());
    let mut out = vec![0.0; m * n];
    let mut j0 = 0;
    while j0 + NB <= n {
        let mut i0 = 0;
        while i0 + MB <= m {
            nn_tile4(&a.data, &b.data, &mut out, k, n, k, i0, j0);
            i0 += MB;
        }
        while i0 < m {
            nn_tile1(&a.data, &b.data, &mut out, k, n, k, i0, j0);
            i0 += 1;
        }
        j0 += NB;
    }
    if j0 < n {
        for i0 in 0..m {
            nn_edge(&a.data, &b.data, &mut out, k, n, k, i0, j0, n - j0);
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// `out = a · bᵀ` where `b` is stored `[n×k]`. Gradient-only kernel:
/// the lane-split dot products reassociate the reduction, which is
/// fine at gradient tolerances.
pub(crate) fn matmul_nt_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(k, b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b.data[j * k..(j + 1) * k];
            let mut lanes = [0.0f64; 4];
            let mut chunks_a = a_row.chunks_exact(4);
            let mut chunks_b = b_row.chunks_exact(4);
            for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                for l in 0..4 {
                    lanes[l] = ca[l].mul_add(cb[l], lanes[l]);
                }
            }
            let mut tail = 0.0;
            for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
                tail = x.mul_add(*y, tail);
            }
            *o = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail;
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// Four-row tile of `aᵀ · b` with `a` stored `[k×m]`: identical
/// accumulator discipline to [`nn_tile4`], with `a` read p-major (the
/// four row scalars sit contiguously in each `a` row).
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tn_tile4(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    k: usize,
    m: usize,
    n: usize,
    i0: usize,
    j0: usize,
) {
    let mut c0 = [0.0f64; NB];
    let mut c1 = [0.0f64; NB];
    let mut c2 = [0.0f64; NB];
    let mut c3 = [0.0f64; NB];
    let mut b_off = j0;
    let mut a_off = i0;
    for _ in 0..k {
        let bc: &[f64; NB] = b[b_off..b_off + NB].try_into().expect("tile");
        let ar: &[f64; 4] = a[a_off..a_off + 4].try_into().expect("tile");
        for l in 0..NB {
            c0[l] = ar[0].mul_add(bc[l], c0[l]);
            c1[l] = ar[1].mul_add(bc[l], c1[l]);
            c2[l] = ar[2].mul_add(bc[l], c2[l]);
            c3[l] = ar[3].mul_add(bc[l], c3[l]);
        }
        b_off += n;
        a_off += m;
    }
    out[i0 * n + j0..i0 * n + j0 + NB].copy_from_slice(&c0);
    out[(i0 + 1) * n + j0..(i0 + 1) * n + j0 + NB].copy_from_slice(&c1);
    out[(i0 + 2) * n + j0..(i0 + 2) * n + j0 + NB].copy_from_slice(&c2);
    out[(i0 + 3) * n + j0..(i0 + 3) * n + j0 + NB].copy_from_slice(&c3);
}

/// Single-row / edge tiles for `aᵀ · b`.
#[inline(always)]
fn tn_edge(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize, i0: usize, j0: usize, nb: usize) {
    let mut c0 = [0.0f64; NB];
    for p in 0..k {
        let bc = &b[p * n + j0..p * n + j0 + nb];
        let a0 = a[p * m + i0];
        for (o, &bv) in c0[..nb].iter_mut().zip(bc) {
            *o = a0.mul_add(bv, *o);
        }
    }
    out[i0 * n + j0..i0 * n + j0 + nb].copy_from_slice(&c0[..nb]);
}

/// `out = aᵀ · b` where `a` is stored `[k×m]`.
pub(crate) fn matmul_tn_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(k, b.rows());
    let mut out = vec![0.0; m * n];
    let mut j0 = 0;
    while j0 + NB <= n {
        let mut i0 = 0;
        while i0 + MB <= m {
            tn_tile4(&a.data, &b.data, &mut out, k, m, n, i0, j0);
            i0 += MB;
        }
        while i0 < m {
            tn_edge(&a.data, &b.data, &mut out, k, m, n, i0, j0, NB);
            i0 += 1;
        }
        j0 += NB;
    }
    if j0 < n {
        for i0 in 0..m {
            tn_edge(&a.data, &b.data, &mut out, k, m, n, i0, j0, n - j0);
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

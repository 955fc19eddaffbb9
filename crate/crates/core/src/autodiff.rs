//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] owns an arena of tensors and a record of every operation applied
//! to them. Running a forward computation appends nodes and op records;
//! [`Tape::backward`] replays the record in reverse and accumulates gradients
//! into every tensor created with `requires_grad`. All storage is `f64` and
//! shapes are restricted to one or two dimensions, which is all the models
//! here need.
//!
//! Tapes are cheap and short-lived: build one per forward pass (or per decode
//! session), pull gradients out, and drop it.

use crate::error::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// A dense tensor node in the tape arena.
#[derive(Debug, Clone)]
pub struct Tensor {
    /// Dimensions, each at least 1; one or two axes.
    pub shape: Vec<usize>,
    /// Row-major values, `len == shape.iter().product()`.
    pub data: Vec<f64>,
    /// Whether gradients should be accumulated for this tensor.
    pub requires_grad: bool,
    /// Gradient accumulator, present iff `requires_grad`.
    pub grad: Option<Vec<f64>>,
}

/// Values below this are clamped before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Additive score for masked-out attention positions.
pub const MASK_SCORE: f64 = -1e9;

#[derive(Debug)]
enum Op {
    Add { a: TensorId, b: TensorId, out: TensorId },
    Mul { a: TensorId, b: TensorId, out: TensorId },
    /// `out = mul * x + add` elementwise with constant coefficients.
    Affine { x: TensorId, mul: f64, out: TensorId },
    /// `out = x * s` where `s` is a single-element tensor.
    MulScalar { x: TensorId, s: TensorId, out: TensorId },
    Matmul { a: TensorId, b: TensorId, out: TensorId },
    Transpose { x: TensorId, out: TensorId },
    Reshape { x: TensorId, out: TensorId },
    Concat { parts: Vec<TensorId>, out: TensorId },
    ConcatCols { a: TensorId, b: TensorId, out: TensorId },
    BroadcastRows { x: TensorId, out: TensorId },
    Tanh { x: TensorId, out: TensorId },
    Sigmoid { x: TensorId, out: TensorId },
    Softmax { x: TensorId, out: TensorId },
    Log { x: TensorId, out: TensorId },
    Sum { x: TensorId, out: TensorId },
    Slice { x: TensorId, start: usize, out: TensorId },
    Lookup { table: TensorId, row: usize, out: TensorId },
    IndexAdd { base: TensorId, values: TensorId, indices: Vec<usize>, out: TensorId },
    Pad { x: TensorId, out: TensorId },
}

/// Arena of tensors plus the op record connecting them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of tensors currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaf creation ----------------------------------------------------

    /// Create a leaf tensor from raw data.
    pub fn tensor(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch { op: "tensor", lhs: shape, rhs: vec![] });
        }
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch { op: "tensor", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(self.push(shape, data, requires_grad))
    }

    /// Leaf that does not take gradients.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.tensor(data, shape, false)
    }

    /// Leaf that accumulates gradients.
    pub fn param(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.tensor(data, shape, true)
    }

    /// All-zero constant of the given shape.
    pub fn zeros(&mut self, shape: Vec<usize>) -> Result<TensorId> {
        let n = numel(&shape);
        self.tensor(vec![0.0; n], shape, false)
    }

    /// Single-element constant.
    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        self.tensor(vec![v], vec![1], false)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> TensorId {
        let grad = requires_grad.then(|| vec![0.0; data.len()]);
        self.nodes.push(Tensor { shape, data, requires_grad, grad });
        TensorId(self.nodes.len() - 1)
    }

    fn push_out(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[TensorId]) -> TensorId {
        let rg = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.push(shape, data, rg)
    }

    // ---- accessors --------------------------------------------------------

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    fn node(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    // ---- elementwise ops --------------------------------------------------

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.node(a).shape.clone();
        let out = self.push_out(shape, data, &[a, b]);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.node(a).shape.clone();
        let out = self.push_out(shape, data, &[a, b]);
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    /// `mul * x + add` elementwise, with constant coefficients.
    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> Result<TensorId> {
        let data: Vec<f64> = self.node(x).data.iter().map(|v| mul * v + add).collect();
        let shape = self.node(x).shape.clone();
        let out = self.push_out(shape, data, &[x]);
        self.ops.push(Op::Affine { x, mul, out });
        Ok(out)
    }

    /// Scale every element of `x` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.node(s).data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.node(x).shape.clone(),
                rhs: self.node(s).shape.clone(),
            });
        }
        let sv = self.node(s).data[0];
        let data: Vec<f64> = self.node(x).data.iter().map(|v| v * sv).collect();
        let shape = self.node(x).shape.clone();
        let out = self.push_out(shape, data, &[x, s]);
        self.ops.push(Op::MulScalar { x, s, out });
        Ok(out)
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.node(x).data.iter().map(|v| v.tanh()).collect();
        let shape = self.node(x).shape.clone();
        let out = self.push_out(shape, data, &[x]);
        self.ops.push(Op::Tanh { x, out });
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.node(x).data.iter().map(|&v| stable_sigmoid(v)).collect();
        let shape = self.node(x).shape.clone();
        let out = self.push_out(shape, data, &[x]);
        self.ops.push(Op::Sigmoid { x, out });
        Ok(out)
    }

    /// Natural log with the input clamped to [`LOG_EPS`] from below, so the
    /// result is always finite. The gradient is zero in the clamped region.
    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.node(x).data.iter().map(|v| v.max(LOG_EPS).ln()).collect();
        let shape = self.node(x).shape.clone();
        let out = self.push_out(shape, data, &[x]);
        self.ops.push(Op::Log { x, out });
        Ok(out)
    }

    /// Softmax over the last axis (each row independently for 2-D input).
    /// Row maxima are subtracted first, so arbitrarily large scores stay
    /// finite.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        let cols = *shape.last().unwrap();
        let mut data = self.node(x).data.clone();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = self.push_out(shape, data, &[x]);
        self.ops.push(Op::Softmax { x, out });
        Ok(out)
    }

    // ---- matrix ops -------------------------------------------------------

    /// Matrix product. Accepts `[m,k] x [k,n] -> [m,n]` and the matrix-vector
    /// form `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        let mismatch = || Error::ShapeMismatch { op: "matmul", lhs: ashape.clone(), rhs: bshape.clone() };
        if ashape.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (ashape[0], ashape[1]);
        let (out_shape, n) = match bshape.len() {
            1 if bshape[0] == k => (vec![m], 1),
            2 if bshape[0] == k => (vec![m, bshape[1]], bshape[1]),
            _ => return Err(mismatch()),
        };
        let mut data = vec![0.0; m * n];
        {
            let ad = &self.node(a).data;
            let bd = &self.node(b).data;
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        data[i * n + j] += av * bd[p * n + j];
                    }
                }
            }
        }
        let out = self.push_out(out_shape, data, &[a, b]);
        self.ops.push(Op::Matmul { a, b, out });
        Ok(out)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch { op: "transpose", lhs: shape, rhs: vec![] });
        }
        let (r, c) = (shape[0], shape[1]);
        let xd = &self.node(x).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xd[i * c + j];
            }
        }
        let out = self.push_out(vec![c, r], data, &[x]);
        self.ops.push(Op::Transpose { x, out });
        Ok(out)
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        if shape.is_empty() || shape.len() > 2 || numel(&shape) != self.node(x).data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.node(x).shape.clone(),
                rhs: shape,
            });
        }
        let data = self.node(x).data.clone();
        let out = self.push_out(shape, data, &[x]);
        self.ops.push(Op::Reshape { x, out });
        Ok(out)
    }

    /// Concatenate 1-D tensors end to end.
    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::EmptySequence("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.node(p).shape.len() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.node(p).shape.clone(),
                    rhs: vec![],
                });
            }
            data.extend_from_slice(&self.node(p).data);
        }
        let shape = vec![data.len()];
        let out = self.push_out(shape, data, parts);
        self.ops.push(Op::Concat { parts: parts.to_vec(), out });
        Ok(out)
    }

    /// Concatenate two 2-D tensors along the column axis.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if ashape.len() != 2 || bshape.len() != 2 || ashape[0] != bshape[0] {
            return Err(Error::ShapeMismatch { op: "concat_cols", lhs: ashape, rhs: bshape });
        }
        let (r, ca, cb) = (ashape[0], ashape[1], bshape[1]);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&self.node(a).data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&self.node(b).data[i * cb..(i + 1) * cb]);
        }
        let out = self.push_out(vec![r, ca + cb], data, &[a, b]);
        self.ops.push(Op::ConcatCols { a, b, out });
        Ok(out)
    }

    /// Repeat a 1-D tensor as every row of a 2-D tensor.
    pub fn broadcast_rows(&mut self, x: TensorId, rows: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 1 || rows == 0 {
            return Err(Error::ShapeMismatch { op: "broadcast_rows", lhs: shape, rhs: vec![rows] });
        }
        let c = shape[0];
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(&self.node(x).data);
        }
        let out = self.push_out(vec![rows, c], data, &[x]);
        self.ops.push(Op::BroadcastRows { x, out });
        Ok(out)
    }

    // ---- reductions and indexing -----------------------------------------

    /// Sum every element into a single-element tensor.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.node(x).data.iter().sum();
        let out = self.push_out(vec![1], vec![s], &[x]);
        self.ops.push(Op::Sum { x, out });
        Ok(out)
    }

    /// Contiguous slice of a 1-D tensor.
    pub fn slice(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 1 || len == 0 {
            return Err(Error::ShapeMismatch { op: "slice", lhs: shape, rhs: vec![start, len] });
        }
        if start + len > shape[0] {
            return Err(Error::IndexOutOfRange { op: "slice", index: start + len, len: shape[0] });
        }
        let data = self.node(x).data[start..start + len].to_vec();
        let out = self.push_out(vec![len], data, &[x]);
        self.ops.push(Op::Slice { x, start, out });
        Ok(out)
    }

    /// Fetch one row of a 2-D table. Gradients flow back into that row.
    pub fn lookup(&mut self, table: TensorId, row: usize) -> Result<TensorId> {
        let shape = self.node(table).shape.clone();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch { op: "lookup", lhs: shape, rhs: vec![row] });
        }
        if row >= shape[0] {
            return Err(Error::IndexOutOfRange { op: "lookup", index: row, len: shape[0] });
        }
        let c = shape[1];
        let data = self.node(table).data[row * c..(row + 1) * c].to_vec();
        let out = self.push_out(vec![c], data, &[table]);
        self.ops.push(Op::Lookup { table, row, out });
        Ok(out)
    }

    /// Scatter-add `values` into a copy of `base`: `out[indices[j]] += values[j]`.
    /// Repeated indices accumulate, so total mass is conserved.
    pub fn index_add(&mut self, base: TensorId, indices: &[usize], values: TensorId) -> Result<TensorId> {
        let bshape = self.node(base).shape.clone();
        let vshape = self.node(values).shape.clone();
        if bshape.len() != 1 || vshape.len() != 1 || indices.len() != vshape[0] {
            return Err(Error::ShapeMismatch { op: "index_add", lhs: bshape, rhs: vshape });
        }
        let n = bshape[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { op: "index_add", index: bad, len: n });
        }
        let mut data = self.node(base).data.clone();
        for (j, &i) in indices.iter().enumerate() {
            data[i] += self.node(values).data[j];
        }
        let out = self.push_out(vec![n], data, &[base, values]);
        self.ops.push(Op::IndexAdd { base, values, indices: indices.to_vec(), out });
        Ok(out)
    }

    /// Extend a 1-D tensor to `new_len` elements, zero-filling the tail.
    pub fn pad(&mut self, x: TensorId, new_len: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 1 || new_len < shape[0] {
            return Err(Error::ShapeMismatch { op: "pad", lhs: shape, rhs: vec![new_len] });
        }
        let mut data = self.node(x).data.clone();
        data.resize(new_len, 0.0);
        let out = self.push_out(vec![new_len], data, &[x]);
        self.ops.push(Op::Pad { x, out });
        Ok(out)
    }

    fn check_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        Ok(())
    }

    // ---- backward ---------------------------------------------------------

    /// Replay the tape in reverse from `loss`, accumulating `d loss / d t`
    /// into the `grad` buffer of every tensor with `requires_grad`.
    ///
    /// `loss` must hold exactly one element. Calling `backward` again without
    /// clearing gradients adds another full contribution on top.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(Error::NonScalarLoss { shape: self.node(loss).shape.clone() });
        }
        // Adjoints are kept separately from the persistent `grad` buffers so
        // that repeated backward calls accumulate cleanly.
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut adj);
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let (Some(grad), Some(a)) = (node.grad.as_mut(), a) {
                for (g, v) in grad.iter_mut().zip(a) {
                    *g += v;
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, op: &Op, adj: &mut [Option<Vec<f64>>]) {
        macro_rules! out_grad {
            ($out:expr) => {
                match &adj[$out.0] {
                    Some(g) => g.clone(),
                    None => return,
                }
            };
        }
        let add_to = |adj: &mut [Option<Vec<f64>>], id: TensorId, at: usize, v: f64, nodes: &[Tensor]| {
            if !nodes[id.0].requires_grad {
                return;
            }
            let buf = adj[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].data.len()]);
            buf[at] += v;
        };

        match op {
            Op::Add { a, b, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *a, i, v, &self.nodes);
                    add_to(adj, *b, i, v, &self.nodes);
                }
            }
            Op::Mul { a, b, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *a, i, v * self.node(*b).data[i], &self.nodes);
                    add_to(adj, *b, i, v * self.node(*a).data[i], &self.nodes);
                }
            }
            Op::Affine { x, mul, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *x, i, v * mul, &self.nodes);
                }
            }
            Op::MulScalar { x, s, out } => {
                let g = out_grad!(out);
                let sv = self.node(*s).data[0];
                let mut ds = 0.0;
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *x, i, v * sv, &self.nodes);
                    ds += v * self.node(*x).data[i];
                }
                add_to(adj, *s, 0, ds, &self.nodes);
            }
            Op::Matmul { a, b, out } => {
                let g = out_grad!(out);
                let (m, k) = (self.node(*a).shape[0], self.node(*a).shape[1]);
                let n = if self.node(*b).shape.len() == 1 { 1 } else { self.node(*b).shape[1] };
                // dA = g . B^T, dB = A^T . g
                for i in 0..m {
                    for p in 0..k {
                        let mut da = 0.0;
                        for j in 0..n {
                            da += g[i * n + j] * self.node(*b).data[p * n + j];
                        }
                        add_to(adj, *a, i * k + p, da, &self.nodes);
                    }
                }
                for p in 0..k {
                    for j in 0..n {
                        let mut db = 0.0;
                        for i in 0..m {
                            db += self.node(*a).data[i * k + p] * g[i * n + j];
                        }
                        add_to(adj, *b, p * n + j, db, &self.nodes);
                    }
                }
            }
            Op::Transpose { x, out } => {
                let g = out_grad!(out);
                let (c, r) = (self.node(*out).shape[0], self.node(*out).shape[1]);
                for i in 0..c {
                    for j in 0..r {
                        add_to(adj, *x, j * c + i, g[i * r + j], &self.nodes);
                    }
                }
            }
            Op::Reshape { x, out } | Op::Pad { x, out } => {
                let g = out_grad!(out);
                let n = self.node(*x).data.len();
                for i in 0..n {
                    add_to(adj, *x, i, g[i], &self.nodes);
                }
            }
            Op::Concat { parts, out } => {
                let g = out_grad!(out);
                let mut off = 0;
                for &p in parts {
                    let n = self.node(p).data.len();
                    for i in 0..n {
                        add_to(adj, p, i, g[off + i], &self.nodes);
                    }
                    off += n;
                }
            }
            Op::ConcatCols { a, b, out } => {
                let g = out_grad!(out);
                let (r, ca) = (self.node(*a).shape[0], self.node(*a).shape[1]);
                let cb = self.node(*b).shape[1];
                for i in 0..r {
                    for j in 0..ca {
                        add_to(adj, *a, i * ca + j, g[i * (ca + cb) + j], &self.nodes);
                    }
                    for j in 0..cb {
                        add_to(adj, *b, i * cb + j, g[i * (ca + cb) + ca + j], &self.nodes);
                    }
                }
            }
            Op::BroadcastRows { x, out } => {
                let g = out_grad!(out);
                let c = self.node(*x).data.len();
                let rows = self.node(*out).shape[0];
                for r in 0..rows {
                    for j in 0..c {
                        add_to(adj, *x, j, g[r * c + j], &self.nodes);
                    }
                }
            }
            Op::Tanh { x, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    let y = self.node(*out).data[i];
                    add_to(adj, *x, i, v * (1.0 - y * y), &self.nodes);
                }
            }
            Op::Sigmoid { x, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    let y = self.node(*out).data[i];
                    add_to(adj, *x, i, v * y * (1.0 - y), &self.nodes);
                }
            }
            Op::Softmax { x, out } => {
                let g = out_grad!(out);
                let cols = *self.node(*out).shape.last().unwrap();
                let y = &self.node(*out).data;
                for (row, gr) in g.chunks(cols).enumerate() {
                    let yr = &y[row * cols..(row + 1) * cols];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        add_to(adj, *x, row * cols + j, yr[j] * (gr[j] - dot), &self.nodes);
                    }
                }
            }
            Op::Log { x, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    let xi = self.node(*x).data[i];
                    if xi >= LOG_EPS {
                        add_to(adj, *x, i, v / xi, &self.nodes);
                    }
                }
            }
            Op::Sum { x, out } => {
                let g = out_grad!(out);
                let n = self.node(*x).data.len();
                for i in 0..n {
                    add_to(adj, *x, i, g[0], &self.nodes);
                }
            }
            Op::Slice { x, start, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *x, start + i, v, &self.nodes);
                }
            }
            Op::Lookup { table, row, out } => {
                let g = out_grad!(out);
                let c = self.node(*table).shape[1];
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *table, row * c + i, v, &self.nodes);
                }
            }
            Op::IndexAdd { base, values, indices, out } => {
                let g = out_grad!(out);
                for (i, &v) in g.iter().enumerate() {
                    add_to(adj, *base, i, v, &self.nodes);
                }
                for (j, &i) in indices.iter().enumerate() {
                    add_to(adj, *values, j, g[i], &self.nodes);
                }
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

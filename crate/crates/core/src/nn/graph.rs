//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`]; node ids are therefore a
//! topological order and the backward sweep simply walks the tape in
//! reverse.

use super::{NnError, ParamId, ParamSet, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    MaskedSoftmax(Var),
    Gather(Var, Vec<usize>),
    MeanRows(Var, Vec<bool>),
    RowKron(Var, Var),
    Sum(Var),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape. One graph per sample; drop it after the backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(Var, ParamId)>,
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> NnError {
    NnError::Shape(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (i, (o, v)) in out.iter_mut().zip(row).enumerate() {
        *o = if keep(i) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `a (m x k) * b (k x n)` into `out (m x n)`, accumulating.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a (m x k) * b^T` where `b` is `n x k`.
fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `a^T (k x m)^T ... ` i.e. `a` is `m x k`, `b` is `m x n`, result `k x n`.
fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
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

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copy a parameter onto the tape and remember the binding so that
    /// [`Graph::param_grads`] can route its gradient back.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let v = self.input(params.get(id).clone());
        self.bindings.push((v, id));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("sub", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * s).collect();
        let value = Tensor::new(x.rows(), x.cols(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `a (r x c) + b (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(shape_err("add_row", x.shape(), y.shape()));
        }
        let c = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, p)| p + y.data()[i % c])
            .collect();
        let value = Tensor::new(x.rows(), c, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x.shape(), y.shape()));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        let mut out = vec![0.0; m * n];
        gemm_acc(x.data(), y.data(), &mut out, m, k, n);
        let value = Tensor::new(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("matmul_t", x.shape(), y.shape()));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(x.data(), y.data(), &mut out, m, k, n);
        let value = Tensor::new(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulT(a, b), rg))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Shape("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first).shape(), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Vertical stacking; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Shape("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        for p in parts {
            if self.value(*p).cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first).shape(), self.shape(*p)));
            }
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let value = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let x = self.value(a);
        if start + len > x.cols() || len == 0 {
            return Err(NnError::Shape(format!(
                "slice_cols: columns {start}..{} of a {}x{} tensor",
                start + len,
                x.rows(),
                x.cols()
            )));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let value = Tensor::new(x.rows(), len, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|v| v.tanh()).collect())
            .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| sigmoid(v)).collect())
            .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for r in 0..x.rows() {
            softmax_row(x.row_slice(r), None, &mut out[r * x.cols()..(r + 1) * x.cols()]);
        }
        let value = Tensor::new(x.rows(), x.cols(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Row-wise softmax where columns with `keep[c] == false` get exactly
    /// zero weight.
    pub fn masked_softmax(&mut self, a: Var, keep: &[bool]) -> Result<Var, NnError> {
        let x = self.value(a);
        if keep.len() != x.cols() {
            return Err(NnError::Shape(format!(
                "masked_softmax: mask of length {} for {} columns",
                keep.len(),
                x.cols()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(NnError::Degenerate("every position is masked".into()));
        }
        let mut out = vec![0.0; x.len()];
        for r in 0..x.rows() {
            softmax_row(
                x.row_slice(r),
                Some(keep),
                &mut out[r * x.cols()..(r + 1) * x.cols()],
            );
        }
        let value = Tensor::new(x.rows(), x.cols(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MaskedSoftmax(a), rg))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::Shape(format!(
                "gather: row {bad} of a {}x{} table",
                t.rows(),
                t.cols()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(ids.len(), t.cols(), data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), rg))
    }

    /// Mean of the rows flagged `true`; result is `1 x cols`.
    pub fn mean_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var, NnError> {
        let x = self.value(a);
        if keep.len() != x.rows() {
            return Err(NnError::Shape(format!(
                "mean_rows: mask of length {} for {} rows",
                keep.len(),
                x.rows()
            )));
        }
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(NnError::Degenerate("mean over zero rows".into()));
        }
        let mut out = vec![0.0; x.cols()];
        for r in (0..x.rows()).filter(|&r| keep[r]) {
            out.iter_mut()
                .zip(x.row_slice(r))
                .for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        let value = Tensor::row(out);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MeanRows(a, keep.to_vec()), rg))
    }

    /// Mean of every entry, `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise Kronecker product: row `i` of the result is
    /// `a[i] ⊗ b[i]`, with `b`'s index varying fastest.
    pub fn row_kron(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(shape_err("row_kron", x.shape(), y.shape()));
        }
        let (p, q) = (x.cols(), y.cols());
        let mut data = Vec::with_capacity(x.rows() * p * q);
        for r in 0..x.rows() {
            for &xv in x.row_slice(r) {
                data.extend(y.row_slice(r).iter().map(|yv| xv * yv));
            }
        }
        let value = Tensor::new(x.rows(), p * q, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::RowKron(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// `-log softmax(logits)[target]` for a `1 x V` row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NnError> {
        let x = self.value(logits);
        if x.rows() != 1 {
            return Err(NnError::Shape(format!(
                "cross_entropy expects a 1xV row, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        if target >= x.cols() {
            return Err(NnError::Shape(format!(
                "cross_entropy: target {target} outside {} classes",
                x.cols()
            )));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = log_z - x.data()[target];
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target), rg))
    }

    /// Backward sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients, NnError> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(NnError::Shape(format!(
                "backward root must be 1x1, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.backward_seeded(&[(root, Tensor::scalar(1.0))])
    }

    /// Backward sweep from arbitrary seed gradients. Seeds on the same node
    /// are summed.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients, NnError> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, seed) in seeds {
            if seed.shape() != self.shape(*v) {
                return Err(shape_err("backward seed", self.shape(*v), seed.shape()));
            }
            accumulate(&mut grads[v.0], seed.clone());
            top = top.max(v.0 + 1);
        }
        for idx in (0..top).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        accumulate(&mut grads[v.0], g.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if needs(b) {
                    let mut n = g.clone();
                    n.scale_assign(-1.0);
                    accumulate(&mut grads[b.0], n);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if needs(a) {
                    accumulate(&mut grads[a.0], zip_map(g, y, |g, y| g * y));
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], zip_map(g, x, |g, x| g * x));
                }
            }
            Op::Scale(a, s) => {
                if needs(a) {
                    let mut n = g.clone();
                    n.scale_assign(*s);
                    accumulate(&mut grads[a.0], n);
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if needs(b) {
                    let mut col = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        col.iter_mut()
                            .zip(g.row_slice(r))
                            .for_each(|(c, v)| *c += v);
                    }
                    accumulate(&mut grads[b.0], Tensor::row(col));
                }
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if needs(a) {
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(g.data(), y.data(), &mut da, m, n, k);
                    accumulate(&mut grads[a.0], Tensor::new(m, k, da).expect("shape"));
                }
                if needs(b) {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(x.data(), g.data(), &mut db, m, k, n);
                    accumulate(&mut grads[b.0], Tensor::new(k, n, db).expect("shape"));
                }
            }
            Op::MatMulT(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.rows());
                if needs(a) {
                    // dA = G * B
                    let mut da = vec![0.0; m * k];
                    gemm_acc(g.data(), y.data(), &mut da, m, n, k);
                    accumulate(&mut grads[a.0], Tensor::new(m, k, da).expect("shape"));
                }
                if needs(b) {
                    // dB = G^T * A
                    let mut db = vec![0.0; n * k];
                    gemm_tn_acc(g.data(), x.data(), &mut db, m, n, k);
                    accumulate(&mut grads[b.0], Tensor::new(n, k, db).expect("shape"));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    if needs(p) {
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + cols]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(rows, cols, data).expect("shape"));
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    if needs(p) {
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads[p.0], Tensor::new(rows, cols, data).expect("shape"));
                    }
                    offset += rows;
                }
            }
            Op::SliceCols(a, start) => {
                if needs(a) {
                    let (rows, cols) = self.shape(*a);
                    let mut full = Tensor::zeros(rows, cols);
                    let len = g.cols();
                    for r in 0..rows {
                        full.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(g.row_slice(r));
                    }
                    accumulate(&mut grads[a.0], full);
                }
            }
            Op::Tanh(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], zip_map(g, &node.value, |g, y| g * (1.0 - y * y)));
                }
            }
            Op::Sigmoid(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], zip_map(g, &node.value, |g, y| g * y * (1.0 - y)));
                }
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                if needs(a) {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::new(y.rows(), cols, dx).expect("shape"));
                }
            }
            Op::Gather(table, ids) => {
                if needs(table) {
                    let (rows, cols) = self.shape(*table);
                    let mut dt = Tensor::zeros(rows, cols);
                    for (r, &i) in ids.iter().enumerate() {
                        dt.data_mut()[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(g.row_slice(r))
                            .for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads[table.0], dt);
                }
            }
            Op::MeanRows(a, keep) => {
                if needs(a) {
                    let (rows, cols) = self.shape(*a);
                    let count = keep.iter().filter(|&&k| k).count() as f64;
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in (0..rows).filter(|&r| keep[r]) {
                        dx.data_mut()[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(d, v)| *d = v / count);
                    }
                    accumulate(&mut grads[a.0], dx);
                }
            }
            Op::RowKron(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (p, q) = (x.cols(), y.cols());
                if needs(a) {
                    let mut dx = Tensor::zeros(x.rows(), p);
                    for r in 0..x.rows() {
                        let gr = g.row_slice(r);
                        let yr = y.row_slice(r);
                        for i in 0..p {
                            dx.data_mut()[r * p + i] =
                                gr[i * q..(i + 1) * q].iter().zip(yr).map(|(a, b)| a * b).sum();
                        }
                    }
                    accumulate(&mut grads[a.0], dx);
                }
                if needs(b) {
                    let mut dy = Tensor::zeros(y.rows(), q);
                    for r in 0..y.rows() {
                        let gr = g.row_slice(r);
                        let xr = x.row_slice(r);
                        for (i, &xv) in xr.iter().enumerate() {
                            dy.data_mut()[r * q..(r + 1) * q]
                                .iter_mut()
                                .zip(&gr[i * q..(i + 1) * q])
                                .for_each(|(d, gv)| *d += xv * gv);
                        }
                    }
                    accumulate(&mut grads[b.0], dy);
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads[a.0], Tensor::filled(rows, cols, g.item()));
                }
            }
            Op::CrossEntropy(logits, target) => {
                if needs(logits) {
                    let x = self.value(*logits);
                    let mut p = vec![0.0; x.cols()];
                    softmax_row(x.data(), None, &mut p);
                    p[*target] -= 1.0;
                    let mut d = Tensor::row(p);
                    d.scale_assign(g.item());
                    accumulate(&mut grads[logits.0], d);
                }
            }
        }
    }

    /// Sum the gradients of every parameter bound on this tape into tensors
    /// shaped like `params`.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> Vec<Tensor> {
        let mut out = params.zeros_like();
        self.accumulate_param_grads(grads, &mut out);
        out
    }

    /// Add this tape's parameter gradients into `out`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut [Tensor]) {
        for (v, id) in &self.bindings {
            if let Some(g) = grads.get(*v) {
                out[id.0].add_assign(g);
            }
        }
    }

    /// The tape node a parameter was bound to, if any (first binding).
    pub fn binding(&self, id: ParamId) -> Option<Var> {
        self.bindings
            .iter()
            .find(|(_, p)| *p == id)
            .map(|(v, _)| *v)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

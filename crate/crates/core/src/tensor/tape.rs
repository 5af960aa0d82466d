//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each primitive appends a
//! node holding its output value and the handles of its inputs; nodes are
//! therefore stored in topological order and [`Tape::backward`] is a single
//! reverse sweep.

use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix in CSR layout, applied along the leading axis of a
/// 2-D tensor: `out[r, :] = sum_k w_k * in[col_k, :]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    n_out: usize,
    n_in: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    /// Duplicate `(row, col)` entries are summed.
    pub fn from_triplets(
        n_out: usize,
        n_in: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_out];
        for (r, c, v) in triplets {
            if r >= n_out || c >= n_in {
                return Err(Error::shape(format!(
                    "sparse entry ({r}, {c}) outside {n_out}x{n_in}"
                )));
            }
            match rows[r].iter_mut().find(|(cc, _)| *cc == c) {
                Some(e) => e.1 += v,
                None => rows[r].push((c, v)),
            }
        }
        let mut row_ptr = Vec::with_capacity(n_out + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n_out,
            n_in,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Block-diagonal repetition of `self`, `copies` times.
    pub fn repeat_diagonal(&self, copies: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(self.n_out * copies + 1);
        let mut cols = Vec::with_capacity(self.cols.len() * copies);
        let mut vals = Vec::with_capacity(self.vals.len() * copies);
        row_ptr.push(0);
        for b in 0..copies {
            for r in 0..self.n_out {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    cols.push(self.cols[k] + b * self.n_in);
                    vals.push(self.vals[k]);
                }
                row_ptr.push(cols.len());
            }
        }
        Self {
            n_out: self.n_out * copies,
            n_in: self.n_in * copies,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    /// Dense product for a row-major `[n_in, width]` buffer.
    pub fn apply(&self, input: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_out * width];
        for r in 0..self.n_out {
            let dst = &mut out[r * width..(r + 1) * width];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.vals[k];
                let src = &input[self.cols[k] * width..(self.cols[k] + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    fn apply_transpose_acc(&self, grad_out: &[f64], width: usize, acc: &mut [f64]) {
        for r in 0..self.n_out {
            let g = &grad_out[r * width..(r + 1) * width];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.vals[k];
                let dst = &mut acc[self.cols[k] * width..(self.cols[k] + 1) * width];
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += w * s;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Right operand is a single row repeated over the leading axis.
    Rows,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
        end: usize,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    Sparse(Var, Arc<SparseRows>),
    Lstm {
        pre: Var,
        bias: Var,
        c_prev: Var,
        forget: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a` (m x k), `b` (k x n)
    // and `c` (m x n, row-major); every caller derives them from tensor shapes
    // that were validated before the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerics(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn broadcast(&self, a: Var, b: Var, name: &str) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let row_like = match sb {
            [c] => Some(*c),
            [1, c] => Some(*c),
            _ => None,
        };
        match (row_like, sa.last()) {
            (Some(c), Some(&ca)) if c == ca && sa.len() >= 2 => Ok(Broadcast::Rows),
            _ => Err(Error::shape(format!("{name}: {sa:?} vs {sb:?}"))),
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast)> {
        let bc = self.broadcast(a, b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<f64> = match bc {
            Broadcast::Same => va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
            Broadcast::Rows => {
                let c = vb.numel();
                va.data()
                    .chunks(c)
                    .flat_map(|row| row.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)))
                    .collect()
            }
        };
        Ok((Tensor::new(va.shape().to_vec(), data)?, bc))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n) = match (va.shape(), vb.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return Err(Error::shape(format!("matmul {sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), (k, 1), vb.data(), (n, 1), &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul(a, b),
            rg,
            "matmul",
        )
    }

    /// Elementwise sum; `b` may be a single row broadcast over the leading axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b, bc), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b, bc), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b, bc), rg, "mul")
    }

    /// Concatenate along the last axis. Leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let lead = self.value(*first).shape();
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!(
                    "concat {:?} with {s:?}",
                    self.value(*first).shape()
                )));
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                let c = v.cols();
                out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat(parts.to_vec()),
            rg,
            "concat",
        )
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(input);
        let c = v.cols();
        if v.rank() == 0 || start >= end || end > c {
            return Err(Error::shape(format!(
                "slice {start}..{end} of {:?}",
                v.shape()
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(v.rows() * w);
        for row in v.data().chunks(c) {
            out.extend_from_slice(&row[start..end]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = w;
        let rg = self.rg(&[input]);
        self.push(
            Tensor::new(shape, out)?,
            Op::Slice { input, start, end },
            rg,
            "slice",
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = unary(self.value(x), f64::tanh);
        let rg = self.rg(&[x]);
        self.push(t, Op::Tanh(x), rg, "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = unary(self.value(x), sigmoid);
        let rg = self.rg(&[x]);
        self.push(t, Op::Sigmoid(x), rg, "sigmoid")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = unary(self.value(x), |v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg, "relu")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let t = unary(self.value(x), f64::abs);
        let rg = self.rg(&[x]);
        self.push(t, Op::Abs(x), rg, "abs")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let t = unary(self.value(x), |v| v * v);
        let rg = self.rg(&[x]);
        self.push(t, Op::Square(x), rg, "square")
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let t = unary(self.value(x), f64::sqrt);
        let rg = self.rg(&[x]);
        self.push(t, Op::Sqrt(x), rg, "sqrt")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(Error::shape("mean of empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg, "mean")
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let t = unary(self.value(x), |v| v * k);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, k), rg, "scale")
    }

    /// Apply a constant sparse matrix along the leading axis of a 2-D tensor.
    pub fn sparse_rows(&mut self, m: &Arc<SparseRows>, x: Var) -> Result<Var> {
        let v = self.value(x);
        match v.shape() {
            [n, c] if *n == m.n_in => {
                let c = *c;
                let out = m.apply(v.data(), c);
                let rg = self.rg(&[x]);
                self.push(
                    Tensor::new(vec![m.n_out, c], out)?,
                    Op::Sparse(x, Arc::clone(m)),
                    rg,
                    "sparse_rows",
                )
            }
            s => Err(Error::shape(format!(
                "sparse {}x{} applied to {s:?}",
                m.n_out, m.n_in
            ))),
        }
    }

    /// Fused LSTM cell update.
    ///
    /// `pre: [R, 4H]` holds the gate pre-activations without bias, in the
    /// order input, forget, candidate, output; `bias: [4H]`; `c_prev: [R, H]`.
    /// Returns `[R, 2H]` = `(h | c)` with `c = i*g (+ f*c_prev)` and
    /// `h = o*c`. The forget term is included only when `forget` is set.
    pub fn lstm_cell(&mut self, pre: Var, bias: Var, c_prev: Var, forget: bool) -> Result<Var> {
        let (vp, vb, vc) = (self.value(pre), self.value(bias), self.value(c_prev));
        let (r, h) = match (vp.shape(), vc.shape()) {
            ([r, g], [r2, h]) if r == r2 && *g == 4 * h && vb.numel() == *g => (*r, *h),
            _ => {
                return Err(Error::shape(format!(
                    "lstm_cell pre {:?} bias {:?} state {:?}",
                    vp.shape(),
                    vb.shape(),
                    vc.shape()
                )))
            }
        };
        let mut out = vec![0.0; r * 2 * h];
        for row in 0..r {
            let gates = lstm_gates(&vp.data()[row * 4 * h..(row + 1) * 4 * h], vb.data(), h);
            let cp = &vc.data()[row * h..(row + 1) * h];
            let dst = &mut out[row * 2 * h..(row + 1) * 2 * h];
            for k in 0..h {
                let [i, f, g, o] = gates[k];
                let c = i * g + if forget { f * cp[k] } else { 0.0 };
                dst[k] = o * c;
                dst[h + k] = c;
            }
        }
        let rg = self.rg(&[pre, bias, c_prev]);
        self.push(
            Tensor::new(vec![r, 2 * h], out)?,
            Op::Lstm {
                pre,
                bias,
                c_prev,
                forget,
            },
            rg,
            "lstm_cell",
        )
    }

    /// Reverse sweep from a one-element `loss`. Gradients accumulate over
    /// every use of a node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // Only leaves are reported; intermediate gradients are dropped
            // as soon as they have been pushed to their inputs.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            match g {
                Some(data) if node.requires_grad => {
                    if data.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numerics("backward".into()));
                    }
                    out.push(Some(Tensor::new(node.value.shape().to_vec(), data)?));
                }
                _ => out.push(None),
            }
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let want = |v: Var| nodes[v.0].requires_grad;
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
        }
        // Accumulate `g * dfdx(x, y)` into `x`'s slot for pointwise ops.
        let pointwise = |grads: &mut [Option<Vec<f64>>], x: Var, d: &dyn Fn(f64, f64) -> f64| {
            let xs = nodes[x.0].value.data();
            let ys = node.value.data();
            let acc = slot(grads, nodes, x);
            for (((a, gi), xi), yi) in acc.iter_mut().zip(g).zip(xs).zip(ys) {
                *a += gi * d(*xi, *yi);
            }
        };
        // Reduce `g` (times optional factor) into a broadcast operand.
        let reduce_into = |grads: &mut [Option<Vec<f64>>],
                           b: Var,
                           bc: Broadcast,
                           sign: f64,
                           factor: Option<&[f64]>| {
            let acc = slot(grads, nodes, b);
            let c = acc.len();
            match bc {
                Broadcast::Same => {
                    for (i, a) in acc.iter_mut().enumerate() {
                        *a += sign * g[i] * factor.map_or(1.0, |f| f[i]);
                    }
                }
                Broadcast::Rows => {
                    for (i, gi) in g.iter().enumerate() {
                        acc[i % c] += sign * gi * factor.map_or(1.0, |f| f[i]);
                    }
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if want(*a) {
                    let acc = slot(grads, nodes, *a);
                    gemm(m, n, k, g, (n, 1), vb.data(), (1, n), acc, 1.0);
                }
                if want(*b) {
                    let acc = slot(grads, nodes, *b);
                    gemm(k, m, n, va.data(), (1, k), g, (n, 1), acc, 1.0);
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if want(*a) {
                    for (acc, gi) in slot(grads, nodes, *a).iter_mut().zip(g) {
                        *acc += gi;
                    }
                }
                if want(*b) {
                    reduce_into(grads, *b, *bc, sign, None);
                }
            }
            Op::Mul(a, b, bc) => {
                if want(*a) {
                    let vb = nodes[b.0].value.data();
                    let c = vb.len();
                    let acc = slot(grads, nodes, *a);
                    for (i, (ai, gi)) in acc.iter_mut().zip(g).enumerate() {
                        let bi = match bc {
                            Broadcast::Same => vb[i],
                            Broadcast::Rows => vb[i % c],
                        };
                        *ai += gi * bi;
                    }
                }
                if want(*b) {
                    let va = nodes[a.0].value.data();
                    reduce_into(grads, *b, *bc, 1.0, Some(va));
                }
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].value.cols();
                    if want(*p) {
                        let acc = slot(grads, nodes, *p);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            for (a, s) in acc[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *a += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Slice { input, start, end } => {
                let c = nodes[input.0].value.cols();
                let w = end - start;
                let acc = slot(grads, nodes, *input);
                for (r, grow) in g.chunks(w).enumerate() {
                    for (a, s) in acc[r * c + start..r * c + end].iter_mut().zip(grow) {
                        *a += s;
                    }
                }
            }
            Op::Tanh(x) => pointwise(grads, *x, &|_, y| 1.0 - y * y),
            Op::Sigmoid(x) => pointwise(grads, *x, &|_, y| y * (1.0 - y)),
            Op::Relu(x) => pointwise(grads, *x, &|x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Abs(x) => pointwise(grads, *x, &|x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(x) => pointwise(grads, *x, &|x, _| 2.0 * x),
            Op::Sqrt(x) => pointwise(grads, *x, &|_, y| 0.5 / y),
            Op::Sum(x) | Op::Mean(x) => {
                let acc = slot(grads, nodes, *x);
                let k = match node.op {
                    Op::Mean(_) => g[0] / acc.len() as f64,
                    _ => g[0],
                };
                for a in acc.iter_mut() {
                    *a += k;
                }
            }
            Op::Scale(x, k) => {
                for (a, gi) in slot(grads, nodes, *x).iter_mut().zip(g) {
                    *a += k * gi;
                }
            }
            Op::Sparse(x, m) => {
                let c = node.value.cols();
                m.apply_transpose_acc(g, c, slot(grads, nodes, *x));
            }
            Op::Lstm {
                pre,
                bias,
                c_prev,
                forget,
            } => {
                let (vp, vb, vc) = (
                    &nodes[pre.0].value,
                    &nodes[bias.0].value,
                    &nodes[c_prev.0].value,
                );
                let h = vc.cols();
                let r = vc.rows();
                let mut d_pre = vec![0.0; r * 4 * h];
                let mut d_cp = vec![0.0; r * h];
                for row in 0..r {
                    let gates =
                        lstm_gates(&vp.data()[row * 4 * h..(row + 1) * 4 * h], vb.data(), h);
                    let out = &node.value.data()[row * 2 * h..(row + 1) * 2 * h];
                    let go = &g[row * 2 * h..(row + 1) * 2 * h];
                    let cp = &vc.data()[row * h..(row + 1) * h];
                    let dp = &mut d_pre[row * 4 * h..(row + 1) * 4 * h];
                    for k in 0..h {
                        let [i, f, gg, o] = gates[k];
                        let c = out[h + k];
                        let dc = go[h + k] + go[k] * o;
                        dp[k] = dc * gg * i * (1.0 - i);
                        if *forget {
                            dp[h + k] = dc * cp[k] * f * (1.0 - f);
                            d_cp[row * h + k] = dc * f;
                        }
                        dp[2 * h + k] = dc * i * (1.0 - gg * gg);
                        dp[3 * h + k] = go[k] * c * o * (1.0 - o);
                    }
                }
                if want(*bias) {
                    let acc = slot(grads, nodes, *bias);
                    for row in d_pre.chunks(4 * h) {
                        for (a, d) in acc.iter_mut().zip(row) {
                            *a += d;
                        }
                    }
                }
                if want(*c_prev) {
                    for (a, d) in slot(grads, nodes, *c_prev).iter_mut().zip(&d_cp) {
                        *a += d;
                    }
                }
                if want(*pre) {
                    for (a, d) in slot(grads, nodes, *pre).iter_mut().zip(&d_pre) {
                        *a += d;
                    }
                }
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Activated `[i, f, g, o]` per hidden unit for one row.
fn lstm_gates(pre: &[f64], bias: &[f64], h: usize) -> Vec<[f64; 4]> {
    (0..h)
        .map(|k| {
            [
                sigmoid(pre[k] + bias[k]),
                sigmoid(pre[h + k] + bias[h + k]),
                (pre[2 * h + k] + bias[2 * h + k]).tanh(),
                sigmoid(pre[3 * h + k] + bias[3 * h + k]),
            ]
        })
        .collect()
}

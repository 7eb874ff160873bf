//! Reverse-mode differentiation over a linear record of executed primitives.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the nodes in exact reverse order and accumulates gradients into each
//! input additively, so fan-out is handled by summation.

use std::sync::Arc;

use super::kernels::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sigmoid, softmax_in_place};
use super::param::{ParamId, ParamStore};
use super::sparse::Csr;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Normalizes the last dimension.
    Softmax,
}

/// Lower clamp applied to probabilities inside log-losses.
pub const PROB_EPS: f64 = 1e-7;

enum Op {
    Constant,
    Watched,
    Param(ParamId),
    MatMul(Var, Var),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        k: usize,
    },
    Spmm {
        at: Arc<Csr>,
        x: Var,
    },
    ConcatCols(Vec<Var>),
    SwapMiddle {
        x: Var,
        dims: [usize; 4],
    },
    Reshape(Var),
    Lstm {
        state: Option<Var>,
        x: Var,
        w: Var,
        b: Var,
        // i, f, g, o activations followed by tanh(c'), each of length H
        cache: Vec<f64>,
    },
    StackRows {
        parts: Vec<Var>,
        row: usize,
    },
    SelectRow(Var, usize),
    SelectCol(Var, usize),
    TopKMean {
        x: Var,
        picks: Vec<Vec<usize>>,
    },
    Bce {
        p: Var,
        y: Vec<f64>,
        binary: bool,
    },
    Nll {
        probs: Var,
        labels: Vec<usize>,
    },
    Sum(Vec<Var>),
    Dot {
        x: Var,
        w: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of the tape that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn watch(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Watched, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `x·W + b` for `x` of shape `[m, k]` or `[k]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.rank() != 2 || tx.cols() != tw.shape()[0] || tx.rank() > 2 {
            return Err(shape_err("affine", tx, tw));
        }
        let (m, k, n) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
        if tb.numel() != n {
            return Err(shape_err("affine bias", tw, tb));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(tb.data());
        }
        gemm_acc(tx.data(), tw.data(), &mut out, m, k, n);
        let shape = if tx.rank() == 1 { vec![n] } else { vec![m, n] };
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Affine { x, w, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * s).collect(),
        )
        .expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::Scale(a, s), needs)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let ta = self.value(a);
        let mut data = ta.data().to_vec();
        match kind {
            Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => data.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => {
                let last = *ta.shape().last().expect("rank >= 1");
                data.chunks_exact_mut(last).for_each(softmax_in_place);
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::Act(a, kind), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Softmax)
    }

    /// Same-length 1-D convolution along rows of `x: [L, C_in]` with
    /// `w: [C_out, C_in, k]`, `b: [C_out]`, zero padding `(k-1)/2` per side.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.rank() != 3 || tx.rank() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(shape_err("conv1d", tx, tw));
        }
        let (len, cin) = (tx.shape()[0], tx.shape()[1]);
        let (cout, k) = (tw.shape()[0], tw.shape()[2]);
        if k % 2 == 0 {
            return Err(Error::config(format!("conv1d kernel size must be odd, got {k}")));
        }
        if tb.numel() != cout {
            return Err(shape_err("conv1d bias", tw, tb));
        }
        let pad = (k - 1) / 2;
        let taps = conv_taps(tw.data(), cout, cin, k);
        let mut out = Vec::with_capacity(len * cout);
        for _ in 0..len {
            out.extend_from_slice(tb.data());
        }
        for l in 0..len {
            for (j, tap) in taps.iter().enumerate() {
                let src = l + j;
                if src < pad || src - pad >= len {
                    continue;
                }
                let s = src - pad;
                gemm_acc(
                    &tx.data()[s * cin..(s + 1) * cin],
                    tap,
                    &mut out[l * cout..(l + 1) * cout],
                    1,
                    cin,
                    cout,
                );
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![len, cout], out)?,
            Op::Conv1d { x, w, b, k },
            needs,
        ))
    }

    /// Applies the constant square matrix `a` to every consecutive block of
    /// `a.dim()` rows of `x`.
    pub fn spmm_blocks(&mut self, a: &Arc<Csr>, at: &Arc<Csr>, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || !tx.shape()[0].is_multiple_of(a.dim()) {
            return Err(Error::Shape {
                op: "spmm",
                left: vec![a.dim(), a.dim()],
                right: tx.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; tx.numel()];
        a.apply_blocks_acc(tx.data(), &mut out, tx.shape()[1]);
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(
            t,
            Op::Spmm {
                at: Arc::clone(at),
                x,
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            needs,
        ))
    }

    /// Reinterprets `x` as `[a, b, c, d]` and returns `[a, c, b, d]`.
    pub fn swap_middle(&mut self, x: Var, dims: [usize; 4]) -> Result<Var> {
        let tx = self.value(x);
        let [a, b, c, d] = dims;
        if tx.numel() != a * b * c * d {
            return Err(Error::Shape {
                op: "swap_middle",
                left: tx.shape().to_vec(),
                right: dims.to_vec(),
            });
        }
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for i in 0..a {
            for p in 0..b {
                for q in 0..c {
                    let s = ((i * b + p) * c + q) * d;
                    let o = ((i * c + q) * b + p) * d;
                    out[o..o + d].copy_from_slice(&src[s..s + d]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![a, c, b, d], out)?,
            Op::SwapMiddle { x, dims },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// One gated recurrent step. `state` is `[2, H]` holding `h` then `c`
    /// (`None` means zeros), `x` has `C` values, `w` is `[C + H, 4H]` with gate
    /// blocks ordered input, forget, candidate, output. Returns the new `[2, H]`
    /// state.
    pub fn lstm_cell(&mut self, state: Option<Var>, x: Var, w: Var, b: Var) -> Result<Var> {
        let tw = self.value(w);
        let tx = self.value(x);
        if tw.rank() != 2 || !tw.shape()[1].is_multiple_of(4) {
            return Err(shape_err("lstm weight", tx, tw));
        }
        let hidden = tw.shape()[1] / 4;
        let cin = tx.numel();
        if tw.shape()[0] != cin + hidden {
            return Err(shape_err("lstm input", tx, tw));
        }
        if self.value(b).numel() != 4 * hidden {
            return Err(shape_err("lstm bias", tw, self.value(b)));
        }
        let zeros = vec![0.0; 2 * hidden];
        let prev = match state {
            Some(s) => {
                let ts = self.value(s);
                if ts.numel() != 2 * hidden {
                    return Err(shape_err("lstm state", ts, tw));
                }
                ts.data()
            }
            None => &zeros,
        };
        let (h_prev, c_prev) = prev.split_at(hidden);
        let mut input = Vec::with_capacity(cin + hidden);
        input.extend_from_slice(tx.data());
        input.extend_from_slice(h_prev);
        let mut z = self.value(b).data().to_vec();
        gemm_acc(&input, tw.data(), &mut z, 1, cin + hidden, 4 * hidden);

        let mut cache = vec![0.0; 5 * hidden];
        let mut out = vec![0.0; 2 * hidden];
        for u in 0..hidden {
            let ig = sigmoid(z[u]);
            let fg = sigmoid(z[hidden + u]);
            let gg = z[2 * hidden + u].tanh();
            let og = sigmoid(z[3 * hidden + u]);
            let c = fg * c_prev[u] + ig * gg;
            let tc = c.tanh();
            out[u] = og * tc;
            out[hidden + u] = c;
            cache[u] = ig;
            cache[hidden + u] = fg;
            cache[2 * hidden + u] = gg;
            cache[3 * hidden + u] = og;
            cache[4 * hidden + u] = tc;
        }
        let needs =
            state.is_some_and(|s| self.needs(s)) || self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![2, hidden], out)?,
            Op::Lstm {
                state,
                x,
                w,
                b,
                cache,
            },
            needs,
        ))
    }

    /// Stacks row `row` of each part into a `[parts, cols]` matrix.
    pub fn stack_rows(&mut self, parts: &[Var], row: usize) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::with_capacity(parts.len() * cols);
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols || row >= t.rows() {
                return Err(shape_err("stack_rows", self.value(parts[0]), t));
            }
            out.extend_from_slice(t.row(row));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![parts.len(), cols], out)?,
            Op::StackRows {
                parts: parts.to_vec(),
                row,
            },
            needs,
        ))
    }

    pub fn select_row(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if i >= t.rows() {
            return Err(Error::Shape {
                op: "select_row",
                left: t.shape().to_vec(),
                right: vec![i],
            });
        }
        let row = Tensor::vector(t.row(i).to_vec());
        let needs = self.needs(x);
        Ok(self.push(row, Op::SelectRow(x, i), needs))
    }

    pub fn select_col(&mut self, x: Var, c: usize) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        if c >= cols {
            return Err(Error::Shape {
                op: "select_col",
                left: t.shape().to_vec(),
                right: vec![c],
            });
        }
        let col: Vec<f64> = (0..t.rows()).map(|r| t.data()[r * cols + c]).collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(col), Op::SelectCol(x, c), needs))
    }

    /// Per column of `x: [L, C]`, mean of its `k` largest entries; ties go to
    /// the lower row index. Output has `C` values.
    pub fn topk_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if k == 0 || k > rows {
            return Err(Error::Shape {
                op: "topk_mean",
                left: t.shape().to_vec(),
                right: vec![k],
            });
        }
        let mut picks = Vec::with_capacity(cols);
        let mut out = Vec::with_capacity(cols);
        for c in 0..cols {
            let sel = top_k_indices((0..rows).map(|r| t.data()[r * cols + c]), k);
            let sum: f64 = sel.iter().map(|&r| t.data()[r * cols + c]).sum();
            out.push(sum / k as f64);
            picks.push(sel);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::TopKMean { x, picks }, needs))
    }

    /// Cross-entropy of probabilities `p` against targets `y`, summed over
    /// entries. With `binary`, each entry is a Bernoulli probability and the
    /// negative term `(1-y)·log(1-p)` is included. Probabilities are clamped to
    /// `[PROB_EPS, 1-PROB_EPS]`.
    pub fn bce(&mut self, p: Var, y: &[f64], binary: bool) -> Result<Var> {
        let tp = self.value(p);
        if tp.numel() != y.len() {
            return Err(Error::Shape {
                op: "bce",
                left: tp.shape().to_vec(),
                right: vec![y.len()],
            });
        }
        let mut loss = 0.0;
        for (&pv, &yv) in tp.data().iter().zip(y) {
            let q = pv.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= yv * q.ln();
            if binary {
                loss -= (1.0 - yv) * (1.0 - q).ln();
            }
        }
        let needs = self.needs(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                y: y.to_vec(),
                binary,
            },
            needs,
        ))
    }

    /// Mean over rows of `-log probs[i, labels[i]]`, clamped below at `PROB_EPS`.
    pub fn nll(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let cols = t.cols();
        if t.rows() != labels.len() || labels.iter().any(|&l| l >= cols) {
            return Err(Error::Shape {
                op: "nll",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            loss -= t.data()[i * cols + l].max(PROB_EPS).ln();
        }
        loss /= labels.len() as f64;
        let needs = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    /// Sum of scalar nodes, in the given order.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut total = 0.0;
        for &p in parts {
            let t = self.value(p);
            if t.numel() != 1 {
                return Err(shape_err("sum", t, t));
            }
            total += t.data()[0];
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::scalar(total), Op::Sum(parts.to_vec()), needs))
    }

    /// `Σ w_i x_i` over all entries of `x`.
    pub fn dot_const(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != w.len() {
            return Err(Error::Shape {
                op: "dot_const",
                left: t.shape().to_vec(),
                right: vec![w.len()],
            });
        }
        let v: f64 = t.data().iter().zip(w).map(|(a, b)| a * b).sum();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Dot {
                x,
                w: w.to_vec(),
            },
            needs,
        ))
    }

    /// Parameter slots referenced by this tape, with their nodes.
    pub fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Constant | Op::Watched | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(*a) {
                    gemm_a_bt_acc(g, tb.data(), accumulate(grads, *a, m * k), m, n, k);
                }
                if self.needs(*b) {
                    gemm_at_b_acc(ta.data(), g, accumulate(grads, *b, k * n), m, k, n);
                }
            }
            Op::Affine { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k, n) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
                if self.needs(*x) {
                    gemm_a_bt_acc(g, tw.data(), accumulate(grads, *x, m * k), m, n, k);
                }
                if self.needs(*w) {
                    gemm_at_b_acc(tx.data(), g, accumulate(grads, *w, k * n), m, k, n);
                }
                if self.needs(*b) {
                    let gb = accumulate(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        let ga = accumulate(grads, v, g.len());
                        for (o, x) in ga.iter_mut().zip(g) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    for (o, x) in ga.iter_mut().zip(g) {
                        *o += x * s;
                    }
                }
            }
            Op::Act(a, kind) => {
                if !self.needs(*a) {
                    return;
                }
                let input = self.value(*a).data();
                let last = *node.value.shape().last().unwrap_or(&1);
                let ga = accumulate(grads, *a, g.len());
                match kind {
                    Activation::Relu => {
                        for ((o, &x), &gv) in ga.iter_mut().zip(input).zip(g) {
                            if x > 0.0 {
                                *o += gv;
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for ((o, &y), &gv) in ga.iter_mut().zip(out).zip(g) {
                            *o += gv * y * (1.0 - y);
                        }
                    }
                    Activation::Tanh => {
                        for ((o, &y), &gv) in ga.iter_mut().zip(out).zip(g) {
                            *o += gv * (1.0 - y * y);
                        }
                    }
                    Activation::Softmax => {
                        for ((orow, yrow), grow) in ga
                            .chunks_exact_mut(last)
                            .zip(out.chunks_exact(last))
                            .zip(g.chunks_exact(last))
                        {
                            let dot: f64 = yrow.iter().zip(grow).map(|(y, gv)| y * gv).sum();
                            for ((o, &y), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                                *o += y * (gv - dot);
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, k } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (len, cin) = (tx.shape()[0], tx.shape()[1]);
                let cout = tw.shape()[0];
                let k = *k;
                let pad = (k - 1) / 2;
                if self.needs(*x) {
                    let taps = conv_taps(tw.data(), cout, cin, k);
                    let gx = accumulate(grads, *x, len * cin);
                    for l in 0..len {
                        for (j, tap) in taps.iter().enumerate() {
                            let src = l + j;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let s = src - pad;
                            gemm_a_bt_acc(
                                &g[l * cout..(l + 1) * cout],
                                tap,
                                &mut gx[s * cin..(s + 1) * cin],
                                1,
                                cout,
                                cin,
                            );
                        }
                    }
                }
                if self.needs(*w) {
                    let gw = accumulate(grads, *w, cout * cin * k);
                    for l in 0..len {
                        for j in 0..k {
                            let src = l + j;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let s = src - pad;
                            let xs = &tx.data()[s * cin..(s + 1) * cin];
                            for o in 0..cout {
                                let go = g[l * cout + o];
                                for (c, &xv) in xs.iter().enumerate() {
                                    gw[(o * cin + c) * k + j] += go * xv;
                                }
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = accumulate(grads, *b, cout);
                    for row in g.chunks_exact(cout) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Spmm { at, x } => {
                if self.needs(*x) {
                    let cols = node.value.cols();
                    at.apply_blocks_acc(g, accumulate(grads, *x, g.len()), cols);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let gp = accumulate(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (o, v) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SwapMiddle { x, dims } => {
                if !self.needs(*x) {
                    return;
                }
                let [a, b, c, d] = *dims;
                let gx = accumulate(grads, *x, g.len());
                for i in 0..a {
                    for p in 0..b {
                        for q in 0..c {
                            let s = ((i * b + p) * c + q) * d;
                            let o = ((i * c + q) * b + p) * d;
                            for (dst, v) in gx[s..s + d].iter_mut().zip(&g[o..o + d]) {
                                *dst += v;
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let gx = accumulate(grads, *x, g.len());
                    for (o, v) in gx.iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::Lstm {
                state,
                x,
                w,
                b,
                cache,
            } => self.backprop_lstm(*state, *x, *w, *b, cache, g, grads),
            Op::StackRows { parts, row } => {
                let cols = node.value.cols();
                for (idx, &p) in parts.iter().enumerate() {
                    if self.needs(p) {
                        let n = self.value(p).numel();
                        let gp = accumulate(grads, p, n);
                        let dst = &mut gp[row * cols..(row + 1) * cols];
                        for (o, v) in dst.iter_mut().zip(&g[idx * cols..(idx + 1) * cols]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SelectRow(x, r) => {
                if self.needs(*x) {
                    let t = self.value(*x);
                    let cols = t.cols();
                    let gx = accumulate(grads, *x, t.numel());
                    for (o, v) in gx[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::SelectCol(x, c) => {
                if self.needs(*x) {
                    let t = self.value(*x);
                    let cols = t.cols();
                    let gx = accumulate(grads, *x, t.numel());
                    for (r, v) in g.iter().enumerate() {
                        gx[r * cols + c] += v;
                    }
                }
            }
            Op::TopKMean { x, picks } => {
                if self.needs(*x) {
                    let t = self.value(*x);
                    let cols = t.cols();
                    let gx = accumulate(grads, *x, t.numel());
                    for (c, sel) in picks.iter().enumerate() {
                        let share = g[c] / sel.len() as f64;
                        for &r in sel {
                            gx[r * cols + c] += share;
                        }
                    }
                }
            }
            Op::Bce { p, y, binary } => {
                if self.needs(*p) {
                    let tp = self.value(*p);
                    let gp = accumulate(grads, *p, tp.numel());
                    for ((o, &pv), &yv) in gp.iter_mut().zip(tp.data()).zip(y) {
                        if pv <= PROB_EPS || pv >= 1.0 - PROB_EPS {
                            continue;
                        }
                        let mut d = -yv / pv;
                        if *binary {
                            d += (1.0 - yv) / (1.0 - pv);
                        }
                        *o += g[0] * d;
                    }
                }
            }
            Op::Nll { probs, labels } => {
                if self.needs(*probs) {
                    let t = self.value(*probs);
                    let cols = t.cols();
                    let scale = g[0] / labels.len() as f64;
                    let gx = accumulate(grads, *probs, t.numel());
                    for (i, &l) in labels.iter().enumerate() {
                        let pv = t.data()[i * cols + l];
                        if pv > PROB_EPS {
                            gx[i * cols + l] -= scale / pv;
                        }
                    }
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    if self.needs(p) {
                        accumulate(grads, p, 1)[0] += g[0];
                    }
                }
            }
            Op::Dot { x, w } => {
                if self.needs(*x) {
                    let gx = accumulate(grads, *x, w.len());
                    for (o, wv) in gx.iter_mut().zip(w) {
                        *o += g[0] * wv;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_lstm(
        &self,
        state: Option<Var>,
        x: Var,
        w: Var,
        b: Var,
        cache: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let tw = self.value(w);
        let hidden = tw.shape()[1] / 4;
        let cin = self.value(x).numel();
        let zeros = vec![0.0; 2 * hidden];
        let prev = state.map_or(&zeros[..], |s| self.value(s).data());
        let (h_prev, c_prev) = prev.split_at(hidden);
        let (gh, gc) = g.split_at(hidden);

        let mut dz = vec![0.0; 4 * hidden];
        let mut dc_prev = vec![0.0; hidden];
        for u in 0..hidden {
            let (ig, fg, gg, og, tc) = (
                cache[u],
                cache[hidden + u],
                cache[2 * hidden + u],
                cache[3 * hidden + u],
                cache[4 * hidden + u],
            );
            let dc = gc[u] + gh[u] * og * (1.0 - tc * tc);
            dz[u] = dc * gg * ig * (1.0 - ig);
            dz[hidden + u] = dc * c_prev[u] * fg * (1.0 - fg);
            dz[2 * hidden + u] = dc * ig * (1.0 - gg * gg);
            dz[3 * hidden + u] = gh[u] * tc * og * (1.0 - og);
            dc_prev[u] = dc * fg;
        }

        if self.needs(w) {
            let mut input = Vec::with_capacity(cin + hidden);
            input.extend_from_slice(self.value(x).data());
            input.extend_from_slice(h_prev);
            let gw = accumulate(grads, w, tw.numel());
            gemm_at_b_acc(&input, &dz, gw, 1, cin + hidden, 4 * hidden);
        }
        if self.needs(b) {
            let gb = accumulate(grads, b, 4 * hidden);
            for (o, v) in gb.iter_mut().zip(&dz) {
                *o += v;
            }
        }
        let need_x = self.needs(x);
        let need_state = state.is_some_and(|s| self.needs(s));
        if need_x || need_state {
            let mut dinput = vec![0.0; cin + hidden];
            gemm_a_bt_acc(&dz, tw.data(), &mut dinput, 1, 4 * hidden, cin + hidden);
            if need_x {
                let gx = accumulate(grads, x, cin);
                for (o, v) in gx.iter_mut().zip(&dinput[..cin]) {
                    *o += v;
                }
            }
            if let (true, Some(s)) = (need_state, state) {
                let gs = accumulate(grads, s, 2 * hidden);
                for (o, v) in gs[..hidden].iter_mut().zip(&dinput[cin..]) {
                    *o += v;
                }
                for (o, v) in gs[hidden..].iter_mut().zip(&dc_prev) {
                    *o += v;
                }
            }
        }
    }
}

/// Rearranges `w[o][c][j]` into one `[C_in, C_out]` matrix per tap `j`.
fn conv_taps(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            let mut tap = vec![0.0; cin * cout];
            for o in 0..cout {
                for c in 0..cin {
                    tap[c * cout + o] = w[(o * cin + c) * k + j];
                }
            }
            tap
        })
        .collect()
}

/// Indices of the `k` largest values, ties broken toward the lower index.
pub fn top_k_indices(values: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = values.enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx.into_iter().map(|(i, _)| i).collect()
}

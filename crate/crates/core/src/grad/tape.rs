//! Operation tape for reverse-mode differentiation over dense arrays.
//!
//! Every operation on a [`Var`] appends a node holding its value and the
//! indices of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints into the parameter leaves. Gradients persist across
//! backward calls until [`Tape::zero_grad`].

use std::cell::{Ref, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Abs(usize),
    Sqrt(usize),
    Exp(usize),
    Powi(usize, i32),
    Recip(usize),
    Sum(usize),
    Mean(usize),
    Slice {
        src: usize,
        rows: (usize, usize),
        cols: (usize, usize),
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Gather(usize, Rc<[usize]>),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    param: bool,
    grad: Option<Vec<f64>>,
}

/// Records operations; owns every intermediate value until dropped.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A leaf that requires a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: param,
            param,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            tracked,
            param: false,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Like [`Tape::grad`] but returns zeros for untouched parameters.
    pub fn grad_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.grad(var)
            .unwrap_or_else(|| Tensor::zeros(var.shape().as_slice()))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Propagates d(loss)/d(param) into every reachable parameter leaf,
    /// adding to whatever gradient is already stored there.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let leaf_updates = {
            let nodes = self.nodes.borrow();
            if nodes[loss.id].value.len() != 1 {
                return Err(Error::Shape(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    nodes[loss.id].value.shape()
                )));
            }
            let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
            adj[loss.id] = Some(vec![1.0]);
            let mut leaf_updates = Vec::new();
            for id in (0..=loss.id).rev() {
                let Some(g) = adj[id].take() else { continue };
                let node = &nodes[id];
                if !node.tracked {
                    continue;
                }
                if node.param {
                    leaf_updates.push((id, g));
                    continue;
                }
                propagate(&nodes, id, &g, &mut adj);
            }
            leaf_updates
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_updates {
            let node = &mut nodes[id];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn values(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    fn unary(&self, a: usize, f: impl Fn(f64) -> f64, op: Op) -> Var<'_> {
        let (value, tracked) = {
            let nodes = self.values();
            (nodes[a].value.map(f), nodes[a].tracked)
        };
        self.push(value, op, tracked)
    }

    fn binary(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Var<'_> {
        let (value, tracked) = {
            let nodes = self.values();
            let (x, y) = (&nodes[a].value, &nodes[b].value);
            assert_eq!(
                x.shape(),
                y.shape(),
                "{name}: shape {:?} vs {:?}",
                x.shape(),
                y.shape()
            );
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            (
                Tensor::new(x.shape().to_vec(), data).expect("same shape"),
                nodes[a].tracked || nodes[b].tracked,
            )
        };
        self.push(value, op, tracked)
    }
}

fn accumulate<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].tracked {
        return None;
    }
    let n = nodes[id].value.len();
    Some(adj[id].get_or_insert_with(|| vec![0.0; n]))
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b].iter() {
                if let Some(acc) = accumulate(adj, nodes, *p) {
                    acc.iter_mut().zip(g).for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(acc) = accumulate(adj, nodes, *a) {
                acc.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            if let Some(acc) = accumulate(adj, nodes, *b) {
                acc.iter_mut().zip(g).for_each(|(s, d)| *s -= d);
            }
        }
        Op::Mul(a, b) => {
            let (xa, xb) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(acc) = accumulate(adj, nodes, *a) {
                for i in 0..g.len() {
                    acc[i] += g[i] * xb[i];
                }
            }
            if let Some(acc) = accumulate(adj, nodes, *b) {
                for i in 0..g.len() {
                    acc[i] += g[i] * xa[i];
                }
            }
        }
        Op::Div(a, b) => {
            let (xa, xb) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(acc) = accumulate(adj, nodes, *a) {
                for i in 0..g.len() {
                    acc[i] += g[i] / xb[i];
                }
            }
            if let Some(acc) = accumulate(adj, nodes, *b) {
                for i in 0..g.len() {
                    acc[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
                }
            }
        }
        Op::AddRow(m, row) => {
            if let Some(acc) = accumulate(adj, nodes, *m) {
                acc.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            let cols = nodes[*row].value.len();
            if let Some(acc) = accumulate(adj, nodes, *row) {
                for chunk in g.chunks_exact(cols) {
                    acc.iter_mut().zip(chunk).for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(acc) = accumulate(adj, nodes, *a) {
                acc.iter_mut().zip(g).for_each(|(s, d)| *s += c * d);
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            if let Some(acc) = accumulate(adj, nodes, *a) {
                acc.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
        }
        Op::MatMul(a, b) => {
            // C[m,n] = A[m,k] B[k,n]
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if let Some(acc) = accumulate(adj, nodes, *a) {
                // dA = dC B^T
                gemm(m, n, k, g, (n, 1), tb.data(), (1, n), acc);
            }
            if let Some(acc) = accumulate(adj, nodes, *b) {
                // dB = A^T dC
                gemm(k, m, n, ta.data(), (1, k), g, (n, 1), acc);
            }
        }
        Op::MatMulT(a, b) => {
            // C[m,n] = A[m,k] B[n,k]^T
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
            if let Some(acc) = accumulate(adj, nodes, *a) {
                // dA = dC B
                gemm(m, n, k, g, (n, 1), tb.data(), (k, 1), acc);
            }
            if let Some(acc) = accumulate(adj, nodes, *b) {
                // dB = dC^T A
                gemm(n, m, k, g, (1, n), ta.data(), (k, 1), acc);
            }
        }
        Op::Tanh(a) => elementwise(adj, nodes, *a, g, |i| 1.0 - y[i] * y[i]),
        Op::Sigmoid(a) => elementwise(adj, nodes, *a, g, |i| y[i] * (1.0 - y[i])),
        Op::Relu(a) => {
            let x = nodes[*a].value.data();
            elementwise(adj, nodes, *a, g, |i| if x[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Abs(a) => {
            let x = nodes[*a].value.data();
            elementwise(adj, nodes, *a, g, |i| {
                if x[i] > 0.0 {
                    1.0
                } else if x[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        }
        // zero slope at the origin, where the derivative is unbounded
        Op::Sqrt(a) => elementwise(adj, nodes, *a, g, |i| if y[i] > 0.0 { 0.5 / y[i] } else { 0.0 }),
        Op::Exp(a) => elementwise(adj, nodes, *a, g, |i| y[i]),
        Op::Powi(a, n) => {
            let x = nodes[*a].value.data();
            let n = *n;
            elementwise(adj, nodes, *a, g, |i| n as f64 * x[i].powi(n - 1))
        }
        Op::Recip(a) => elementwise(adj, nodes, *a, g, |i| -y[i] * y[i]),
        Op::Sum(a) => {
            if let Some(acc) = accumulate(adj, nodes, *a) {
                acc.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(acc) = accumulate(adj, nodes, *a) {
                let scale = g[0] / acc.len() as f64;
                acc.iter_mut().for_each(|s| *s += scale);
            }
        }
        Op::Slice { src, rows, cols } => {
            let src_cols = nodes[*src].value.cols();
            let width = cols.1 - cols.0;
            if let Some(acc) = accumulate(adj, nodes, *src) {
                for (r, chunk) in (rows.0..rows.1).zip(g.chunks_exact(width)) {
                    let start = r * src_cols + cols.0;
                    acc[start..start + width]
                        .iter_mut()
                        .zip(chunk)
                        .for_each(|(s, d)| *s += d);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let width = nodes[p].value.cols();
                if let Some(acc) = accumulate(adj, nodes, p) {
                    for (r, dst) in acc.chunks_exact_mut(width).enumerate() {
                        let src = &g[r * total + offset..r * total + offset + width];
                        dst.iter_mut().zip(src).for_each(|(s, d)| *s += d);
                    }
                }
                offset += width;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                if let Some(acc) = accumulate(adj, nodes, p) {
                    acc.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(s, d)| *s += d);
                }
                offset += n;
            }
        }
        Op::Gather(a, idx) => {
            if let Some(acc) = accumulate(adj, nodes, *a) {
                for (k, &i) in idx.iter().enumerate() {
                    acc[i] += g[k];
                }
            }
        }
    }
}

fn elementwise(
    adj: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    a: usize,
    g: &[f64],
    deriv: impl Fn(usize) -> f64,
) {
    if let Some(acc) = accumulate(adj, nodes, a) {
        for i in 0..g.len() {
            acc[i] += g[i] * deriv(i);
        }
    }
}

/// `c[m,n] += a[m,k] * b[k,n]` with arbitrary (row, col) strides on `a` and `b`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    assert_eq!(c.len(), m * n);
    // SAFETY: the assertions above guarantee the slices cover every element
    // addressed by the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.values()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.values()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        self.tape.values()[self.id].value.item()
    }

    pub fn rows(&self) -> usize {
        self.tape.values()[self.id].value.rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.values()[self.id].value.cols()
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn scale(self, c: f64) -> Self {
        self.tape.unary(self.id, |x| c * x, Op::Scale(self.id, c))
    }

    pub fn offset(self, c: f64) -> Self {
        self.tape.unary(self.id, |x| x + c, Op::Offset(self.id))
    }

    pub fn tanh(self) -> Self {
        self.tape.unary(self.id, f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Self {
        self.tape.unary(self.id, sigmoid, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Self {
        self.tape.unary(self.id, |x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn abs(self) -> Self {
        self.tape.unary(self.id, f64::abs, Op::Abs(self.id))
    }

    pub fn sqrt(self) -> Self {
        self.tape.unary(self.id, f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn exp(self) -> Self {
        self.tape.unary(self.id, f64::exp, Op::Exp(self.id))
    }

    pub fn powi(self, n: i32) -> Self {
        self.tape.unary(self.id, |x| x.powi(n), Op::Powi(self.id, n))
    }

    pub fn recip(self) -> Self {
        self.tape.unary(self.id, f64::recip, Op::Recip(self.id))
    }

    pub fn square(self) -> Self {
        self.powi(2)
    }

    pub fn sum(self) -> Self {
        let (value, tracked) = {
            let nodes = self.tape.values();
            let v = &nodes[self.id].value;
            (Tensor::scalar(v.data().iter().sum()), nodes[self.id].tracked)
        };
        self.tape.push(value, Op::Sum(self.id), tracked)
    }

    /// Mean over all elements. Panics on an empty tensor.
    pub fn mean(self) -> Self {
        let (value, tracked) = {
            let nodes = self.tape.values();
            let v = &nodes[self.id].value;
            assert!(!v.is_empty(), "mean of empty tensor");
            (
                Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64),
                nodes[self.id].tracked,
            )
        };
        self.tape.push(value, Op::Mean(self.id), tracked)
    }

    /// `self[m, n] + row[n]` broadcast over rows.
    pub fn add_row(self, row: Var<'t>) -> Self {
        self.same_tape(&row);
        let (value, tracked) = {
            let nodes = self.tape.values();
            let (m, r) = (&nodes[self.id].value, &nodes[row.id].value);
            let cols = m.cols();
            assert_eq!(r.len(), cols, "add_row: row of {} vs {} columns", r.len(), cols);
            let mut data = m.data().to_vec();
            for chunk in data.chunks_exact_mut(cols) {
                chunk.iter_mut().zip(r.data()).for_each(|(a, b)| *a += b);
            }
            (
                Tensor::new(m.shape().to_vec(), data).expect("shape"),
                nodes[self.id].tracked || nodes[row.id].tracked,
            )
        };
        self.tape.push(value, Op::AddRow(self.id, row.id), tracked)
    }

    /// Matrix product `self[m,k] * rhs[k,n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Self {
        self.same_tape(&rhs);
        let (value, tracked) = {
            let nodes = self.tape.values();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            assert!(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 operands");
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            assert_eq!(k, b.rows(), "matmul: {:?} x {:?}", a.shape(), b.shape());
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out);
            (
                Tensor::matrix(m, n, out),
                nodes[self.id].tracked || nodes[rhs.id].tracked,
            )
        };
        self.tape.push(value, Op::MatMul(self.id, rhs.id), tracked)
    }

    /// Matrix product with the transpose of `rhs`: `self[m,k] * rhs[n,k]^T`.
    pub fn matmul_t(self, rhs: Var<'t>) -> Self {
        self.same_tape(&rhs);
        let (value, tracked) = {
            let nodes = self.tape.values();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            assert!(a.rank() == 2 && b.rank() == 2, "matmul_t needs rank-2 operands");
            let (m, k, n) = (a.rows(), a.cols(), b.rows());
            assert_eq!(k, b.cols(), "matmul_t: {:?} x {:?}^T", a.shape(), b.shape());
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), (k, 1), b.data(), (1, k), &mut out);
            (
                Tensor::matrix(m, n, out),
                nodes[self.id].tracked || nodes[rhs.id].tracked,
            )
        };
        self.tape.push(value, Op::MatMulT(self.id, rhs.id), tracked)
    }

    /// Rectangular block `[r0, r1) x [c0, c1)` of a rank-2 value (rank 1 is one row).
    pub fn slice(self, rows: (usize, usize), cols: (usize, usize)) -> Self {
        let (value, tracked) = {
            let nodes = self.tape.values();
            let src = &nodes[self.id].value;
            assert!(
                rows.0 <= rows.1 && rows.1 <= src.rows() && cols.0 <= cols.1 && cols.1 <= src.cols(),
                "slice {rows:?}x{cols:?} out of {:?}",
                src.shape()
            );
            let src_cols = src.cols();
            let width = cols.1 - cols.0;
            let mut data = Vec::with_capacity((rows.1 - rows.0) * width);
            for r in rows.0..rows.1 {
                data.extend_from_slice(&src.data()[r * src_cols + cols.0..r * src_cols + cols.1]);
            }
            (Tensor::matrix(rows.1 - rows.0, width, data), nodes[self.id].tracked)
        };
        self.tape.push(
            value,
            Op::Slice {
                src: self.id,
                rows,
                cols,
            },
            tracked,
        )
    }

    pub fn slice_rows(self, r0: usize, r1: usize) -> Self {
        let cols = self.cols();
        self.slice((r0, r1), (0, cols))
    }

    pub fn slice_cols(self, c0: usize, c1: usize) -> Self {
        let rows = self.rows();
        self.slice((0, rows), (c0, c1))
    }

    /// Elements at the given flat (row-major) indices, as a 1-D value.
    pub fn gather(self, indices: Rc<[usize]>) -> Self {
        let (value, tracked) = {
            let nodes = self.tape.values();
            let src = nodes[self.id].value.data();
            let data = indices
                .iter()
                .map(|&i| {
                    assert!(i < src.len(), "gather index {i} out of {}", src.len());
                    src[i]
                })
                .collect();
            (Tensor::vector(data), nodes[self.id].tracked)
        };
        self.tape.push(value, Op::Gather(self.id, indices), tracked)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Self {
        let (value, tracked) = {
            let nodes = self.tape.values();
            (
                nodes[self.id]
                    .value
                    .clone()
                    .reshape(shape)
                    .expect("reshape size"),
                nodes[self.id].tracked,
            )
        };
        self.tape.push(value, Op::Reshape(self.id), tracked)
    }
}

/// Horizontal concatenation of rank-2 values with equal row counts.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape;
    let (value, tracked) = {
        let nodes = tape.values();
        let rows = nodes[parts[0].id].value.rows();
        let total: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for p in parts {
            p.same_tape(&parts[0]);
            let v = &nodes[p.id].value;
            assert_eq!(v.rows(), rows, "concat_cols: row count mismatch");
            let w = v.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        (
            Tensor::matrix(rows, total, data),
            parts.iter().any(|p| nodes[p.id].tracked),
        )
    };
    tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), tracked)
}

/// Vertical concatenation of rank-2 values with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape;
    let (value, tracked) = {
        let nodes = tape.values();
        let cols = nodes[parts[0].id].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            p.same_tape(&parts[0]);
            let v = &nodes[p.id].value;
            assert_eq!(v.cols(), cols, "concat_rows: column count mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        (
            Tensor::matrix(rows, cols, data),
            parts.iter().any(|p| nodes[p.id].tracked),
        )
    };
    tape.push(value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), tracked)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a + b, Op::Add(self.id, rhs.id), "add")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a - b, Op::Sub(self.id, rhs.id), "sub")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a * b, Op::Mul(self.id, rhs.id), "mul")
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a / b, Op::Div(self.id, rhs.id), "div")
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.offset(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.offset(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.scale(1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.offset(self)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.scale(-1.0).offset(self)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.scale(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x * x;
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(5.0));
        let loss = (x * 0.0).sum() + c;
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = x.tanh();
        assert!(matches!(tape.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_twice_doubles_and_zero_grad_resets() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![0.3, -1.2, 2.0]));
        let loss = (x.sigmoid() * x).sum();
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn constants_and_untracked_branches_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.param(Tensor::scalar(1.5));
        tape.backward((c * x).sum()).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 2.0);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn matmul_values() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let b = tape.constant(Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]));
        assert_eq!(a.matmul(b).value().data(), &[58., 64., 139., 154.]);
        let bt = tape.constant(Tensor::matrix(2, 3, vec![7., 9., 11., 8., 10., 12.]));
        assert_eq!(a.matmul_t(bt).value().data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn slice_concat_gather_values() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        assert_eq!(a.slice((0, 2), (1, 3)).value().data(), &[2., 3., 5., 6.]);
        let c = concat_cols(&[a.slice_cols(2, 3), a.slice_cols(0, 1)]);
        assert_eq!(c.value().data(), &[3., 1., 6., 4.]);
        let r = concat_rows(&[a.slice_rows(1, 2), a.slice_rows(0, 1)]);
        assert_eq!(r.value().data(), &[4., 5., 6., 1., 2., 3.]);
        assert_eq!(a.gather(Rc::from(vec![5, 0])).value().data(), &[6., 1.]);
    }
}

//! Minimal reverse-mode automatic differentiation over f64 tensors.
//!
//! A [`Graph`] is a dynamic tape rebuilt for every forward pass. Operations
//! are methods on the graph; they compute values eagerly and record a node
//! when any input requires gradient. [`Graph::backward`] walks the tape in
//! reverse and accumulates adjoints into every `requires_grad` tensor that
//! is reachable from the loss.
//!
//! There is no broadcasting except scalar-with-tensor; any other shape
//! mixing is a [`TensorError::ShapeMismatch`]. A graph and its tensors are
//! confined to one thread; distinct graphs may run on distinct threads.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static GRAPH_IDS: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, PartialEq, Eq)]
struct NodeRef {
    graph: u64,
    index: usize,
}

struct TensorInner {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    node: Option<NodeRef>,
}

/// Shared handle to a multi-dimensional f64 array. Cloning is cheap and
/// aliases the same storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            inner.shape, inner.requires_grad
        )
    }
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                values,
                grad: None,
                requires_grad,
                node: None,
            })),
        }
    }

    /// Constant leaf tensor (no gradient).
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != values.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Contract(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(Tensor::from_parts(shape.to_vec(), values, false))
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, values)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_parts(vec![1], vec![v], false)
    }

    /// 1 x n row vector.
    pub fn row(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::from_parts(vec![1, n], values, false)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the current values.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Read access without copying.
    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    /// In-place update of a leaf's values (optimizer steps, tests).
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().values);
    }

    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.values.len(), values.len(), "set_values length mismatch");
        inner.values.copy_from_slice(values);
    }

    /// Scalar payload of a 1-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.values.len(), 1, "item() on non-scalar tensor");
        inner.values[0]
    }

    /// Accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Constant copy of this tensor's values, severed from any graph.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_parts(inner.shape.clone(), inner.values.clone(), false)
    }

    fn accumulate_grad(&self, delta: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.values.len();
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar(f64),
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Softmax,
    Sum,
    Select(usize),
    Reshape,
    Concat { axis: usize, sizes: Vec<usize> },
    Narrow { axis: usize, start: usize },
}

struct Node {
    op: Op,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// Append-only computation tape. Nodes are recorded in topological order;
/// one backward pass visits each recorded node exactly once, in reverse.
pub struct Graph {
    id: u64,
    recording: bool,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            id: GRAPH_IDS.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Graph that never records nodes; forward values only.
    pub fn inference() -> Graph {
        Graph {
            recording: false,
            ..Graph::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_home(&self, op: &'static str, t: &Tensor) -> Result<()> {
        if let Some(node) = t.inner.borrow().node {
            if node.graph != self.id {
                return Err(TensorError::Contract(format!(
                    "{op}: tensor belongs to another graph"
                )));
            }
        }
        Ok(())
    }

    fn push(&self, op: Op, inputs: Vec<Tensor>, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let requires = self.recording && inputs.iter().any(|t| t.requires_grad());
        let out = Tensor::from_parts(shape, values, requires);
        if requires {
            let mut nodes = self.nodes.borrow_mut();
            out.inner.borrow_mut().node = Some(NodeRef {
                graph: self.id,
                index: nodes.len(),
            });
            nodes.push(Node {
                op,
                inputs,
                output: out.clone(),
            });
        }
        out
    }

    fn binary_checked(
        &self,
        op_name: &'static str,
        a: &Tensor,
        b: &Tensor,
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        self.check_home(op_name, a)?;
        self.check_home(op_name, b)?;
        let (sa, sb) = (a.shape(), b.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok((sa, a.values(), b.values()))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, va, vb) = self.binary_checked("add", a, b)?;
        let out = va.iter().zip(&vb).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add, vec![a.clone(), b.clone()], shape, out))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, va, vb) = self.binary_checked("sub", a, b)?;
        let out = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
        Ok(self.push(Op::Sub, vec![a.clone(), b.clone()], shape, out))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, va, vb) = self.binary_checked("mul", a, b)?;
        let out = va.iter().zip(&vb).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul, vec![a.clone(), b.clone()], shape, out))
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.check_home("add_scalar", a)?;
        let out = a.values().iter().map(|x| x + c).collect();
        Ok(self.push(Op::AddScalar, vec![a.clone()], a.shape(), out))
    }

    pub fn mul_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.check_home("mul_scalar", a)?;
        let out = a.values().iter().map(|x| x * c).collect();
        Ok(self.push(Op::MulScalar(c), vec![a.clone()], a.shape(), out))
    }

    fn unary(
        &self,
        op_name: &'static str,
        op: Op,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
    ) -> Result<Tensor> {
        self.check_home(op_name, a)?;
        let out = a.values().iter().map(|&x| f(x)).collect();
        Ok(self.push(op, vec![a.clone()], a.shape(), out))
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("neg", Op::Neg, a, |x| -x)
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("tanh", Op::Tanh, a, f64::tanh)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("sigmoid", Op::Sigmoid, a, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("exp", Op::Exp, a, f64::exp)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.check_home("log", a)?;
        if let Some(bad) = a.with_values(|v| v.iter().copied().find(|&x| x <= 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                msg: format!("log of non-positive value {bad}"),
            });
        }
        self.unary("log", Op::Log, a, f64::ln)
    }

    pub fn sqrt(&self, a: &Tensor) -> Result<Tensor> {
        self.check_home("sqrt", a)?;
        if let Some(bad) = a.with_values(|v| v.iter().copied().find(|&x| x < 0.0)) {
            return Err(TensorError::Domain {
                op: "sqrt",
                msg: format!("sqrt of negative value {bad}"),
            });
        }
        self.unary("sqrt", Op::Sqrt, a, f64::sqrt)
    }

    /// Softmax over all entries, computed with max-subtraction.
    pub fn softmax(&self, a: &Tensor) -> Result<Tensor> {
        self.check_home("softmax", a)?;
        let vals = a.values();
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vals.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = exps.iter().map(|e| e / total).collect();
        Ok(self.push(Op::Softmax, vec![a.clone()], a.shape(), out))
    }

    /// Sum of all entries; scalar result.
    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        self.check_home("sum", a)?;
        let s = a.with_values(|v| v.iter().sum());
        Ok(self.push(Op::Sum, vec![a.clone()], vec![1], vec![s]))
    }

    /// Element at flat index; scalar result.
    pub fn select(&self, a: &Tensor, index: usize) -> Result<Tensor> {
        self.check_home("select", a)?;
        if index >= a.numel() {
            return Err(TensorError::Contract(format!(
                "select index {} out of range for {} elements",
                index,
                a.numel()
            )));
        }
        let v = a.with_values(|v| v[index]);
        Ok(self.push(Op::Select(index), vec![a.clone()], vec![1], vec![v]))
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        self.check_home("reshape", a)?;
        let n: usize = shape.iter().product();
        if n != a.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: a.shape(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.push(Op::Reshape, vec![a.clone()], shape.to_vec(), a.values()))
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check_home("matmul", a)?;
        self.check_home("matmul", b)?;
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = a.with_values(|va| b.with_values(|vb| matmul_raw(va, vb, m, k, n)));
        Ok(self.push(Op::MatMul, vec![a.clone(), b.clone()], vec![m, n], out))
    }

    /// Concatenate two tensors along `axis`.
    pub fn concat(&self, a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
        self.concat_many(&[a.clone(), b.clone()], axis)
    }

    /// Concatenate any number of tensors along `axis`.
    pub fn concat_many(&self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat of zero tensors".into()));
        }
        for t in parts {
            self.check_home("concat", t)?;
        }
        let base = parts[0].shape();
        if axis >= base.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                shape: base,
            });
        }
        let mut sizes = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for t in parts {
            let s = t.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s,
                });
            }
            sizes.push(s[axis]);
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut values = vec![0.0; outer * total * inner];
        let mut offset = 0usize;
        for (t, &sz) in parts.iter().zip(&sizes) {
            t.with_values(|v| {
                for o in 0..outer {
                    let src = o * sz * inner;
                    let dst = o * total * inner + offset * inner;
                    values[dst..dst + sz * inner].copy_from_slice(&v[src..src + sz * inner]);
                }
            });
            offset += sz;
        }
        Ok(self.push(Op::Concat { axis, sizes }, parts.to_vec(), shape, values))
    }

    /// Stack 1 x c rows into an n x c matrix.
    pub fn stack_rows(&self, rows: &[Tensor]) -> Result<Tensor> {
        self.concat_many(rows, 0)
    }

    /// Slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_home("narrow", a)?;
        let shape = a.shape();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "narrow",
                axis,
                shape,
            });
        }
        if start + len > shape[axis] || len == 0 {
            return Err(TensorError::Contract(format!(
                "narrow [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut values = vec![0.0; outer * len * inner];
        a.with_values(|v| {
            for o in 0..outer {
                let src = (o * full + start) * inner;
                let dst = o * len * inner;
                values[dst..dst + len * inner].copy_from_slice(&v[src..src + len * inner]);
            }
        });
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Op::Narrow { axis, start }, vec![a.clone()], out_shape, values))
    }

    /// Row `i` of a 2-D tensor as a 1 x cols tensor.
    pub fn take_row(&self, a: &Tensor, i: usize) -> Result<Tensor> {
        self.narrow(a, 0, i, 1)
    }

    /// Propagate dLoss/d(everything reachable) from a scalar loss. Gradients
    /// accumulate into `requires_grad` tensors; repeated calls keep adding.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let root = {
            let inner = loss.inner.borrow();
            if !inner.requires_grad {
                return Err(TensorError::Contract(
                    "backward root does not require grad".into(),
                ));
            }
            inner.node
        };
        let Some(root) = root else {
            // Leaf loss: dLoss/dLoss = 1 and nothing else is reachable.
            loss.accumulate_grad(&[1.0]);
            return Ok(());
        };
        if root.graph != self.id {
            return Err(TensorError::Contract(
                "backward: loss belongs to another graph".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root.index + 1];
        pending[root.index] = Some(vec![1.0]);
        for idx in (0..=root.index).rev() {
            let Some(adj) = pending[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            node.output.accumulate_grad(&adj);
            let input_adjoints = node_backward(node, &adj);
            for (input, delta) in node.inputs.iter().zip(input_adjoints) {
                let Some(delta) = delta else { continue };
                if !input.requires_grad() {
                    continue;
                }
                let input_node = input.inner.borrow().node;
                match input_node {
                    Some(nref) => {
                        debug_assert!(nref.graph == self.id && nref.index < idx);
                        match &mut pending[nref.index] {
                            Some(acc) => {
                                for (a, d) in acc.iter_mut().zip(&delta) {
                                    *a += d;
                                }
                            }
                            slot => *slot = Some(delta),
                        }
                    }
                    None => input.accumulate_grad(&delta),
                }
            }
        }
        Ok(())
    }
}

pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Adjoints for each input of `node` given the output adjoint.
fn node_backward(node: &Node, adj: &[f64]) -> Vec<Option<Vec<f64>>> {
    let out_vals = node.output.inner.borrow();
    match &node.op {
        Op::MatMul => {
            let a = &node.inputs[0];
            let b = &node.inputs[1];
            let (sa, sb) = (a.shape(), b.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            // da = adj . b^T ; db = a^T . adj
            let da = b.with_values(|vb| {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = adj[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * vb[p * n + j];
                        }
                    }
                }
                da
            });
            let db = a.with_values(|va| {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = va[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * adj[i * n + j];
                        }
                    }
                }
                db
            });
            vec![Some(da), Some(db)]
        }
        Op::Add => vec![Some(adj.to_vec()), Some(adj.to_vec())],
        Op::Sub => vec![
            Some(adj.to_vec()),
            Some(adj.iter().map(|g| -g).collect()),
        ],
        Op::Mul => {
            let a = node.inputs[0].values();
            let b = node.inputs[1].values();
            vec![
                Some(adj.iter().zip(&b).map(|(g, y)| g * y).collect()),
                Some(adj.iter().zip(&a).map(|(g, x)| g * x).collect()),
            ]
        }
        Op::AddScalar => vec![Some(adj.to_vec())],
        Op::MulScalar(c) => vec![Some(adj.iter().map(|g| g * c).collect())],
        Op::Neg => vec![Some(adj.iter().map(|g| -g).collect())],
        Op::Tanh => {
            let y = &out_vals.values;
            vec![Some(
                adj.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            )]
        }
        Op::Sigmoid => {
            let y = &out_vals.values;
            vec![Some(
                adj.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )]
        }
        Op::Exp => {
            let y = &out_vals.values;
            vec![Some(adj.iter().zip(y).map(|(g, y)| g * y).collect())]
        }
        Op::Log => {
            let x = node.inputs[0].values();
            vec![Some(adj.iter().zip(&x).map(|(g, x)| g / x).collect())]
        }
        Op::Sqrt => {
            let y = &out_vals.values;
            // Subgradient 0 at exactly zero (norm-at-origin case).
            vec![Some(
                adj.iter()
                    .zip(y)
                    .map(|(g, y)| if *y > 0.0 { 0.5 * g / y } else { 0.0 })
                    .collect(),
            )]
        }
        Op::Softmax => {
            let y = &out_vals.values;
            let dot: f64 = adj.iter().zip(y).map(|(g, y)| g * y).sum();
            vec![Some(
                adj.iter().zip(y).map(|(g, y)| y * (g - dot)).collect(),
            )]
        }
        Op::Sum => {
            let n = node.inputs[0].numel();
            vec![Some(vec![adj[0]; n])]
        }
        Op::Select(i) => {
            let mut d = vec![0.0; node.inputs[0].numel()];
            d[*i] = adj[0];
            vec![Some(d)]
        }
        Op::Reshape => vec![Some(adj.to_vec())],
        Op::Concat { axis, sizes } => {
            let shape = &out_vals.shape;
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0usize;
            let mut grads = Vec::with_capacity(sizes.len());
            for &sz in sizes {
                let mut d = vec![0.0; outer * sz * inner];
                for o in 0..outer {
                    let src = o * total * inner + offset * inner;
                    let dst = o * sz * inner;
                    d[dst..dst + sz * inner].copy_from_slice(&adj[src..src + sz * inner]);
                }
                offset += sz;
                grads.push(Some(d));
            }
            grads
        }
        Op::Narrow { axis, start } => {
            let in_shape = node.inputs[0].shape();
            let outer: usize = in_shape[..*axis].iter().product();
            let inner: usize = in_shape[*axis + 1..].iter().product();
            let full = in_shape[*axis];
            let len = out_vals.shape[*axis];
            let mut d = vec![0.0; node.inputs[0].numel()];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                let src = o * len * inner;
                d[dst..dst + len * inner].copy_from_slice(&adj[src..src + len * inner]);
            }
            vec![Some(d)]
        }
    }
}

// Suppress an unused warning for same_storage in release profiles; it backs
// debug assertions in the optimizer.
impl Tensor {
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        self.same_storage(other)
    }
}

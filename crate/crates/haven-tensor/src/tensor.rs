use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::kernels;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// True when ops record backward nodes on this thread.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with graph recording disabled; inference-only forward passes
/// (targets, evaluation rollouts) go through here.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    Elu(Tensor),
    Tanh(Tensor),
    Sigmoid(Tensor),
    Abs(Tensor),
    SumAxis(Tensor, usize),
    MeanAxis(Tensor, usize),
    SumAll(Tensor),
    MeanAll(Tensor),
    Concat(Vec<Tensor>),
    GatherLast(Tensor, Vec<usize>),
    SliceLast(Tensor, usize, usize),
    Reshape(Tensor),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Elu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Abs(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::GatherLast(a, _)
            | Op::SliceLast(a, _, _)
            | Op::Reshape(a) => vec![a],
            Op::Concat(parts) => parts.iter().collect(),
        }
    }
}

struct Inner {
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Op,
}

/// Dense row-major f64 array with optional gradient tracking.
///
/// Cloning a `Tensor` is cheap (shared handle). Leaf tensors created with
/// [`Tensor::param`] accumulate gradients across [`Tensor::backward`] calls
/// until [`Tensor::zero_grad`] resets them.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new(values: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Tensor {
        assert_eq!(
            values.len(),
            numel(&shape),
            "tensor values length {} does not match shape {:?}",
            values.len(),
            shape
        );
        Tensor {
            inner: Rc::new(Inner {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(values: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::new(values, shape.to_vec(), false, Op::Leaf)
    }

    /// Trainable leaf parameter.
    pub fn param(values: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::new(values, shape.to_vec(), true, Op::Leaf)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![0.0; numel(shape)], shape)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[1])
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.inner.values.borrow();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.inner.shape);
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Whether this tensor participates in the backward graph.
    pub fn tracks_grad(&self) -> bool {
        self.inner.requires_grad || !matches!(self.inner.op, Op::Leaf)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn add_to_grad(&self, delta: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Overwrites the values of a leaf tensor (optimizer steps, target
    /// network refresh). Shape must be preserved.
    pub fn set_values(&self, new: &[f64]) {
        assert!(
            matches!(self.inner.op, Op::Leaf),
            "set_values on non-leaf tensor"
        );
        let mut v = self.inner.values.borrow_mut();
        assert_eq!(v.len(), new.len(), "set_values length mismatch");
        v.copy_from_slice(new);
    }

    /// Constant copy sharing no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.to_vec(), &self.inner.shape)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn make(&self, values: Vec<f64>, shape: Vec<usize>, op: Op, tracked: bool) -> Tensor {
        if tracked && grad_enabled() {
            Tensor::new(values, shape, false, op)
        } else {
            Tensor::new(values, shape, false, Op::Leaf)
        }
    }

    // ---- forward ops ------------------------------------------------

    /// 2-D matrix product, or batched 3-D product when both operands are
    /// rank 3 with equal leading dimension.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let (ls, rs) = (self.shape(), rhs.shape());
        let (batch, m, k, n) = match (ls.len(), rs.len()) {
            (2, 2) => {
                assert_eq!(
                    ls[1], rs[0],
                    "matmul inner dims differ: {:?} x {:?}",
                    ls, rs
                );
                (1, ls[0], ls[1], rs[1])
            }
            (3, 3) => {
                assert!(
                    ls[0] == rs[0] && ls[2] == rs[1],
                    "batched matmul shapes differ: {:?} x {:?}",
                    ls,
                    rs
                );
                (ls[0], ls[1], ls[2], rs[2])
            }
            _ => panic!("matmul expects 2-D or 3-D operands, got {:?} x {:?}", ls, rs),
        };
        let a = self.values();
        let b = rhs.values();
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            kernels::matmul_acc(
                &mut out[bi * m * n..(bi + 1) * m * n],
                &a[bi * m * k..(bi + 1) * m * k],
                &b[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
            );
        }
        drop(a);
        drop(b);
        let shape = if ls.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let tracked = self.tracks_grad() || rhs.tracks_grad();
        self.make(out, shape, Op::Matmul(self.clone(), rhs.clone()), tracked)
    }

    fn broadcast_check(&self, rhs: &Tensor, what: &str) {
        let (ls, rs) = (self.shape(), rhs.shape());
        let ok = ls == rs || (rs.len() < ls.len() && ls[ls.len() - rs.len()..] == *rs);
        assert!(ok, "{} shape mismatch: {:?} vs {:?}", what, ls, rs);
    }

    /// Elementwise add; `rhs` may be a suffix shape broadcast over the
    /// leading dimensions (e.g. `(batch, d) + (d)`).
    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.broadcast_check(rhs, "add");
        let a = self.values();
        let b = rhs.values();
        let bl = b.len();
        let out: Vec<f64> = a.iter().enumerate().map(|(i, &x)| x + b[i % bl]).collect();
        drop(a);
        drop(b);
        let tracked = self.tracks_grad() || rhs.tracks_grad();
        self.make(
            out,
            self.shape().to_vec(),
            Op::Add(self.clone(), rhs.clone()),
            tracked,
        )
    }

    /// Elementwise subtract with the same broadcast rule as [`Tensor::add`].
    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.broadcast_check(rhs, "sub");
        let a = self.values();
        let b = rhs.values();
        let bl = b.len();
        let out: Vec<f64> = a.iter().enumerate().map(|(i, &x)| x - b[i % bl]).collect();
        drop(a);
        drop(b);
        let tracked = self.tracks_grad() || rhs.tracks_grad();
        self.make(
            out,
            self.shape().to_vec(),
            Op::Sub(self.clone(), rhs.clone()),
            tracked,
        )
    }

    /// Elementwise product with the same broadcast rule as [`Tensor::add`].
    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.broadcast_check(rhs, "mul");
        let a = self.values();
        let b = rhs.values();
        let bl = b.len();
        let out: Vec<f64> = a.iter().enumerate().map(|(i, &x)| x * b[i % bl]).collect();
        drop(a);
        drop(b);
        let tracked = self.tracks_grad() || rhs.tracks_grad();
        self.make(
            out,
            self.shape().to_vec(),
            Op::Mul(self.clone(), rhs.clone()),
            tracked,
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|&x| x * c).collect();
        let tracked = self.tracks_grad();
        self.make(out, self.shape().to_vec(), Op::Scale(self.clone(), c), tracked)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|&x| x.max(0.0)).collect();
        let tracked = self.tracks_grad();
        self.make(out, self.shape().to_vec(), Op::Relu(self.clone()), tracked)
    }

    /// ELU with unit slope: `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&self) -> Tensor {
        let out: Vec<f64> = self
            .values()
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        let tracked = self.tracks_grad();
        self.make(out, self.shape().to_vec(), Op::Elu(self.clone()), tracked)
    }

    pub fn tanh(&self) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|&x| x.tanh()).collect();
        let tracked = self.tracks_grad();
        self.make(out, self.shape().to_vec(), Op::Tanh(self.clone()), tracked)
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self
            .values()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let tracked = self.tracks_grad();
        self.make(out, self.shape().to_vec(), Op::Sigmoid(self.clone()), tracked)
    }

    /// Absolute value. The subgradient at 0 is fixed to 0.
    pub fn abs(&self) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|&x| x.abs()).collect();
        let tracked = self.tracks_grad();
        self.make(out, self.shape().to_vec(), Op::Abs(self.clone()), tracked)
    }

    fn axis_extents(&self, axis: usize) -> (usize, usize, usize) {
        let shape = self.shape();
        assert!(axis < shape.len(), "axis {} out of rank {:?}", axis, shape);
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        (outer, mid, inner)
    }

    fn reduced_shape(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape().to_vec();
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    pub fn sum_axis(&self, axis: usize) -> Tensor {
        let (outer, mid, inner) = self.axis_extents(axis);
        let v = self.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let orow = &mut out[o * inner..(o + 1) * inner];
                for (dst, &src) in orow.iter_mut().zip(&v[base..base + inner]) {
                    *dst += src;
                }
            }
        }
        drop(v);
        let tracked = self.tracks_grad();
        self.make(
            out,
            self.reduced_shape(axis),
            Op::SumAxis(self.clone(), axis),
            tracked,
        )
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor {
        let (_, mid, _) = self.axis_extents(axis);
        let sum = self.sum_axis(axis);
        // recorded as its own op so the backward scaling is exact
        let out: Vec<f64> = sum.values().iter().map(|&x| x / mid as f64).collect();
        let tracked = self.tracks_grad();
        self.make(
            out,
            self.reduced_shape(axis),
            Op::MeanAxis(self.clone(), axis),
            tracked,
        )
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        let tracked = self.tracks_grad();
        self.make(vec![s], vec![1], Op::SumAll(self.clone()), tracked)
    }

    pub fn mean_all(&self) -> Tensor {
        let v = self.values();
        let s: f64 = v.iter().sum();
        let n = v.len() as f64;
        drop(v);
        let tracked = self.tracks_grad();
        self.make(vec![s / n], vec![1], Op::MeanAll(self.clone()), tracked)
    }

    /// Concatenation along the last axis; all parts share leading dims.
    pub fn concat(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            assert_eq!(
                &s[..s.len() - 1],
                lead,
                "concat leading dims differ: {:?} vs {:?}",
                parts[0].shape(),
                s
            );
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let v = p.values();
            for r in 0..rows {
                out[r * total + col..r * total + col + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let tracked = parts.iter().any(|p| p.tracks_grad());
        if tracked && grad_enabled() {
            Tensor::new(out, shape, false, Op::Concat(parts.to_vec()))
        } else {
            Tensor::new(out, shape, false, Op::Leaf)
        }
    }

    /// Index-select along the last axis: one index per row, output width 1.
    pub fn gather_last(&self, idx: &[usize]) -> Tensor {
        let shape = self.shape();
        let w = *shape.last().expect("gather_last on 0-rank tensor");
        let rows = self.len() / w;
        assert_eq!(
            idx.len(),
            rows,
            "gather_last needs one index per row: {} rows, {} indices",
            rows,
            idx.len()
        );
        let v = self.values();
        let mut out = vec![0.0; rows];
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < w, "gather index {} out of width {}", i, w);
            out[r] = v[r * w + i];
        }
        drop(v);
        let mut oshape = shape.to_vec();
        *oshape.last_mut().unwrap() = 1;
        let tracked = self.tracks_grad();
        self.make(
            out,
            oshape,
            Op::GatherLast(self.clone(), idx.to_vec()),
            tracked,
        )
    }

    /// Columns `[start, start+len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        let w = *shape.last().expect("slice_last on 0-rank tensor");
        assert!(
            start + len <= w,
            "slice_last [{}, {}) out of width {}",
            start,
            start + len,
            w
        );
        let rows = self.len() / w;
        let v = self.values();
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&v[r * w + start..r * w + start + len]);
        }
        drop(v);
        let mut oshape = shape.to_vec();
        *oshape.last_mut().unwrap() = len;
        let tracked = self.tracks_grad();
        self.make(
            out,
            oshape,
            Op::SliceLast(self.clone(), start, len),
            tracked,
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            self.len(),
            numel(shape),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        let tracked = self.tracks_grad();
        self.make(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
            tracked,
        )
    }

    /// Elementwise squared error `(self - other)^2`.
    pub fn squared_error(&self, other: &Tensor) -> Tensor {
        let d = self.sub(other);
        d.mul(&d)
    }

    /// Mean squared error over all elements, as a scalar tensor.
    pub fn mse(&self, other: &Tensor) -> Tensor {
        self.squared_error(other).mean_all()
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode gradient pass from a scalar loss. Gradients accumulate
    /// into every reachable leaf created with [`Tensor::param`]; repeated
    /// calls without [`Tensor::zero_grad`] keep accumulating.
    pub fn backward(&self) {
        assert_eq!(
            self.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.shape()
        );
        // reverse topological order via iterative post-order DFS
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.inner.op.parents() {
                if p.tracks_grad() && !visited.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut scratch: HashMap<usize, Vec<f64>> = HashMap::new();
        scratch.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = scratch.remove(&t.key()) else {
                continue;
            };
            if t.inner.requires_grad {
                t.add_to_grad(&g);
            }
            t.propagate(&g, &mut scratch);
        }
    }

    fn propagate(&self, g: &[f64], scratch: &mut HashMap<usize, Vec<f64>>) {
        fn acc<'a>(
            scratch: &'a mut HashMap<usize, Vec<f64>>,
            t: &Tensor,
        ) -> Option<&'a mut Vec<f64>> {
            if !t.tracks_grad() {
                return None;
            }
            Some(scratch.entry(t.key()).or_insert_with(|| vec![0.0; t.len()]))
        }

        match &self.inner.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (batch, m, k, n) = match a.shape().len() {
                    2 => (1, a.shape()[0], a.shape()[1], b.shape()[1]),
                    _ => (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]),
                };
                if a.tracks_grad() {
                    let bv = b.values();
                    let da = acc(scratch, a).unwrap();
                    for bi in 0..batch {
                        kernels::matmul_bt_acc(
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * k * n..(bi + 1) * k * n],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if b.tracks_grad() {
                    let av = a.values();
                    let db = acc(scratch, b).unwrap();
                    for bi in 0..batch {
                        kernels::matmul_at_acc(
                            &mut db[bi * k * n..(bi + 1) * k * n],
                            &av[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = acc(scratch, a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = acc(scratch, b) {
                    let bl = db.len();
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % bl] += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = acc(scratch, a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = acc(scratch, b) {
                    let bl = db.len();
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % bl] -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if a.tracks_grad() {
                    let bv = b.values();
                    let bl = bv.len();
                    let da = acc(scratch, a).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        da[i] += gv * bv[i % bl];
                    }
                }
                if b.tracks_grad() {
                    let av = a.values();
                    let db = acc(scratch, b).unwrap();
                    let bl = db.len();
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % bl] += gv * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = acc(scratch, a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                }
            }
            Op::Relu(a) => {
                if a.tracks_grad() {
                    let av = a.values();
                    let da = acc(scratch, a).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        if av[i] > 0.0 {
                            da[i] += gv;
                        }
                    }
                }
            }
            Op::Elu(a) => {
                if a.tracks_grad() {
                    let yv = self.values();
                    let av = a.values();
                    let da = acc(scratch, a).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        // d/dx = 1 for x > 0, exp(x) = y + 1 otherwise
                        da[i] += gv * if av[i] > 0.0 { 1.0 } else { yv[i] + 1.0 };
                    }
                }
            }
            Op::Tanh(a) => {
                if a.tracks_grad() {
                    let yv = self.values();
                    let da = acc(scratch, a).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        da[i] += gv * (1.0 - yv[i] * yv[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if a.tracks_grad() {
                    let yv = self.values();
                    let da = acc(scratch, a).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        da[i] += gv * yv[i] * (1.0 - yv[i]);
                    }
                }
            }
            Op::Abs(a) => {
                if a.tracks_grad() {
                    let av = a.values();
                    let da = acc(scratch, a).unwrap();
                    for (i, &gv) in g.iter().enumerate() {
                        // subgradient at exactly 0 is 0
                        da[i] += gv * if av[i] > 0.0 {
                            1.0
                        } else if av[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            Op::SumAxis(a, axis) => {
                if a.tracks_grad() {
                    let (outer, mid, inner) = a.axis_extents(*axis);
                    let da = acc(scratch, a).unwrap();
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            for i in 0..inner {
                                da[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::MeanAxis(a, axis) => {
                if a.tracks_grad() {
                    let (outer, mid, inner) = a.axis_extents(*axis);
                    let scale = 1.0 / mid as f64;
                    let da = acc(scratch, a).unwrap();
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            for i in 0..inner {
                                da[base + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(da) = acc(scratch, a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll(a) => {
                if a.tracks_grad() {
                    let scale = 1.0 / a.len() as f64;
                    let da = acc(scratch, a).unwrap();
                    for d in da.iter_mut() {
                        *d += g[0] * scale;
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *self.shape().last().unwrap();
                let rows = self.len() / total;
                let mut col = 0;
                for p in parts {
                    let w = *p.shape().last().unwrap();
                    if p.tracks_grad() {
                        let dp = acc(scratch, p).unwrap();
                        for r in 0..rows {
                            for i in 0..w {
                                dp[r * w + i] += g[r * total + col + i];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::GatherLast(a, idx) => {
                if a.tracks_grad() {
                    let w = *a.shape().last().unwrap();
                    let da = acc(scratch, a).unwrap();
                    for (r, &i) in idx.iter().enumerate() {
                        da[r * w + i] += g[r];
                    }
                }
            }
            Op::SliceLast(a, start, len) => {
                if a.tracks_grad() {
                    let w = *a.shape().last().unwrap();
                    let rows = a.len() / w;
                    let da = acc(scratch, a).unwrap();
                    for r in 0..rows {
                        for i in 0..*len {
                            da[r * w + start + i] += g[r * len + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = acc(scratch, a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

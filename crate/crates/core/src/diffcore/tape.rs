//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation on a [`Var`] appends a node holding its value, its parent
//! node ids and (when any parent needs a gradient) a closure mapping the
//! output gradient to parent gradients. Node ids are assigned in creation
//! order, so walking the tape backwards is a valid topological order.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Back<'a> {
    pub grad: &'a Tensor,
    pub inputs: &'a [Rc<Tensor>],
    pub output: &'a Tensor,
    pub needs: &'a [bool],
}

type BackwardFn = Box<dyn Fn(&Back<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    kink: Cell<bool>,
    nonfinite: RefCell<Option<&'static str>>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Finite-value checking follows `debug_assertions`; see [`Tape::with_checks`].
    pub fn new() -> Self {
        Self::with_checks(cfg!(debug_assertions))
    }

    pub fn with_checks(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            kink: Cell::new(false),
            nonfinite: RefCell::new(None),
            check_finite,
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.note_finite("leaf", &value);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents: vec![], backward: None, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn push_op(
        &self,
        name: &'static str,
        value: Tensor,
        parents: &[usize],
        backward: impl Fn(&Back<'_>) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'_> {
        self.note_finite(name, &value);
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let backward: Option<BackwardFn> =
            if requires_grad { Some(Box::new(backward)) } else { None };
        nodes.push(Node { value: Rc::new(value), parents: parents.to_vec(), backward, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn note_finite(&self, name: &'static str, value: &Tensor) {
        if self.check_finite && !value.all_finite() {
            let mut slot = self.nonfinite.borrow_mut();
            if slot.is_none() {
                *slot = Some(name);
            }
        }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records that an operation was evaluated at a point where it is not
    /// differentiable (an exact tie in a max).
    pub(crate) fn mark_kink(&self) {
        self.kink.set(true);
    }

    pub fn hit_nondifferentiable_point(&self) -> bool {
        self.kink.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fails if any recorded value was non-finite (only tracked when checks are on).
    pub fn check(&self) -> Result<()> {
        match *self.nonfinite.borrow() {
            Some(op) => Err(Error::Numeric(format!("non-finite value produced by `{op}`"))),
            None => Ok(()),
        }
    }

    /// Back-propagates from a scalar and returns gradients of all leaves.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check()?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::dim("backward", format!("loss has shape {:?}", root.value.shape())));
        }
        if !root.value.all_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![1.0]));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let inputs: Vec<Rc<Tensor>> = node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&Back { grad: &grad, inputs: &inputs, output: &node.value, needs: &needs });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Interior gradients were consumed above; only leaves remain.
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub(crate) fn take(&mut self, id: usize) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(Option::take)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on shape {:?}", v.shape());
        v.data()[0]
    }

    fn unary(
        self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let out = x.map(f);
        self.tape.push_op(name, out, &[self.id], move |b| {
            let x = &b.inputs[0];
            let d = x.data().iter().zip(b.output.data()).zip(b.grad.data()).map(|((&x, &y), &g)| g * df(x, y));
            vec![Some(Tensor::from_parts(x.shape().to_vec(), d.collect()))]
        })
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b);
        let out = zip_map(&a, &b, |x, y| x + y);
        self.tape.push_op("add", out, &[self.id, other.id], |b| vec![Some(b.grad.clone()), Some(b.grad.clone())])
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b);
        let out = zip_map(&a, &b, |x, y| x - y);
        self.tape.push_op("sub", out, &[self.id, other.id], |b| {
            vec![Some(b.grad.clone()), Some(b.grad.map(|g| -g))]
        })
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b);
        let out = zip_map(&a, &b, |x, y| x * y);
        self.tape.push_op("mul", out, &[self.id, other.id], |b| {
            let da = b.needs[0].then(|| zip_map(b.grad, &b.inputs[1], |g, y| g * y));
            let db = b.needs[1].then(|| zip_map(b.grad, &b.inputs[0], |g, x| g * x));
            vec![da, db]
        })
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().map(|x| c * x);
        self.tape.push_op("scale", out, &[self.id], move |b| vec![Some(b.grad.map(|g| c * g))])
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `x * s` where `s` is a one-element tensor.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        let x = self.value();
        let sv = s.value();
        assert_eq!(sv.len(), 1, "mul_scalar: scalar has shape {:?}", sv.shape());
        let k = sv.data()[0];
        let out = x.map(|v| v * k);
        self.tape.push_op("mul_scalar", out, &[self.id, s.id], |b| {
            let k = b.inputs[1].data()[0];
            let dx = b.needs[0].then(|| b.grad.map(|g| g * k));
            let ds = b.needs[1].then(|| {
                let s: f64 = b.grad.data().iter().zip(b.inputs[0].data()).map(|(g, x)| g * x).sum();
                Tensor::from_parts(b.inputs[1].shape().to_vec(), vec![s])
            });
            vec![dx, ds]
        })
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        let x = self.value();
        let bv = bias.value();
        let n = x.cols();
        assert_eq!(bv.len(), n, "add_row: bias length {} vs {n} columns", bv.len());
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        self.tape.push_op("add_row", out, &[self.id, bias.id], move |b| {
            let db = b.needs[1].then(|| {
                let mut acc = vec![0.0; n];
                for row in b.grad.data().chunks(n) {
                    for (a, g) in acc.iter_mut().zip(row) {
                        *a += g;
                    }
                }
                Tensor::from_parts(b.inputs[1].shape().to_vec(), acc)
            });
            vec![Some(b.grad.clone()), db]
        })
    }

    /// `[m,k] x [k,n]`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_impl(other, false)
    }

    /// `[m,k] x [n,k]^T`.
    pub fn matmul_t(self, other: Var<'t>) -> Var<'t> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'t>, b_t: bool) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D, got {:?}", a.shape());
        assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D, got {:?}", b.shape());
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (kb, n) = if b_t { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        assert_eq!(k, kb, "matmul inner dims {:?} x {:?} (transposed rhs: {b_t})", a.shape(), b.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), b_t, &mut out, 0.0);
        let out = Tensor::from_parts(vec![m, n], out);
        self.tape.push_op("matmul", out, &[self.id, other.id], move |bk| {
            let (a, b, g) = (&bk.inputs[0], &bk.inputs[1], bk.grad);
            let da = bk.needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                // dA = G B^T (or G B when B was used transposed)
                gemm(m, n, k, g.data(), false, b.data(), !b_t, &mut d, 0.0);
                Tensor::from_parts(vec![m, k], d)
            });
            let db = bk.needs[1].then(|| {
                if b_t {
                    let mut d = vec![0.0; n * k];
                    gemm(n, m, k, g.data(), true, a.data(), false, &mut d, 0.0);
                    Tensor::from_parts(vec![n, k], d)
                } else {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut d, 0.0);
                    Tensor::from_parts(vec![k, n], d)
                }
            });
            vec![da, db]
        })
    }

    pub fn relu(self) -> Var<'t> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    /// `1 - x`, used for GRU gate complements.
    pub fn one_minus(self) -> Var<'t> {
        self.unary("one_minus", |x| 1.0 - x, |_, _| -1.0)
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let out = Tensor::scalar(x.sum());
        self.tape.push_op("sum", out, &[self.id], |b| {
            let g = b.grad.data()[0];
            vec![Some(Tensor::full(b.inputs[0].shape(), g))]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(self) -> Var<'t> {
        let x = self.value();
        let n = x.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        self.tape.push_op("log_softmax", out, &[self.id], move |b| {
            let mut d = b.grad.data().to_vec();
            for (drow, yrow) in d.chunks_mut(n).zip(b.output.data().chunks(n)) {
                let gs: f64 = drow.iter().sum();
                for (dv, y) in drow.iter_mut().zip(yrow) {
                    *dv -= y.exp() * gs;
                }
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(self) -> Var<'t> {
        let x = self.value();
        let n = x.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        self.tape.push_op("softmax", out, &[self.id], move |b| {
            let mut d = b.grad.data().to_vec();
            for (drow, yrow) in d.chunks_mut(n).zip(b.output.data().chunks(n)) {
                let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for (dv, y) in drow.iter_mut().zip(yrow) {
                    *dv = y * (*dv - dot);
                }
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let out = (*x).clone().reshape(shape).expect("reshape element count");
        self.tape.push_op("reshape", out, &[self.id], |b| {
            vec![Some(b.grad.clone().reshape(b.inputs[0].shape()).expect("reshape back"))]
        })
    }

    pub fn transpose(self) -> Var<'t> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let out = Tensor::from_parts(vec![n, m], transpose(x.data(), m, n));
        self.tape.push_op("transpose", out, &[self.id], move |b| {
            vec![Some(Tensor::from_parts(vec![m, n], transpose(b.grad.data(), n, m)))]
        })
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn rows(self, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        assert!(start + len <= m && len > 0, "rows({start},{len}) of {m}");
        let out = Tensor::from_parts(vec![len, n], x.data()[start * n..(start + len) * n].to_vec());
        self.tape.push_op("rows", out, &[self.id], move |b| {
            let mut d = vec![0.0; m * n];
            d[start * n..(start + len) * n].copy_from_slice(b.grad.data());
            vec![Some(Tensor::from_parts(vec![m, n], d))]
        })
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn cols(self, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        assert!(start + len <= n && len > 0, "cols({start},{len}) of {n}");
        let mut out = Vec::with_capacity(m * len);
        for row in x.data().chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_parts(vec![m, len], out);
        self.tape.push_op("cols", out, &[self.id], move |b| {
            let mut d = vec![0.0; m * n];
            for (drow, grow) in d.chunks_mut(n).zip(b.grad.data().chunks(len)) {
                drow[start..start + len].copy_from_slice(grow);
            }
            vec![Some(Tensor::from_parts(vec![m, n], d))]
        })
    }

    /// Selects rows by index (repeats allowed); gradient scatter-adds.
    pub fn gather_rows(self, indices: &[usize]) -> Var<'t> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            assert!(i < m, "gather_rows index {i} out of {m}");
            out.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_parts(vec![indices.len(), n], out);
        let indices = indices.to_vec();
        self.tape.push_op("gather_rows", out, &[self.id], move |b| {
            let mut d = vec![0.0; m * n];
            for (&i, g) in indices.iter().zip(b.grad.data().chunks(n)) {
                for (dv, gv) in d[i * n..(i + 1) * n].iter_mut().zip(g) {
                    *dv += gv;
                }
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Row `r` is taken from `self` where `mask[r]`, otherwise from `other`.
    pub fn where_rows(self, mask: &[bool], other: Var<'t>) -> Var<'t> {
        let (a, o) = (self.value(), other.value());
        same_shape("where_rows", &a, &o);
        let n = a.cols();
        assert_eq!(mask.len(), a.rows(), "where_rows mask length");
        let mut out = o.data().to_vec();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out[r * n..(r + 1) * n].copy_from_slice(a.row(r));
            }
        }
        let out = Tensor::from_parts(a.shape().to_vec(), out);
        let mask = mask.to_vec();
        self.tape.push_op("where_rows", out, &[self.id, other.id], move |b| {
            let mut da = b.grad.data().to_vec();
            let mut db = b.grad.data().to_vec();
            for (r, &m) in mask.iter().enumerate() {
                let target = if m { &mut db } else { &mut da };
                target[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = 0.0);
            }
            let shape = b.grad.shape().to_vec();
            vec![Some(Tensor::from_parts(shape.clone(), da)), Some(Tensor::from_parts(shape, db))]
        })
    }
}

/// Stacks 2-D tensors with equal column counts vertically.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let tape = parts[0].tape;
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let n = values[0].cols();
    let mut out = Vec::new();
    let mut sizes = Vec::with_capacity(parts.len());
    for v in &values {
        assert_eq!(v.cols(), n, "concat_rows column mismatch");
        out.extend_from_slice(v.data());
        sizes.push(v.rows());
    }
    let m = out.len() / n;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push_op("concat_rows", Tensor::from_parts(vec![m, n], out), &ids, move |b| {
        let mut offset = 0;
        sizes
            .iter()
            .zip(b.needs)
            .map(|(&rows, &need)| {
                let slice = &b.grad.data()[offset * n..(offset + rows) * n];
                offset += rows;
                need.then(|| Tensor::from_parts(vec![rows, n], slice.to_vec()))
            })
            .collect()
    })
}

/// Joins 2-D tensors with equal row counts side by side.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let tape = parts[0].tape;
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let m = values[0].rows();
    let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut out = vec![0.0; m * total];
    let mut offset = 0;
    for (v, &w) in values.iter().zip(&widths) {
        assert_eq!(v.rows(), m, "concat_cols row mismatch");
        for r in 0..m {
            out[r * total + offset..r * total + offset + w].copy_from_slice(v.row(r));
        }
        offset += w;
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push_op("concat_cols", Tensor::from_parts(vec![m, total], out), &ids, move |b| {
        let mut offset = 0;
        widths
            .iter()
            .zip(b.needs)
            .map(|(&w, &need)| {
                let start = offset;
                offset += w;
                need.then(|| {
                    let mut d = Vec::with_capacity(m * w);
                    for row in b.grad.data().chunks(total) {
                        d.extend_from_slice(&row[start..start + w]);
                    }
                    Tensor::from_parts(vec![m, w], d)
                })
            })
            .collect()
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

pub(crate) fn transpose(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = data[i * n + j];
        }
    }
    out
}

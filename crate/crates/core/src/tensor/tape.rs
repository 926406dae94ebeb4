use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

/// Half-width of the band kept away from +-1 before `acos` is evaluated.
pub const ACOS_EPS: f64 = 1e-7;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    AddN(Vec<usize>),
    Relu(usize),
    Tanh(usize),
    Sqrt(usize),
    Square(usize),
    Dot(usize, usize),
    L2Norm(usize),
    /// `pass[i]` is false where the input was clamped into the acos band.
    Acos { input: usize, pass: Vec<bool> },
    Clamp { input: usize, lo: f64, hi: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in evaluation order, so the index order is a valid
/// topological order and the backward sweep simply walks it in reverse.
/// A tape is meant for one thread; build a fresh one per loss evaluation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    tags: RefCell<BTreeMap<&'static str, u64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            tags: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records that a named computation ran on this tape.
    pub fn tag(&self, name: &'static str) {
        *self.tags.borrow_mut().entry(name).or_insert(0) += 1;
    }

    pub fn tag_count(&self, name: &str) -> u64 {
        self.tags.borrow().get(name).copied().unwrap_or(0)
    }

    pub fn tags(&self) -> BTreeMap<&'static str, u64> {
        self.tags.borrow().clone()
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn vector(&self, data: &[f64]) -> Var {
        self.constant(Tensor::vector(data.to_vec()))
    }

    pub fn value(&self, v: Var) -> Result<Tensor> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        let i = self.index(v)?;
        self.nodes.borrow()[i].value.item()
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.shape().to_vec())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].requires_grad)
    }

    /// Gradient from the most recent backward pass, if `v` requires one.
    pub fn grad(&self, v: Var) -> Result<Option<Tensor>> {
        let i = self.index(v)?;
        let nodes = self.nodes.borrow();
        let node = &nodes[i];
        Ok(node
            .grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()))
            .transpose()?)
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.borrow().len() {
            return Err(Error::contract("variable does not belong to this tape"));
        }
        Ok(v.index)
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn unary(
        &self,
        a: Var,
        f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var> {
        let ia = self.index(a)?;
        let (value, op, rg) = {
            let nodes = self.nodes.borrow();
            let (value, op) = f(&nodes[ia].value)?;
            (value, op, nodes[ia].requires_grad)
        };
        Ok(self.push(value, rg, op))
    }

    fn elementwise(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let ia = self.index(a)?;
        let ib = self.index(b)?;
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[ia].value, &nodes[ib].value);
            let value = if ta.shape() == tb.shape() {
                let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(ta.shape().to_vec(), data)?
            } else if ta.is_scalar() {
                let x = ta.data()[0];
                Tensor::new(tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())?
            } else if tb.is_scalar() {
                let y = tb.data()[0];
                Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())?
            } else {
                return Err(Error::shape(name, ta.shape(), tb.shape()));
            };
            (value, nodes[ia].requires_grad || nodes[ib].requires_grad)
        };
        Ok(self.push(value, rg, op(ia, ib)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("div", a, b, |x, y| x / y, Op::Div)
    }

    /// Multiplies by a constant.
    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |t| {
            let data = t.data().iter().map(|&x| x * c).collect();
            Ok((Tensor::new(t.shape().to_vec(), data)?, Op::Scale(a.index, c)))
        })
    }

    /// Adds a constant.
    pub fn shift(&self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |t| {
            let data = t.data().iter().map(|&x| x + c).collect();
            Ok((Tensor::new(t.shape().to_vec(), data)?, Op::Shift(a.index)))
        })
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let ib = self.index(b)?;
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[ia].value, &nodes[ib].value);
            let value = match (ta.shape(), tb.shape()) {
                (&[m, k], &[k2, n]) if k == k2 => {
                    let mut out = vec![0.0; m * n];
                    matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
                    Tensor::new(vec![m, n], out)?
                }
                (&[m, k], &[k2]) if k == k2 => {
                    let mut out = vec![0.0; m];
                    matmul_into(ta.data(), tb.data(), m, k, 1, &mut out);
                    Tensor::vector(out)
                }
                _ => return Err(Error::shape("matmul", ta.shape(), tb.shape())),
            };
            (value, nodes[ia].requires_grad || nodes[ib].requires_grad)
        };
        Ok(self.push(value, rg, Op::MatMul(ia, ib)))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| Ok((Tensor::scalar(t.data().iter().sum()), Op::Sum(a.index))))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| {
            if t.is_empty() {
                return Err(Error::contract("mean of an empty tensor"));
            }
            let m = t.data().iter().sum::<f64>() / t.len() as f64;
            Ok((Tensor::scalar(m), Op::Mean(a.index)))
        })
    }

    /// Sum of several same-shape tensors, accumulated left to right.
    pub fn add_n(&self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::contract("add_n over an empty list"));
        }
        let mut idx = Vec::with_capacity(items.len());
        for &v in items {
            idx.push(self.index(v)?);
        }
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let shape = nodes[idx[0]].value.shape().to_vec();
            let mut acc = vec![0.0; nodes[idx[0]].value.len()];
            let mut rg = false;
            for &i in &idx {
                let t = &nodes[i].value;
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("add_n", &shape, t.shape()));
                }
                for (a, &x) in acc.iter_mut().zip(t.data()) {
                    *a += x;
                }
                rg |= nodes[i].requires_grad;
            }
            (Tensor::new(shape, acc)?, rg)
        };
        Ok(self.push(value, rg, Op::AddN(idx)))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.map(a, |x| x.max(0.0), Op::Relu(a.index))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.map(a, f64::tanh, Op::Tanh(a.index))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.map(a, |x| x * x, Op::Square(a.index))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| {
            if let Some(bad) = t.data().iter().find(|x| !(**x >= 0.0)) {
                return Err(Error::Domain {
                    op: "sqrt",
                    message: format!("input {bad} is negative or NaN"),
                });
            }
            let data = t.data().iter().map(|x| x.sqrt()).collect();
            Ok((Tensor::new(t.shape().to_vec(), data)?, Op::Sqrt(a.index)))
        })
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.unary(a, |t| {
            let data = t.data().iter().map(|&x| f(x)).collect();
            Ok((Tensor::new(t.shape().to_vec(), data)?, op))
        })
    }

    /// Inner product of two equal-length vectors.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let ib = self.index(b)?;
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[ia].value, &nodes[ib].value);
            if ta.shape().len() != 1 || ta.shape() != tb.shape() {
                return Err(Error::shape("dot", ta.shape(), tb.shape()));
            }
            let d = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
            (Tensor::scalar(d), nodes[ia].requires_grad || nodes[ib].requires_grad)
        };
        Ok(self.push(value, rg, Op::Dot(ia, ib)))
    }

    /// Euclidean norm over all elements. Its gradient at the zero tensor is zero.
    pub fn l2_norm(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| {
            let n = t.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok((Tensor::scalar(n), Op::L2Norm(a.index)))
        })
    }

    /// Arc cosine. Inputs outside `[-1 + ACOS_EPS, 1 - ACOS_EPS]` get zero
    /// gradient, which keeps the derivative finite at collinear pairs; the
    /// value itself is taken on `[-1, 1]` so parallel and antipodal pairs
    /// evaluate to exactly 0 and pi.
    pub fn acos(&self, a: Var) -> Result<Var> {
        self.unary(a, |t| {
            if let Some(bad) = t.data().iter().find(|x| !x.is_finite()) {
                return Err(Error::Domain {
                    op: "acos",
                    message: format!("non-finite input {bad}"),
                });
            }
            let (lo, hi) = (-1.0 + ACOS_EPS, 1.0 - ACOS_EPS);
            let pass: Vec<bool> = t.data().iter().map(|&x| (lo..=hi).contains(&x)).collect();
            let data = t.data().iter().map(|&x| x.clamp(-1.0, 1.0).acos()).collect();
            Ok((
                Tensor::new(t.shape().to_vec(), data)?,
                Op::Acos {
                    input: a.index,
                    pass,
                },
            ))
        })
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::contract(format!("clamp bounds {lo} > {hi}")));
        }
        self.map(
            a,
            |x| x.clamp(lo, hi),
            Op::Clamp {
                input: a.index,
                lo,
                hi,
            },
        )
    }

    /// Reverse sweep from a scalar output. Gradients of earlier sweeps are
    /// replaced.
    pub fn backward(&self, output: Var) -> Result<()> {
        self.sweep(output, false)
    }

    /// Reverse sweep that adds into gradients left by earlier sweeps.
    pub fn backward_accumulate(&self, output: Var) -> Result<()> {
        self.sweep(output, true)
    }

    fn sweep(&self, output: Var, accumulate: bool) -> Result<()> {
        let out = self.index(output)?;
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[out].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                nodes[out].value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(vec![1.0]);

        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in nodes.iter_mut().enumerate() {
            if !node.requires_grad {
                continue;
            }
            let fresh = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            node.grad = match (accumulate, node.grad.take()) {
                (true, Some(mut prev)) => {
                    for (p, f) in prev.iter_mut().zip(&fresh) {
                        *p += f;
                    }
                    Some(prev)
                }
                _ => Some(fresh),
            };
        }
        Ok(())
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for r in 0..m {
        let row = &a[r * k..(r + 1) * k];
        for c in 0..n {
            let mut acc = 0.0;
            for (j, &x) in row.iter().enumerate() {
                acc += x * b[j * n + c];
            }
            out[r * n + c] = acc;
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: usize, contrib: Vec<f64>) {
    match &mut grads[target] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Reduces a broadcast gradient back onto an operand's shape.
fn unbroadcast(g: &[f64], operand: &Tensor, per_elem: impl Fn(usize) -> f64) -> Vec<f64> {
    if operand.is_scalar() && g.len() != 1 {
        vec![g.iter().enumerate().map(|(i, &gi)| gi * per_elem(i)).sum()]
    } else {
        g.iter().enumerate().map(|(i, &gi)| gi * per_elem(i)).collect()
    }
}

fn at(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let rg = |j: usize| nodes[j].requires_grad;
    let val = |j: usize| &nodes[j].value;
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            if rg(a) {
                accumulate(grads, a, unbroadcast(g, val(a), |_| 1.0));
            }
            if rg(b) {
                accumulate(grads, b, unbroadcast(g, val(b), |_| 1.0));
            }
        }
        &Op::Sub(a, b) => {
            if rg(a) {
                accumulate(grads, a, unbroadcast(g, val(a), |_| 1.0));
            }
            if rg(b) {
                accumulate(grads, b, unbroadcast(g, val(b), |_| -1.0));
            }
        }
        &Op::Mul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            if rg(a) {
                accumulate(grads, a, unbroadcast(g, ta, |k| at(tb, k)));
            }
            if rg(b) {
                accumulate(grads, b, unbroadcast(g, tb, |k| at(ta, k)));
            }
        }
        &Op::Div(a, b) => {
            let (ta, tb) = (val(a), val(b));
            if rg(a) {
                accumulate(grads, a, unbroadcast(g, ta, |k| 1.0 / at(tb, k)));
            }
            if rg(b) {
                accumulate(
                    grads,
                    b,
                    unbroadcast(g, tb, |k| {
                        let y = at(tb, k);
                        -at(ta, k) / (y * y)
                    }),
                );
            }
        }
        &Op::Scale(a, c) => accumulate(grads, a, g.iter().map(|x| x * c).collect()),
        &Op::Shift(a) => accumulate(grads, a, g.to_vec()),
        &Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = if tb.shape().len() == 2 { tb.shape()[1] } else { 1 };
            if rg(a) {
                // dA[r, j] = sum_c g[r, c] * B[j, c]
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for j in 0..k {
                        let mut acc = 0.0;
                        for c in 0..n {
                            acc += g[r * n + c] * tb.data()[j * n + c];
                        }
                        da[r * k + j] = acc;
                    }
                }
                accumulate(grads, a, da);
            }
            if rg(b) {
                // dB[j, c] = sum_r A[r, j] * g[r, c]
                let mut db = vec![0.0; k * n];
                for j in 0..k {
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += ta.data()[r * k + j] * g[r * n + c];
                        }
                        db[j * n + c] = acc;
                    }
                }
                accumulate(grads, b, db);
            }
        }
        &Op::Sum(a) => accumulate(grads, a, vec![g[0]; val(a).len()]),
        &Op::Mean(a) => {
            let n = val(a).len();
            accumulate(grads, a, vec![g[0] / n as f64; n]);
        }
        Op::AddN(items) => {
            for &a in items {
                if rg(a) {
                    accumulate(grads, a, g.to_vec());
                }
            }
        }
        &Op::Relu(a) => {
            let contrib = g
                .iter()
                .zip(val(a).data())
                .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                .collect();
            accumulate(grads, a, contrib);
        }
        &Op::Tanh(a) => {
            let y = nodes[i].value.data();
            let contrib = g.iter().zip(y).map(|(&gi, &yi)| gi * (1.0 - yi * yi)).collect();
            accumulate(grads, a, contrib);
        }
        &Op::Sqrt(a) => {
            let y = nodes[i].value.data();
            let contrib = g
                .iter()
                .zip(y)
                .map(|(&gi, &yi)| if yi > 0.0 { gi / (2.0 * yi) } else { 0.0 })
                .collect();
            accumulate(grads, a, contrib);
        }
        &Op::Square(a) => {
            let contrib = g
                .iter()
                .zip(val(a).data())
                .map(|(&gi, &x)| 2.0 * x * gi)
                .collect();
            accumulate(grads, a, contrib);
        }
        &Op::Dot(a, b) => {
            if rg(a) {
                accumulate(grads, a, val(b).data().iter().map(|y| g[0] * y).collect());
            }
            if rg(b) {
                accumulate(grads, b, val(a).data().iter().map(|x| g[0] * x).collect());
            }
        }
        &Op::L2Norm(a) => {
            let n = nodes[i].value.data()[0];
            let contrib = if n > 0.0 {
                val(a).data().iter().map(|x| g[0] * x / n).collect()
            } else {
                vec![0.0; val(a).len()]
            };
            accumulate(grads, a, contrib);
        }
        Op::Acos { input, pass } => {
            let (lo, hi) = (-1.0 + ACOS_EPS, 1.0 - ACOS_EPS);
            let contrib = g
                .iter()
                .zip(val(*input).data())
                .zip(pass)
                .map(|((&gi, &x), &p)| {
                    if p {
                        let c = x.clamp(lo, hi);
                        -gi / (1.0 - c * c).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(grads, *input, contrib);
        }
        &Op::Clamp { input, lo, hi } => {
            let contrib = g
                .iter()
                .zip(val(input).data())
                .map(|(&gi, &x)| if (lo..=hi).contains(&x) { gi } else { 0.0 })
                .collect();
            accumulate(grads, input, contrib);
        }
    }
}

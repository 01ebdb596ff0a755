use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Permutation-invariant reductions over a set of equal-length vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    Sum(Var),
    Dot(Var, Var),
    /// Inputs plus, for `Max`, the winning input of each element.
    Aggregate(AggKind, Vec<Var>, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    /// Empty for parameter leaves, whose values live in the store.
    value: Vec<f64>,
}

/// Records a computation for one backward pass. Parameters are read from
/// the borrowed store without copying.
#[derive(Debug)]
pub struct Tape<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Sum in ascending value order, so any permutation of `xs` gives the same bits.
fn sorted_sum(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { store: None, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Self { store: Some(store), nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == numel(&shape));
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => &self.store.expect("parameter leaf without store").get_index(i).values,
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn input(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(Op::Input, vec![n], values)
    }

    pub fn input_shaped(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != values.len() {
            return Err(Error::Dimension(format!("{} values for shape {shape:?}", values.len())));
        }
        Ok(self.push(Op::Input, shape, values))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// Leaf for the named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self.store.ok_or_else(|| Error::InvalidArgument("tape has no parameter store".into()))?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        let shape = store.get_index(idx).shape.clone();
        let v = self.push(Op::Param(idx), shape, Vec::new());
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if na != nb {
            return Err(Error::Dimension(format!("{what}: {na} vs {nb}")));
        }
        Ok(na)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(op, shape, value)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_len(a, b, what)?;
        let value: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(op, shape, value))
    }

    /// `W x` for `W` of shape `[m, n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let shape = self.shape(w);
        if shape.len() != 2 || shape[1] != self.value(x).len() {
            return Err(Error::Dimension(format!("matvec {shape:?} × {}", self.value(x).len())));
        }
        let (m, n) = (shape[0], shape[1]);
        let (wv, xv) = (self.value(w), self.value(x));
        let value: Vec<f64> = (0..m).map(|r| wv[r * n..(r + 1) * n].iter().zip(xv).map(|(a, b)| a * b).sum()).collect();
        Ok(self.push(Op::MatVec(w, x), vec![m], value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::LogSigmoid(x), log_sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Gradient passes only where `lo ≤ x ≤ hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let value = e.iter().map(|v| v / s).collect();
        let n = xv.len();
        self.push(Op::Softmax(x), vec![n], value)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xv.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let value = xv.iter().map(|v| v - lse).collect();
        let n = xv.len();
        self.push(Op::LogSoftmax(x), vec![n], value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        self.push(Op::Concat(parts.to_vec()), vec![n], value)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.len() {
            return Err(Error::Dimension(format!("slice {start}..{} of {}", start + len, xv.len())));
        }
        let value = xv[start..start + len].to_vec();
        Ok(self.push(Op::Slice(x, start), vec![len], value))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() {
            return Err(Error::Dimension(format!("reshape {} values to {shape:?}", self.value(x).len())));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(Op::Reshape(x), shape, value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), vec![1], vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot")?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), vec![1], vec![s]))
    }

    /// Adds a list of scalars or equal-length vectors in the given order.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Elementwise reduction of `xs`; the empty set reduces to zeros of
    /// length `dim`. Values are sorted before summation so the result is
    /// bitwise independent of the input order.
    pub fn aggregate(&mut self, kind: AggKind, xs: &[Var], dim: usize) -> Result<Var> {
        if xs.is_empty() {
            return Ok(self.zeros(dim));
        }
        for &x in xs {
            if self.value(x).len() != dim {
                return Err(Error::Dimension(format!("aggregate element of length {} (want {dim})", self.value(x).len())));
            }
        }
        let n = xs.len() as f64;
        let mut value = Vec::with_capacity(dim);
        let mut winners = Vec::new();
        let mut column = Vec::with_capacity(xs.len());
        for j in 0..dim {
            column.clear();
            column.extend(xs.iter().map(|&x| self.value(x)[j]));
            match kind {
                AggKind::Sum => value.push(sorted_sum(&mut column)),
                AggKind::Mean => value.push(sorted_sum(&mut column) / n),
                AggKind::Max => {
                    let mut best = 0;
                    for (k, &c) in column.iter().enumerate() {
                        if c > column[best] {
                            best = k;
                        }
                    }
                    winners.push(best);
                    value.push(column[best]);
                }
            }
        }
        Ok(self.push(Op::Aggregate(kind, xs.to_vec(), winners), vec![dim], value))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        grads[root.0] = vec![1.0];

        fn acc(grads: &mut [Vec<f64>], v: Var, n: usize) -> &mut Vec<f64> {
            let g = &mut grads[v.0];
            if g.is_empty() {
                g.resize(n, 0.0);
            }
            g
        }

        for i in (0..=root.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatVec(w, x) => {
                    let n = self.nodes[w.0].shape[1];
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    {
                        let gw = acc(&mut grads, *w, wv.len());
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                for (c, &xc) in xv.iter().enumerate() {
                                    gw[r * n + c] += gr * xc;
                                }
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, n);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            for (c, gxc) in gx.iter_mut().enumerate() {
                                *gxc += wv[r * n + c] * gr;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        acc(&mut grads, v, g.len()).iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                    acc(&mut grads, *b, g.len()).iter_mut().zip(&g).for_each(|(d, s)| *d -= s);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
                Op::Affine(x, s) => {
                    acc(&mut grads, *x, g.len()).iter_mut().zip(&g).for_each(|(d, gk)| *d += s * gk);
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::LogSigmoid(x) => {
                    let xv = self.value(*x);
                    let d: Vec<f64> = xv.iter().map(|&v| sigmoid(-v)).collect();
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * d[k];
                    }
                }
                Op::Relu(x) | Op::Elu(x) | Op::Abs(x) | Op::Exp(x) | Op::Square(x) | Op::Clamp(x, _, _) => {
                    let xv = self.value(*x);
                    let d: Vec<f64> = match &node.op {
                        Op::Relu(_) => xv.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
                        Op::Elu(_) => xv.iter().map(|&v| if v > 0.0 { 1.0 } else { v.exp() }).collect(),
                        Op::Abs(_) => xv.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect(),
                        Op::Exp(_) => y.clone(),
                        Op::Square(_) => xv.iter().map(|&v| 2.0 * v).collect(),
                        Op::Clamp(_, lo, hi) => {
                            xv.iter().map(|&v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 }).collect()
                        }
                        _ => unreachable!(),
                    };
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * d[k];
                    }
                }
                Op::Softmax(x) => {
                    let gs: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += y[k] * (g[k] - gs);
                    }
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] - y[k].exp() * total;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let gp = acc(&mut grads, p, n);
                        for k in 0..n {
                            gp[k] += g[off + k];
                        }
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for k in 0..g.len() {
                        gx[start + k] += g[k];
                    }
                }
                Op::Reshape(x) => {
                    acc(&mut grads, *x, g.len()).iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let n = av.len();
                    let ga = acc(&mut grads, *a, n);
                    for k in 0..n {
                        ga[k] += g[0] * bv[k];
                    }
                    let gb = acc(&mut grads, *b, n);
                    for k in 0..n {
                        gb[k] += g[0] * av[k];
                    }
                }
                Op::Aggregate(kind, xs, winners) => {
                    let scale = if *kind == AggKind::Mean { 1.0 / xs.len() as f64 } else { 1.0 };
                    for (idx, &x) in xs.iter().enumerate() {
                        let gx = acc(&mut grads, x, g.len());
                        for k in 0..g.len() {
                            if *kind != AggKind::Max || winners[k] == idx {
                                gx[k] += g[k] * scale;
                            }
                        }
                    }
                }
            }
            grads[i] = g;
        }
        Ok(Gradients { grads })
    }

    /// Gradients of the store's parameters, zero for parameters not used here.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        let store = self.store.expect("param_grads on a tape without store");
        let mut out = ParamGrads::zeros_like(store);
        for (&idx, &v) in &self.param_vars {
            let g = grads.wrt(v);
            if !g.is_empty() {
                out.values[idx].copy_from_slice(g);
            }
        }
        out
    }
}

/// Adjoint of every node reachable backwards from the root.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Empty slice when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> &[f64] {
        self.grads.get(v.0).map(Vec::as_slice).unwrap_or(&[])
    }
}

//! Reverse-mode automatic differentiation over dense 2-D values.
//!
//! Every node holds an `rows × cols` matrix. Batched quantities use one row per
//! batch element, so a state component across the batch is a `batch × 1`
//! column. Nodes that do not depend on a parameter are marked constant and
//! skipped during the backward sweep.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{Array2, Axis};

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{sgn0, Scalar};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    DivConst(usize, f64),
    Offset(usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Act(usize, Activation),
    Sin(usize),
    Cos(usize),
    Tanh(usize),
    Sqrt(usize),
    Col(usize, usize),
    Concat(Vec<usize>),
    LinComb(Vec<(usize, f64)>),
    Broadcast(usize),
    Sum(usize),
    Mean(usize),
    RowNorm(usize),
    Clamp(usize, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recording of primitive operations. Create one per optimizer step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.idx, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    fn push(&self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// A trainable leaf: gradients are accumulated for it.
    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf: treated as data, never differentiated.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A `values.len() × 1` constant column.
    pub fn column(&self, values: &[f64]) -> Var<'_> {
        self.constant(Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var<'_> {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].needs_grad)
        };
        self.push(value, op, ng)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var<'_> {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value),
                nodes[a].needs_grad || nodes[b].needs_grad,
            )
        };
        self.push(value, op, ng)
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let out = &nodes[loss.idx];
        if out.value.dim() != (1, 1) {
            return Err(Error::InvalidInput(format!(
                "loss must be 1x1, got {:?}",
                out.value.dim()
            )));
        }
        if !out.value[[0, 0]].is_finite() {
            return Err(Error::PoisonedGradient);
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; loss.idx + 1];
        adj[loss.idx] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.idx).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            let mut acc = |j: usize, d: Array2<f64>| {
                if !nodes[j].needs_grad {
                    return;
                }
                match &mut adj[j] {
                    Some(a) => *a += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * &nodes[*b].value);
                    acc(*b, &g * &nodes[*a].value);
                }
                Op::Div(a, b) => {
                    let bv = &nodes[*b].value;
                    let ga = &g / bv;
                    let gb = -(&ga * &node.value);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Neg(a) => acc(*a, -g),
                Op::Scale(a, c) => acc(*a, g * *c),
                Op::DivConst(a, c) => acc(*a, g / *c),
                Op::Offset(a) => acc(*a, g),
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, g);
                    acc(*b, gb);
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].needs_grad {
                        acc(*a, linalg::matmul_nt(&g, &nodes[*b].value));
                    }
                    if nodes[*b].needs_grad {
                        acc(*b, linalg::matmul_tn(&nodes[*a].value, &g));
                    }
                }
                Op::Act(a, act) => {
                    let mut d = nodes[*a].value.mapv(|x| act.derivative(x));
                    d *= &g;
                    acc(*a, d);
                }
                Op::Sin(a) => {
                    let mut d = nodes[*a].value.mapv(f64::cos);
                    d *= &g;
                    acc(*a, d);
                }
                Op::Cos(a) => {
                    let mut d = nodes[*a].value.mapv(|x| -x.sin());
                    d *= &g;
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = node.value.mapv(|t| 1.0 - t * t);
                    d *= &g;
                    acc(*a, d);
                }
                Op::Sqrt(a) => {
                    let mut d = node.value.mapv(|s| if s > 0.0 { 0.5 / s } else { 0.0 });
                    d *= &g;
                    acc(*a, d);
                }
                Op::Col(a, j) => {
                    let mut d = Array2::zeros(nodes[*a].value.dim());
                    d.column_mut(*j).assign(&g.column(0));
                    acc(*a, d);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = nodes[p].value.ncols();
                        acc(p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::LinComb(terms) => {
                    for &(p, c) in terms {
                        acc(p, &g * c);
                    }
                }
                Op::Broadcast(a) => {
                    acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    acc(*a, Array2::from_elem(nodes[*a].value.dim(), s));
                }
                Op::Mean(a) => {
                    let av = &nodes[*a].value;
                    let s = g[[0, 0]] / av.len() as f64;
                    acc(*a, Array2::from_elem(av.dim(), s));
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    d.zip_mut_with(&nodes[*a].value, |d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::RowNorm(a) => {
                    let av = &nodes[*a].value;
                    let mut d = av.clone();
                    for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                        let n = node.value[[r, 0]];
                        let s = if n > 0.0 { g[[r, 0]] / n } else { 0.0 };
                        row.mapv_inplace(|x| x * s);
                    }
                    acc(*a, d);
                }
            }
        }

        let shapes = nodes
            .iter()
            .take(loss.idx + 1)
            .map(|n| n.value.dim())
            .collect();
        let grads = Grads { adj, shapes };
        if grads
            .adj
            .iter()
            .flatten()
            .any(|a| a.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::PoisonedGradient);
        }
        Ok(grads)
    }
}

/// Gradients of a loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Grads {
    adj: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Array2<f64> {
        match self.adj.get(v.idx).and_then(|a| a.as_ref()) {
            Some(a) => a.clone(),
            None => {
                let shape = self.shapes.get(v.idx).copied().unwrap_or_else(|| v.shape());
                Array2::zeros(shape)
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.dim()
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.idx].value;
        assert_eq!(v.dim(), (1, 1), "item() on non-scalar node");
        v[[0, 0]]
    }

    /// Column values of an `n × 1` node.
    pub fn column_values(&self) -> Vec<f64> {
        let nodes = self.tape.nodes.borrow();
        nodes[self.idx].value.column(0).to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.idx)
    }

    fn same_shape(&self, other: &Var<'t>, what: &str) {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a, b, "shape mismatch in {what}");
    }

    pub fn matmul(self, w: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.idx, w.idx, Op::MatMul(self.idx, w.idx), linalg::matmul)
    }

    /// Adds a `1 × m` row to every row of an `n × m` value.
    pub fn add_row(self, b: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.idx, b.idx, Op::AddRow(self.idx, b.idx), |x, r| x + r)
    }

    pub fn activate(self, act: Activation) -> Var<'t> {
        self.tape.unary(self.idx, Op::Act(self.idx, act), |x| {
            x.mapv(|v| act.apply(v))
        })
    }

    pub fn col(self, j: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::Col(self.idx, j), |x| {
            x.column(j).to_owned().insert_axis(Axis(1))
        })
    }

    /// Columns of an `n × m` node as `m` separate `n × 1` nodes.
    pub fn columns(self) -> Vec<Var<'t>> {
        (0..self.shape().1).map(|j| self.col(j)).collect()
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let (value, ng) = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.idx].value.view()).collect();
            let v = ndarray::concatenate(Axis(1), &views).expect("concat row counts");
            (v, parts.iter().any(|p| nodes[p.idx].needs_grad))
        };
        tape.push(value, Op::Concat(parts.iter().map(|p| p.idx).collect()), ng)
    }

    /// Repeats a `1 × m` row `rows` times.
    pub fn broadcast_rows(self, rows: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::Broadcast(self.idx), |x| {
            assert_eq!(x.nrows(), 1, "broadcast_rows expects a single row");
            x.broadcast((rows, x.ncols())).unwrap().to_owned()
        })
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Sum(self.idx), |x| {
            Array2::from_elem((1, 1), sequential_sum(x))
        })
    }

    /// Mean of all entries, summed sequentially then divided by the count.
    pub fn mean(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Mean(self.idx), |x| {
            Array2::from_elem((1, 1), sequential_sum(x) / x.len() as f64)
        })
    }

    /// Euclidean norm of every row, as an `n × 1` column.
    pub fn row_norm(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::RowNorm(self.idx), |x| {
            let v: Vec<f64> = x
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt())
                .collect();
            Array2::from_shape_vec((v.len(), 1), v).unwrap()
        })
    }
}

fn sequential_sum(x: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for v in x.iter() {
        s += v;
    }
    s
}

macro_rules! var_binop {
    ($tr:ident, $m:ident, $op:ident, $f:expr) => {
        impl<'t> $tr for Var<'t> {
            type Output = Var<'t>;
            fn $m(self, rhs: Var<'t>) -> Var<'t> {
                self.same_shape(&rhs, stringify!($m));
                self.tape
                    .binary(self.idx, rhs.idx, Op::$op(self.idx, rhs.idx), $f)
            }
        }
    };
}

var_binop!(Add, add, Add, |a, b| a + b);
var_binop!(Sub, sub, Sub, |a, b| a - b);
var_binop!(Mul, mul, Mul, |a, b| a * b);
var_binop!(Div, div, Div, |a, b| a / b);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Neg(self.idx), |x| -x)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Offset(self.idx), |x| x + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Offset(self.idx), |x| x - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Scale(self.idx, c), |x| x * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::DivConst(self.idx, c), |x| x / c)
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant_like(self, c: f64) -> Self {
        let shape = self.shape();
        self.tape.constant(Array2::from_elem(shape, c))
    }

    fn sin(self) -> Self {
        self.tape
            .unary(self.idx, Op::Sin(self.idx), |x| x.mapv(f64::sin))
    }

    fn cos(self) -> Self {
        self.tape
            .unary(self.idx, Op::Cos(self.idx), |x| x.mapv(f64::cos))
    }

    fn tanh(self) -> Self {
        self.tape
            .unary(self.idx, Op::Tanh(self.idx), |x| x.mapv(f64::tanh))
    }

    fn sqrt(self) -> Self {
        self.tape
            .unary(self.idx, Op::Sqrt(self.idx), |x| x.mapv(f64::sqrt))
    }

    fn signum0(self) -> Self {
        let v = self.value().mapv(sgn0);
        self.tape.constant(v)
    }

    fn lin_comb(terms: &[(Self, f64)]) -> Self {
        let tape = terms[0].0.tape;
        let (value, ng) = {
            let nodes = tape.nodes.borrow();
            let mut acc = &nodes[terms[0].0.idx].value * terms[0].1;
            for &(v, c) in &terms[1..] {
                acc.zip_mut_with(&nodes[v.idx].value, |a, &x| *a += x * c);
            }
            (acc, terms.iter().any(|(v, _)| nodes[v.idx].needs_grad))
        };
        tape.push(
            value,
            Op::LinComb(terms.iter().map(|(v, c)| (v.idx, *c)).collect()),
            ng,
        )
    }

    fn clamp(self, lo: f64, hi: f64) -> Self {
        self.tape.unary(self.idx, Op::Clamp(self.idx, lo, hi), |x| {
            x.mapv(|v| v.clamp(lo, hi))
        })
    }

    fn min_value(self) -> f64 {
        self.tape.nodes.borrow()[self.idx]
            .value
            .iter()
            .fold(f64::INFINITY, |m, &x| m.min(x))
    }

    fn all_finite(self) -> bool {
        self.tape.nodes.borrow()[self.idx]
            .value
            .iter()
            .all(|x| x.is_finite())
    }
}

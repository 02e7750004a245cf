//! Reverse-mode automatic differentiation over dense 2-D `f64` matrices.
//!
//! Every operation is recorded on a [`Tape`]. [`Tape::grad`] runs the reverse
//! sweep by recording the vector-Jacobian products as ordinary operations on
//! the same tape, so a gradient is itself a differentiable [`Var`]: calling
//! `grad` on an expression that contains gradients yields exact second-order
//! terms (Hessian-vector products), which the meta-learning objectives use.
//!
//! Binary elementwise operations broadcast `1 x n`, `m x 1` and `1 x 1`
//! operands against the other side's shape.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `a * x + b`; only the scale matters for derivatives.
    Affine(usize, f64),
    /// Broadcast a `1|r x 1|c` operand to `r x c`.
    Broadcast(usize),
    /// Sum down to a `1|r x 1|c` shape; adjoint of `Broadcast`.
    SumTo(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    /// `x^(-1/2)`
    Rsqrt(usize),
    /// Clamp into `[lo, hi]`; zero derivative outside.
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    GatherRows(usize, Rc<Vec<usize>>),
    /// Adjoint of `GatherRows`: add row `i` of the input into row `idx[i]`.
    ScatterRows(usize, Rc<Vec<usize>>),
    /// One entry per row: `out[i] = x[i, idx[i]]`.
    PickCols(usize, Rc<Vec<usize>>),
    /// Adjoint of `PickCols`.
    ScatterCols(usize, Rc<Vec<usize>>),
    SliceCols(usize, usize),
    PadCols(usize, usize),
    ConcatCols(Vec<usize>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Const => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Transpose(a) | Affine(a, ..) | Broadcast(a) | SumTo(a) | Exp(a) | Log(a) | Tanh(a)
            | Sigmoid(a) | Relu(a) | Rsqrt(a) | Clamp(a, ..) | SoftmaxRows(a) | LogSoftmaxRows(a)
            | GatherRows(a, _) | ScatterRows(a, _) | PickCols(a, _) | ScatterCols(a, _)
            | SliceCols(a, _) | PadCols(a, _) => vec![*a],
            ConcatCols(xs) => xs.clone(),
        }
    }
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

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

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A constant; gradients never flow into it.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Const)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), v))
    }

    fn value_rc(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn op(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op.clone()
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The results are recorded on the tape and can be differentiated again.
    /// Inputs that `loss` does not depend on get a zero gradient.
    pub fn grad<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        assert_eq!(loss.shape(), (1, 1), "grad needs a scalar loss");
        let last = loss.id;

        // Nodes on a path from some `wrt` input.
        let mut depends = vec![false; last + 1];
        for w in wrt {
            if w.id <= last {
                depends[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..=last {
                if !depends[i] && nodes[i].op.parents().iter().any(|&p| depends[p]) {
                    depends[i] = true;
                }
            }
        }

        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; last + 1];
        if depends[last] {
            adjoint[last] = Some(self.scalar(1.0));
        }
        for i in (0..=last).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            // Keep the accumulated adjoint for `wrt` lookups.
            adjoint[i] = Some(g);
            let op = self.op(i);
            let node = Var { tape: self, id: i };
            for (parent, contribution) in vjp(self, &op, node, g) {
                if !depends[parent] {
                    continue;
                }
                adjoint[parent] = Some(match adjoint[parent] {
                    Some(acc) => acc + contribution,
                    None => contribution,
                });
            }
        }

        wrt.iter()
            .map(|w| match adjoint.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Array2::zeros(w.shape())),
            })
            .collect()
    }
}

/// Vector-Jacobian products of `op` (whose output is `out`) for upstream `g`.
fn vjp<'t>(tape: &'t Tape, op: &Op, out: Var<'t>, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
    let v = |id: usize| Var { tape, id };
    match op {
        Op::Leaf | Op::Const => vec![],
        Op::MatMul(a, b) => vec![
            (*a, g.matmul(v(*b).t())),
            (*b, v(*a).t().matmul(g)),
        ],
        Op::Transpose(a) => vec![(*a, g.t())],
        Op::Add(a, b) => vec![(*a, g), (*b, g)],
        Op::Sub(a, b) => vec![(*a, g), (*b, -g)],
        Op::Mul(a, b) => vec![(*a, g * v(*b)), (*b, g * v(*a))],
        Op::Div(a, b) => {
            let gb = -(g * out) / v(*b);
            vec![(*a, g / v(*b)), (*b, gb)]
        }
        Op::Affine(a, scale) => vec![(*a, g.affine(*scale, 0.0))],
        Op::Broadcast(a) => {
            let (r, c) = v(*a).shape();
            vec![(*a, g.sum_to(r, c))]
        }
        Op::SumTo(a) => {
            let (r, c) = v(*a).shape();
            vec![(*a, g.broadcast_to(r, c))]
        }
        Op::Exp(a) => vec![(*a, g * out)],
        Op::Log(a) => vec![(*a, g / v(*a))],
        Op::Tanh(a) => vec![(*a, g * (out * out).affine(-1.0, 1.0))],
        Op::Sigmoid(a) => vec![(*a, g * out * out.affine(-1.0, 1.0))],
        Op::Relu(a) => {
            let mask = v(*a).value().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            vec![(*a, g * tape.constant(mask))]
        }
        Op::Rsqrt(a) => vec![(*a, g * (out * out * out).scale(-0.5))],
        Op::Clamp(a, lo, hi) => {
            let mask = v(*a)
                .value()
                .mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
            vec![(*a, g * tape.constant(mask))]
        }
        Op::SoftmaxRows(a) => {
            let dot = (g * out).sum_cols();
            vec![(*a, out * (g - dot))]
        }
        Op::LogSoftmaxRows(a) => {
            let total = g.sum_cols();
            vec![(*a, g - out.exp() * total)]
        }
        Op::GatherRows(a, idx) => {
            let rows = v(*a).shape().0;
            vec![(*a, g.scatter_rows(Rc::clone(idx), rows))]
        }
        Op::ScatterRows(a, idx) => vec![(*a, g.gather_rows_rc(Rc::clone(idx)))],
        Op::PickCols(a, idx) => {
            let cols = v(*a).shape().1;
            vec![(*a, g.scatter_cols(Rc::clone(idx), cols))]
        }
        Op::ScatterCols(a, idx) => vec![(*a, g.pick_cols_rc(Rc::clone(idx)))],
        Op::SliceCols(a, start) => {
            let cols = v(*a).shape().1;
            vec![(*a, g.pad_cols(*start, cols))]
        }
        Op::PadCols(a, start) => {
            let len = v(*a).shape().1;
            vec![(*a, g.slice_cols(*start, len))]
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            parts
                .iter()
                .map(|&p| {
                    let len = v(p).shape().1;
                    let piece = g.slice_cols(start, len);
                    start += len;
                    (p, piece)
                })
                .collect()
        }
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("shapes {a:?} and {b:?} do not broadcast")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_rc(self.id)
    }

    /// Borrow the value without cloning the `Rc`.
    pub fn value_ref(&self) -> Ref<'_, Matrix> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value_ref().dim()
    }

    /// The single entry of a `1 x 1` value.
    pub fn item(&self) -> f64 {
        let v = self.value_ref();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar");
        v[(0, 0)]
    }

    fn unary(self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Var<'t> {
        let value = f(&self.value_ref());
        self.tape.push(value, op)
    }

    fn aligned(self, other: Var<'t>) -> (Var<'t>, Var<'t>) {
        let shape = broadcast_shape(self.shape(), other.shape());
        (self.broadcast_to(shape.0, shape.1), other.broadcast_to(shape.0, shape.1))
    }

    fn binary(self, other: Var<'t>, make: fn(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let (a, b) = self.aligned(other);
        let value = {
            let av = a.value_ref();
            let bv = b.value_ref();
            Zip::from(&*av).and(&*bv).map_collect(|&x, &y| f(x, y))
        };
        self.tape.push(value, make(a.id, b.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let value = self.value_ref().dot(&*other.value_ref());
        self.tape.push(value, Op::MatMul(self.id, other.id))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |m| m.t().to_owned())
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Div, |x, y| x / y)
    }

    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(Op::Affine(self.id, scale), |m| m.mapv(|x| scale * x + shift))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.affine(k, 0.0)
    }

    pub fn broadcast_to(self, rows: usize, cols: usize) -> Var<'t> {
        let (r, c) = self.shape();
        if (r, c) == (rows, cols) {
            return self;
        }
        assert!(
            (r == rows || r == 1) && (c == cols || c == 1),
            "cannot broadcast {:?} to {:?}",
            (r, c),
            (rows, cols)
        );
        self.unary(Op::Broadcast(self.id), |m| {
            m.broadcast((rows, cols)).expect("broadcastable").to_owned()
        })
    }

    pub fn sum_to(self, rows: usize, cols: usize) -> Var<'t> {
        let (r, c) = self.shape();
        if (r, c) == (rows, cols) {
            return self;
        }
        assert!(
            (rows == r || rows == 1) && (cols == c || cols == 1),
            "cannot sum {:?} down to {:?}",
            (r, c),
            (rows, cols)
        );
        self.unary(Op::SumTo(self.id), |m| {
            let mut out = m.clone();
            if rows == 1 && r != 1 {
                out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            if cols == 1 && c != 1 {
                out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
            }
            out
        })
    }

    /// Sum of all entries as `1 x 1`.
    pub fn sum(self) -> Var<'t> {
        self.sum_to(1, 1)
    }

    /// Column sums, `1 x c`.
    pub fn sum_rows(self) -> Var<'t> {
        let c = self.shape().1;
        self.sum_to(1, c)
    }

    /// Row sums, `r x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let r = self.shape().0;
        self.sum_to(r, 1)
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |m| m.mapv(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |m| m.mapv(f64::ln))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |m| m.mapv(f64::tanh))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |m| m.mapv(|x| 1.0 / (1.0 + (-x).exp())))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |m| m.mapv(|x| x.max(0.0)))
    }

    pub fn rsqrt(self) -> Var<'t> {
        self.unary(Op::Rsqrt(self.id), |m| m.mapv(|x| 1.0 / x.sqrt()))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |m| m.mapv(|x| x.clamp(lo, hi)))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |m| {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|x| (x - max).exp());
                let z = row.sum();
                row.mapv_inplace(|x| x / z);
            }
            out
        })
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |m| {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                row.mapv_inplace(|x| x - lse);
            }
            out
        })
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        self.gather_rows_rc(Rc::new(idx.to_vec()))
    }

    fn gather_rows_rc(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let value = self.value_ref().select(Axis(0), &idx);
        self.tape.push(value, Op::GatherRows(self.id, idx))
    }

    fn scatter_rows(self, idx: Rc<Vec<usize>>, rows: usize) -> Var<'t> {
        let value = {
            let m = self.value_ref();
            let mut out = Array2::zeros((rows, m.ncols()));
            for (i, &r) in idx.iter().enumerate() {
                let mut dst = out.row_mut(r);
                dst += &m.row(i);
            }
            out
        };
        self.tape.push(value, Op::ScatterRows(self.id, idx))
    }

    /// `out[i, 0] = self[i, idx[i]]`.
    pub fn pick_cols(self, idx: &[usize]) -> Var<'t> {
        self.pick_cols_rc(Rc::new(idx.to_vec()))
    }

    fn pick_cols_rc(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let value = {
            let m = self.value_ref();
            assert_eq!(m.nrows(), idx.len(), "pick_cols needs one index per row");
            Array2::from_shape_fn((idx.len(), 1), |(i, _)| m[(i, idx[i])])
        };
        self.tape.push(value, Op::PickCols(self.id, idx))
    }

    fn scatter_cols(self, idx: Rc<Vec<usize>>, cols: usize) -> Var<'t> {
        let value = {
            let m = self.value_ref();
            let mut out = Array2::zeros((idx.len(), cols));
            for (i, &c) in idx.iter().enumerate() {
                out[(i, c)] = m[(i, 0)];
            }
            out
        };
        self.tape.push(value, Op::ScatterCols(self.id, idx))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        self.unary(Op::SliceCols(self.id, start), |m| {
            m.slice(s![.., start..start + len]).to_owned()
        })
    }

    fn pad_cols(self, start: usize, total: usize) -> Var<'t> {
        self.unary(Op::PadCols(self.id, start), |m| {
            let mut out = Array2::zeros((m.nrows(), total));
            out.slice_mut(s![.., start..start + m.ncols()]).assign(m);
            out
        })
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let value = {
            let values: Vec<Ref<'_, Matrix>> = parts.iter().map(|p| p.value_ref()).collect();
            let views: Vec<_> = values.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("row counts agree")
        };
        tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// Stack rows of several matrices with equal column counts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let ts: Vec<Var<'t>> = parts.iter().map(|p| p.t()).collect();
        Var::concat_cols(&ts).t()
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_rows(&idx)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:expr, $f:expr) => {
        impl<'t> std::ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, $op, $f)
            }
        }
    };
}

binop!(Add, add, Op::Add, |x, y| x + y);
binop!(Sub, sub, Op::Sub, |x, y| x - y);
binop!(Mul, mul, Op::Mul, |x, y| x * y);
binop!(Div, div, Op::Div, |x, y| x / y);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

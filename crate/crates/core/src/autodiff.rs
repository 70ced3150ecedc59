//! Reverse-mode automatic differentiation on a dynamic tape, with forward-mode
//! tangents that are themselves recorded on the tape.
//!
//! Every operation is evaluated eagerly and appended to the [`Tape`]. A [`Var`]
//! refers to the node holding its value and, optionally, to a second node
//! holding its tangent (directional derivative with respect to a seeded input).
//! Because tangents are built from ordinary tape nodes, a scalar loss that
//! mixes values and tangents, such as a residual containing `dŷ/dt`, can be
//! differentiated by [`Tape::backward`] like any other (forward-over-reverse).
//!
//! Buffers are dense row-major `f64` matrices. Broadcasting is limited to
//! `1×1` scalars against any shape and `1×n` row vectors against `m×n`.
//!
//! ```
//! use mlbench::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let t = tape.input(array![[0.3]]);
//! let t = tape.seed_tangent(t, array![[1.0]]).unwrap();
//! let w = tape.param(array![[0.7]]);
//! let wt = tape.matmul(t, w).unwrap();
//! let y = tape.tanh(wt);
//! // dy/dt = w (1 - tanh²(w t))
//! let dy = tape.tangent_value(y).unwrap()[[0, 0]];
//! assert!((dy - 0.7 * (1.0 - (0.21f64).tanh().powi(2))).abs() < 1e-15);
//! ```

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Tensor = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("division by an exact zero")]
    DivisionByZero,
    #[error("tape has no output")]
    NoOutput,
    #[error("backward needs a 1x1 output, got {0:?}")]
    NonScalarOutput((usize, usize)),
    #[error("node {0} is not an input leaf of this tape")]
    UnknownInput(usize),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a recorded value and (optionally) its tangent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tangent: Option<usize>,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn has_tangent(self) -> bool {
        self.tangent.is_some()
    }

    /// The tangent as a plain variable (without a tangent of its own).
    pub fn tangent(self) -> Option<Var> {
        self.tangent.map(|id| Var { id, tangent: None })
    }

    /// Same value with the tangent dropped.
    pub fn primal(self) -> Var {
        Var { id: self.id, tangent: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeafKind {
    Constant,
    Input,
    Param,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(LeafKind),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Affine { x: usize, w: usize, b: usize },
    Tanh(usize),
    Silu(usize),
    SiluPrime(usize),
    Cosh(usize),
    Sinh(usize),
    Square(usize),
    Mean(usize),
    Sum(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    ScaleShift { x: usize, scale: f64 },
    LinComb(Vec<(usize, f64)>),
    Broadcast(usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered computation record. Node order is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` if the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.adjoints.get(var.id).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, with zeros of `shape` where it does not contribute.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dim()
}

/// Result shape for elementwise binary ops under the limited broadcast rules.
fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    if a == b || b == (1, 1) || (b.0 == 1 && b.1 == a.1) {
        Ok(a)
    } else if a == (1, 1) || (a.0 == 1 && a.1 == b.1) {
        Ok(b)
    } else {
        Err(AutodiffError::ShapeMismatch { op, lhs: a, rhs: b })
    }
}

fn expand(t: &Tensor, shape: (usize, usize)) -> Tensor {
    if t.dim() == shape {
        t.clone()
    } else {
        t.broadcast(shape).expect("checked broadcast").to_owned()
    }
}

/// Sum `g` down to `shape` (inverse of broadcasting).
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.dim() == shape {
        return g;
    }
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

fn silu_second(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `mark` (a previous [`Tape::len`]).
    /// Vars created after the mark become invalid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    fn push(&mut self, op: Op, value: Tensor) -> usize {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn raw(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    fn leaf(&mut self, kind: LeafKind, value: Tensor) -> Var {
        Var { id: self.push(Op::Leaf(kind), value), tangent: None }
    }

    /// A constant that is not reported as an input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(LeafKind::Constant, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::from_elem((1, 1), value))
    }

    /// A network input (e.g. time); may receive a seeded tangent.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(LeafKind::Input, value)
    }

    /// A trainable parameter.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(LeafKind::Param, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.raw(v.id)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.raw(v.id)[[0, 0]]
    }

    pub fn tangent_value(&self, v: Var) -> Option<&Tensor> {
        v.tangent.map(|t| self.raw(t))
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(self.raw(v.id))
    }

    /// Attaches `direction` as the tangent of an input leaf. Operations
    /// recorded afterwards propagate it.
    pub fn seed_tangent(&mut self, input: Var, direction: Tensor) -> Result<Var> {
        match self.nodes.get(input.id).map(|n| &n.op) {
            Some(Op::Leaf(LeafKind::Input)) => {}
            _ => return Err(AutodiffError::UnknownInput(input.id)),
        }
        let shape = self.shape(input);
        if direction.dim() != shape {
            return Err(AutodiffError::ShapeMismatch { op: "seed_tangent", lhs: shape, rhs: direction.dim() });
        }
        let t = self.push(Op::Leaf(LeafKind::Constant), direction);
        Ok(Var { id: input.id, tangent: Some(t) })
    }

    // ---- primal-level recording (ids in, id out, no tangent handling) ----

    fn r_binary(&mut self, op: &'static str, a: usize, b: usize) -> Result<usize> {
        let (sa, sb) = (dims(self.raw(a)), dims(self.raw(b)));
        let shape = broadcast_shape(op, sa, sb)?;
        let (va, vb) = (expand(self.raw(a), shape), expand(self.raw(b), shape));
        let (value, node) = match op {
            "add" => (va + vb, Op::Add(a, b)),
            "sub" => (va - vb, Op::Sub(a, b)),
            "mul" => (va * vb, Op::Mul(a, b)),
            "div" => {
                if vb.iter().any(|&x| x == 0.0) {
                    return Err(AutodiffError::DivisionByZero);
                }
                (va / vb, Op::Div(a, b))
            }
            _ => unreachable!("unknown binary op"),
        };
        Ok(self.push(node, value))
    }

    fn r_matmul(&mut self, a: usize, b: usize) -> Result<usize> {
        let (sa, sb) = (dims(self.raw(a)), dims(self.raw(b)));
        if sa.1 != sb.0 {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let value = self.raw(a).dot(self.raw(b));
        Ok(self.push(Op::MatMul(a, b), value))
    }

    fn r_affine(&mut self, x: usize, w: usize, b: usize) -> Result<usize> {
        let (sx, sw, sb) = (dims(self.raw(x)), dims(self.raw(w)), dims(self.raw(b)));
        if sx.1 != sw.0 {
            return Err(AutodiffError::ShapeMismatch { op: "affine", lhs: sx, rhs: sw });
        }
        if sb != (1, sw.1) {
            return Err(AutodiffError::ShapeMismatch { op: "affine bias", lhs: (1, sw.1), rhs: sb });
        }
        let mut value = self.raw(x).dot(self.raw(w));
        value += self.raw(b);
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    fn r_map(&mut self, x: usize, f: fn(f64) -> f64, op: Op) -> usize {
        let value = self.raw(x).mapv(f);
        self.push(op, value)
    }

    fn r_scale_shift(&mut self, x: usize, scale: f64, shift: f64) -> usize {
        let value = self.raw(x).mapv(|v| scale * v + shift);
        self.push(Op::ScaleShift { x, scale }, value)
    }

    fn r_reduce(&mut self, x: usize, mean: bool) -> usize {
        let v = self.raw(x);
        let s = v.sum();
        let value = if mean { s / v.len() as f64 } else { s };
        let op = if mean { Op::Mean(x) } else { Op::Sum(x) };
        self.push(op, Tensor::from_elem((1, 1), value))
    }

    fn r_concat(&mut self, parts: &[usize], axis: usize) -> Result<usize> {
        if parts.is_empty() {
            return Err(AutodiffError::Invalid("concat of zero parts".into()));
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.raw(p).view()).collect();
        let value = concatenate(Axis(axis), &views).map_err(|_| AutodiffError::ShapeMismatch {
            op: "concat",
            lhs: dims(self.raw(parts[0])),
            rhs: dims(self.raw(*parts.last().unwrap())),
        })?;
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, value))
    }

    fn r_slice(&mut self, src: usize, axis: usize, start: usize, len: usize) -> Result<usize> {
        let shape = dims(self.raw(src));
        let extent = if axis == 0 { shape.0 } else { shape.1 };
        if start + len > extent || len == 0 {
            return Err(AutodiffError::ShapeMismatch { op: "slice", lhs: shape, rhs: (start, len) });
        }
        let v = self.raw(src);
        let value = if axis == 0 {
            v.slice(s![start..start + len, ..]).to_owned()
        } else {
            v.slice(s![.., start..start + len]).to_owned()
        };
        Ok(self.push(Op::Slice { src, axis, start }, value))
    }

    fn r_lin_comb(&mut self, terms: &[(usize, f64)]) -> Result<usize> {
        let (first, _) = *terms.first().ok_or_else(|| AutodiffError::Invalid("empty linear combination".into()))?;
        let shape = dims(self.raw(first));
        let mut value = Tensor::zeros(shape);
        for &(id, c) in terms {
            let v = self.raw(id);
            if v.dim() != shape {
                return Err(AutodiffError::ShapeMismatch { op: "lin_comb", lhs: shape, rhs: v.dim() });
            }
            value.scaled_add(c, v);
        }
        Ok(self.push(Op::LinComb(terms.to_vec()), value))
    }

    fn r_broadcast(&mut self, x: usize, shape: (usize, usize)) -> Result<usize> {
        let v = self.raw(x);
        if v.dim() == shape {
            return Ok(x);
        }
        let value = v
            .broadcast(shape)
            .ok_or(AutodiffError::ShapeMismatch { op: "broadcast", lhs: v.dim(), rhs: shape })?
            .to_owned();
        Ok(self.push(Op::Broadcast(x), value))
    }

    /// Tangent id broadcast to the shape of `like`.
    fn r_tangent_like(&mut self, t: usize, like: usize) -> Result<usize> {
        let shape = dims(self.raw(like));
        self.r_broadcast(t, shape)
    }

    // ---- public ops (value + tangent) ----

    fn binary(&mut self, op: &'static str, a: Var, b: Var) -> Result<Var> {
        let id = self.r_binary(op, a.id, b.id)?;
        if a.tangent.is_none() && b.tangent.is_none() {
            return Ok(Var { id, tangent: None });
        }
        let tangent = match op {
            "add" | "sub" => {
                let ta = a.tangent.map(|t| self.r_tangent_like(t, id)).transpose()?;
                let tb = b.tangent.map(|t| self.r_tangent_like(t, id)).transpose()?;
                let sign = if op == "add" { 1.0 } else { -1.0 };
                match (ta, tb) {
                    (Some(x), Some(y)) => self.r_lin_comb(&[(x, 1.0), (y, sign)])?,
                    (Some(x), None) => x,
                    (None, Some(y)) => self.r_scale_shift(y, sign, 0.0),
                    (None, None) => unreachable!(),
                }
            }
            "mul" => {
                let mut parts = Vec::new();
                if let Some(ta) = a.tangent {
                    let p = self.r_binary("mul", ta, b.id)?;
                    parts.push((self.r_tangent_like(p, id)?, 1.0));
                }
                if let Some(tb) = b.tangent {
                    let p = self.r_binary("mul", a.id, tb)?;
                    parts.push((self.r_tangent_like(p, id)?, 1.0));
                }
                if parts.len() == 1 { parts[0].0 } else { self.r_lin_comb(&parts)? }
            }
            "div" => {
                // d(a/b) = ȧ/b - (a/b) ḃ/b
                let mut parts = Vec::new();
                if let Some(ta) = a.tangent {
                    let p = self.r_binary("div", ta, b.id)?;
                    parts.push((self.r_tangent_like(p, id)?, 1.0));
                }
                if let Some(tb) = b.tangent {
                    let q = self.r_binary("mul", id, tb)?;
                    let p = self.r_binary("div", q, b.id)?;
                    parts.push((self.r_tangent_like(p, id)?, -1.0));
                }
                self.r_lin_comb(&parts)?
            }
            _ => unreachable!(),
        };
        Ok(Var { id, tangent: Some(tangent) })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b)
    }

    /// Elementwise quotient. Fails on an exact zero in the divisor.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let id = self.r_matmul(a.id, b.id)?;
        let mut parts = Vec::new();
        if let Some(ta) = a.tangent {
            parts.push((self.r_matmul(ta, b.id)?, 1.0));
        }
        if let Some(tb) = b.tangent {
            parts.push((self.r_matmul(a.id, tb)?, 1.0));
        }
        let tangent = match parts.len() {
            0 => None,
            1 => Some(parts[0].0),
            _ => Some(self.r_lin_comb(&parts)?),
        };
        Ok(Var { id, tangent })
    }

    /// `x·W + b` with `b` a `1×n` row broadcast over the batch.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let id = self.r_affine(x.id, w.id, b.id)?;
        let mut parts = Vec::new();
        if let Some(tx) = x.tangent {
            parts.push((self.r_matmul(tx, w.id)?, 1.0));
        }
        if let Some(tw) = w.tangent {
            parts.push((self.r_matmul(x.id, tw)?, 1.0));
        }
        if let Some(tb) = b.tangent {
            parts.push((self.r_tangent_like(tb, id)?, 1.0));
        }
        let tangent = match parts.len() {
            0 => None,
            1 => Some(parts[0].0),
            _ => Some(self.r_lin_comb(&parts)?),
        };
        Ok(Var { id, tangent })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let id = self.r_map(x.id, f64::tanh, Op::Tanh(x.id));
        let tangent = x.tangent.map(|tx| {
            let sq = self.r_map(id, |v| v * v, Op::Square(id));
            let d = self.r_scale_shift(sq, -1.0, 1.0);
            self.r_binary("mul", d, tx).expect("same shape")
        });
        Var { id, tangent }
    }

    /// `x·σ(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let id = self.r_map(x.id, silu, Op::Silu(x.id));
        let tangent = x.tangent.map(|tx| {
            let d = self.r_map(x.id, silu_prime, Op::SiluPrime(x.id));
            self.r_binary("mul", d, tx).expect("same shape")
        });
        Var { id, tangent }
    }

    pub fn cosh(&mut self, x: Var) -> Var {
        let id = self.r_map(x.id, f64::cosh, Op::Cosh(x.id));
        let tangent = x.tangent.map(|tx| {
            let d = self.r_map(x.id, f64::sinh, Op::Sinh(x.id));
            self.r_binary("mul", d, tx).expect("same shape")
        });
        Var { id, tangent }
    }

    pub fn sinh(&mut self, x: Var) -> Var {
        let id = self.r_map(x.id, f64::sinh, Op::Sinh(x.id));
        let tangent = x.tangent.map(|tx| {
            let d = self.r_map(x.id, f64::cosh, Op::Cosh(x.id));
            self.r_binary("mul", d, tx).expect("same shape")
        });
        Var { id, tangent }
    }

    pub fn square(&mut self, x: Var) -> Var {
        let id = self.r_map(x.id, |v| v * v, Op::Square(x.id));
        let tangent = x.tangent.map(|tx| {
            let two_x = self.r_scale_shift(x.id, 2.0, 0.0);
            self.r_binary("mul", two_x, tx).expect("same shape")
        });
        Var { id, tangent }
    }

    /// Mean over all entries, as a `1×1` value.
    pub fn mean(&mut self, x: Var) -> Var {
        let id = self.r_reduce(x.id, true);
        let tangent = x.tangent.map(|tx| self.r_reduce(tx, true));
        Var { id, tangent }
    }

    /// Sum over all entries, as a `1×1` value.
    pub fn sum(&mut self, x: Var) -> Var {
        let id = self.r_reduce(x.id, false);
        let tangent = x.tangent.map(|tx| self.r_reduce(tx, false));
        Var { id, tangent }
    }

    /// `scale·x + shift` for scalar constants.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let id = self.r_scale_shift(x.id, scale, shift);
        let tangent = x.tangent.map(|tx| self.r_scale_shift(tx, scale, 0.0));
        Var { id, tangent }
    }

    /// Concatenation along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if axis > 1 {
            return Err(AutodiffError::Invalid(format!("axis {axis} out of range")));
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let id = self.r_concat(&ids, axis)?;
        let tangent = if parts.iter().any(|p| p.tangent.is_some()) {
            let mut tids = Vec::with_capacity(parts.len());
            for p in parts {
                let t = match p.tangent {
                    Some(t) => t,
                    None => {
                        let z = Tensor::zeros(self.shape(*p));
                        self.push(Op::Leaf(LeafKind::Constant), z)
                    }
                };
                tids.push(t);
            }
            Some(self.r_concat(&tids, axis)?)
        } else {
            None
        };
        Ok(Var { id, tangent })
    }

    /// `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if axis > 1 {
            return Err(AutodiffError::Invalid(format!("axis {axis} out of range")));
        }
        let id = self.r_slice(x.id, axis, start, len)?;
        let tangent = x.tangent.map(|t| self.r_slice(t, axis, start, len)).transpose()?;
        Ok(Var { id, tangent })
    }

    /// `Σ cᵢ·xᵢ` over same-shaped operands.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let ids: Vec<(usize, f64)> = terms.iter().map(|(v, c)| (v.id, *c)).collect();
        let id = self.r_lin_comb(&ids)?;
        let tids: Vec<(usize, f64)> = terms.iter().filter_map(|(v, c)| v.tangent.map(|t| (t, *c))).collect();
        let tangent = if tids.is_empty() { None } else { Some(self.r_lin_comb(&tids)?) };
        Ok(Var { id, tangent })
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::NoOutput);
        }
        let out = output.id;
        if out >= self.nodes.len() {
            return Err(AutodiffError::NoOutput);
        }
        let shape = dims(self.raw(out));
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarOutput(shape));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; out + 1];
        adj[out] = Some(Tensor::ones((1, 1)));

        fn acc(adj: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut adj[id] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=out).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf(_)) {
                continue;
            }
            // Interior adjoints are released once propagated; leaves keep theirs.
            let Some(g) = adj[id].take() else { continue };
            match &node.op {
                Op::Leaf(_) => unreachable!(),
                &Op::Add(a, b) => {
                    acc(&mut adj, a, reduce_to(g.clone(), dims(self.raw(a))));
                    acc(&mut adj, b, reduce_to(g.clone(), dims(self.raw(b))));
                }
                &Op::Sub(a, b) => {
                    acc(&mut adj, a, reduce_to(g.clone(), dims(self.raw(a))));
                    acc(&mut adj, b, reduce_to(-&g, dims(self.raw(b))));
                }
                &Op::Mul(a, b) => {
                    let shape = g.dim();
                    let (va, vb) = (expand(self.raw(a), shape), expand(self.raw(b), shape));
                    acc(&mut adj, a, reduce_to(&g * &vb, dims(self.raw(a))));
                    acc(&mut adj, b, reduce_to(&g * &va, dims(self.raw(b))));
                }
                &Op::Div(a, b) => {
                    let shape = g.dim();
                    let vb = expand(self.raw(b), shape);
                    let ga = &g / &vb;
                    let gb = -(&ga * &node.value);
                    acc(&mut adj, a, reduce_to(ga, dims(self.raw(a))));
                    acc(&mut adj, b, reduce_to(gb, dims(self.raw(b))));
                }
                &Op::MatMul(a, b) => {
                    acc(&mut adj, a, g.dot(&self.raw(b).t()));
                    acc(&mut adj, b, self.raw(a).t().dot(&g));
                }
                &Op::Affine { x, w, b } => {
                    acc(&mut adj, x, g.dot(&self.raw(w).t()));
                    acc(&mut adj, w, self.raw(x).t().dot(&g));
                    acc(&mut adj, b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                &Op::Tanh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut adj, x, d);
                }
                &Op::Silu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.raw(x)).for_each(|d, &v| *d *= silu_prime(v));
                    acc(&mut adj, x, d);
                }
                &Op::SiluPrime(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.raw(x)).for_each(|d, &v| *d *= silu_second(v));
                    acc(&mut adj, x, d);
                }
                &Op::Cosh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.raw(x)).for_each(|d, &v| *d *= v.sinh());
                    acc(&mut adj, x, d);
                }
                &Op::Sinh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.raw(x)).for_each(|d, &v| *d *= v.cosh());
                    acc(&mut adj, x, d);
                }
                &Op::Square(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.raw(x)).for_each(|d, &v| *d *= 2.0 * v);
                    acc(&mut adj, x, d);
                }
                &Op::Mean(x) => {
                    let shape = dims(self.raw(x));
                    let n = (shape.0 * shape.1) as f64;
                    acc(&mut adj, x, Tensor::from_elem(shape, g[[0, 0]] / n));
                }
                &Op::Sum(x) => {
                    let shape = dims(self.raw(x));
                    acc(&mut adj, x, Tensor::from_elem(shape, g[[0, 0]]));
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = dims(self.raw(p));
                        let piece = if *axis == 0 {
                            g.slice(s![offset..offset + r, ..]).to_owned()
                        } else {
                            g.slice(s![.., offset..offset + c]).to_owned()
                        };
                        offset += if *axis == 0 { r } else { c };
                        acc(&mut adj, p, piece);
                    }
                }
                &Op::Slice { src, axis, start } => {
                    let mut full = Tensor::zeros(dims(self.raw(src)));
                    let (r, c) = g.dim();
                    if axis == 0 {
                        full.slice_mut(s![start..start + r, ..]).assign(&g);
                    } else {
                        full.slice_mut(s![.., start..start + c]).assign(&g);
                    }
                    acc(&mut adj, src, full);
                }
                &Op::ScaleShift { x, scale } => acc(&mut adj, x, g * scale),
                Op::LinComb(terms) => {
                    for &(t, c) in terms {
                        acc(&mut adj, t, &g * c);
                    }
                }
                &Op::Broadcast(x) => {
                    let shape = dims(self.raw(x));
                    acc(&mut adj, x, reduce_to(g, shape));
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

/// Compares tape gradients with central differences at `n_probe` random
/// parameter coordinates and returns the worst relative error,
/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(mut build: F, params: &[Tensor], h: f64, n_probe: usize, seed: u64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(AutodiffError::Invalid("finite-difference step must be positive".into()));
    }
    let mut eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().zip(params).map(|(v, p)| grads.get_or_zeros(*v, p.dim())).collect();

    let total: usize = params.iter().map(|p| p.len()).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for _ in 0..n_probe {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= params[which].len() {
            flat -= params[which].len();
            which += 1;
        }
        let cols = params[which].ncols();
        let idx = (flat / cols, flat % cols);
        let orig = params[which][idx];
        work[which][idx] = orig + h;
        let (t_plus, _, o_plus) = eval(&work)?;
        work[which][idx] = orig - h;
        let (t_minus, _, o_minus) = eval(&work)?;
        work[which][idx] = orig;
        let numeric = (t_plus.scalar_value(o_plus) - t_minus.scalar_value(o_minus)) / (2.0 * h);
        let a = analytic[which][idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

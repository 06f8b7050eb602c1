//! Real analytic functions as immutable expression DAGs.
//!
//! An [`Expr`] is built with ordinary operators and then frozen into an
//! [`AnalyticFunction`] of fixed arity. Freezing compiles the DAG into a
//! flat tape (shared subtrees evaluated once) that can be run over `f64`,
//! [`Dual`] or [`HyperDual`] numbers for values, gradients and Hessians.

mod parse;
pub mod scalar;

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;

pub use parse::parse_expr;
pub use scalar::{sinc, Dual, HyperDual, Scalar};

use crate::error::{Error, Result};
use crate::point::Point;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Sinc(Expr),
}

/// Shared handle to an expression node.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Expr {
        Expr(Arc::new(Node::Const(c)))
    }

    /// Variable `y_{index+1}` (zero-based index).
    pub fn var(index: usize) -> Expr {
        Expr(Arc::new(Node::Var(index)))
    }

    pub fn powi(&self, n: i32) -> Expr {
        Expr(Arc::new(Node::Pow(self.clone(), n)))
    }

    pub fn sin(&self) -> Expr {
        Expr(Arc::new(Node::Sin(self.clone())))
    }

    pub fn cos(&self) -> Expr {
        Expr(Arc::new(Node::Cos(self.clone())))
    }

    pub fn exp(&self) -> Expr {
        Expr(Arc::new(Node::Exp(self.clone())))
    }

    pub fn sinc(&self) -> Expr {
        Expr(Arc::new(Node::Sinc(self.clone())))
    }

    pub fn square(&self) -> Expr {
        self.powi(2)
    }

    /// Sum of squares of `vars[i] - center[i]`.
    pub fn dist_sq(vars: &[Expr], center: &[f64]) -> Expr {
        vars.iter()
            .zip(center)
            .map(|(v, &c)| if c == 0.0 { v.square() } else { (v - c).square() })
            .reduce(|a, b| a + b)
            .unwrap_or_else(|| Expr::constant(0.0))
    }

    fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn new(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    /// Largest zero-based variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut best = None;
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.ptr()) {
                continue;
            }
            match e.node() {
                Node::Const(_) => {}
                Node::Var(i) => best = Some(best.map_or(*i, |b: usize| b.max(*i))),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
                Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) | Node::Sinc(a) => {
                    stack.push(a.clone())
                }
            }
        }
        best
    }

    /// Replaces every variable `i` by `subs[i]`, preserving sharing.
    fn substitute(&self, subs: &[Expr], memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.ptr()) {
            return e.clone();
        }
        let out = match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs[*i].clone(),
            Node::Add(a, b) => Expr::new(Node::Add(a.substitute(subs, memo), b.substitute(subs, memo))),
            Node::Sub(a, b) => Expr::new(Node::Sub(a.substitute(subs, memo), b.substitute(subs, memo))),
            Node::Mul(a, b) => Expr::new(Node::Mul(a.substitute(subs, memo), b.substitute(subs, memo))),
            Node::Div(a, b) => Expr::new(Node::Div(a.substitute(subs, memo), b.substitute(subs, memo))),
            Node::Neg(a) => Expr::new(Node::Neg(a.substitute(subs, memo))),
            Node::Pow(a, n) => Expr::new(Node::Pow(a.substitute(subs, memo), *n)),
            Node::Sin(a) => Expr::new(Node::Sin(a.substitute(subs, memo))),
            Node::Cos(a) => Expr::new(Node::Cos(a.substitute(subs, memo))),
            Node::Exp(a) => Expr::new(Node::Exp(a.substitute(subs, memo))),
            Node::Sinc(a) => Expr::new(Node::Sinc(a.substitute(subs, memo))),
        };
        memo.insert(self.ptr(), out.clone());
        out
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::new(Node::$variant(self, rhs))
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::new(Node::$variant(self.clone(), rhs.clone()))
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::new(Node::$variant(self.clone(), rhs))
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::new(Node::$variant(self, rhs.clone()))
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::new(Node::$variant(self, Expr::constant(rhs)))
            }
        }
        impl $trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::new(Node::$variant(self.clone(), Expr::constant(rhs)))
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::new(Node::$variant(Expr::constant(self), rhs))
            }
        }
        impl $trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::new(Node::$variant(Expr::constant(self), rhs.clone()))
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self))
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self.clone()))
    }
}

/// Fully parenthesised infix form; [`parse_expr`] reads it back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(i) => write!(f, "y{}", i + 1),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Neg(a) => write!(f, "(-({a}))"),
            Node::Pow(a, n) => write!(f, "({a} ^ {n})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Sinc(a) => write!(f, "sinc({a})"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Pow(usize, i32),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Sinc(usize),
}

/// Topologically ordered instruction list; the last slot is the output.
#[derive(Debug)]
struct Tape {
    ops: Vec<Op>,
}

impl Tape {
    fn compile(root: &Expr) -> Tape {
        let mut slots: HashMap<*const Node, usize> = HashMap::new();
        let mut ops = Vec::new();
        // iterative post-order so deep trees do not overflow the stack
        let mut stack: Vec<(Expr, bool)> = vec![(root.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if slots.contains_key(&e.ptr()) {
                continue;
            }
            let children: Vec<&Expr> = match e.node() {
                Node::Const(_) | Node::Var(_) => vec![],
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => vec![a, b],
                Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) | Node::Sinc(a) => vec![a],
            };
            if !expanded && !children.is_empty() {
                let kids: Vec<Expr> = children.into_iter().cloned().collect();
                stack.push((e, true));
                for k in kids.into_iter().rev() {
                    stack.push((k, false));
                }
                continue;
            }
            let s = |x: &Expr| slots[&x.ptr()];
            let op = match e.node() {
                Node::Const(c) => Op::Const(*c),
                Node::Var(i) => Op::Var(*i),
                Node::Add(a, b) => Op::Add(s(a), s(b)),
                Node::Sub(a, b) => Op::Sub(s(a), s(b)),
                Node::Mul(a, b) => Op::Mul(s(a), s(b)),
                Node::Div(a, b) => Op::Div(s(a), s(b)),
                Node::Neg(a) => Op::Neg(s(a)),
                Node::Pow(a, n) => Op::Pow(s(a), *n),
                Node::Sin(a) => Op::Sin(s(a)),
                Node::Cos(a) => Op::Cos(s(a)),
                Node::Exp(a) => Op::Exp(s(a)),
                Node::Sinc(a) => Op::Sinc(s(a)),
            };
            slots.insert(e.ptr(), ops.len());
            ops.push(op);
        }
        Tape { ops }
    }

    fn run<S: Scalar>(&self, inputs: &[S], buf: &mut Vec<S>) -> Result<S> {
        buf.clear();
        buf.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => S::constant(c),
                Op::Var(i) => inputs[i],
                Op::Add(a, b) => buf[a] + buf[b],
                Op::Sub(a, b) => buf[a] - buf[b],
                Op::Mul(a, b) => buf[a] * buf[b],
                Op::Div(a, b) => {
                    if buf[b].value() == 0.0 {
                        return Err(Error::NonFinite("division by zero"));
                    }
                    buf[a] / buf[b]
                }
                Op::Neg(a) => -buf[a],
                Op::Pow(a, n) => {
                    if n < 0 && buf[a].value() == 0.0 {
                        return Err(Error::NonFinite("negative power of zero"));
                    }
                    buf[a].powi(n)
                }
                Op::Sin(a) => buf[a].sin(),
                Op::Cos(a) => buf[a].cos(),
                Op::Exp(a) => buf[a].exp(),
                Op::Sinc(a) => buf[a].sinc(),
            };
            if !v.is_finite() {
                return Err(Error::NonFinite("intermediate value"));
            }
            buf.push(v);
        }
        Ok(*buf.last().expect("tape is never empty"))
    }
}

/// Real analytic function of `arity` variables.
///
/// Cloning is cheap; the tree and its compiled tape are shared.
#[derive(Debug, Clone)]
pub struct AnalyticFunction {
    arity: usize,
    expr: Expr,
    tape: Arc<Tape>,
}

impl AnalyticFunction {
    pub fn new(arity: usize, expr: Expr) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidArgument("arity must be positive".into()));
        }
        if let Some(i) = expr.max_var() {
            if i >= arity {
                return Err(Error::VariableOutOfRange { index: i + 1, arity });
            }
        }
        let tape = Arc::new(Tape::compile(&expr));
        Ok(AnalyticFunction { arity, expr, tape })
    }

    /// Parses the infix syntax accepted by [`parse_expr`].
    pub fn parse(arity: usize, src: &str) -> Result<Self> {
        AnalyticFunction::new(arity, parse_expr(src)?)
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        AnalyticFunction::new(arity, Expr::constant(c)).expect("constant is always valid")
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Number of distinct nodes after sharing.
    pub fn tape_len(&self) -> usize {
        self.tape.ops.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arity {
            return Err(Error::Arity { expected: self.arity, got: x.len() });
        }
        Ok(())
    }

    pub fn eval(&self, x: &Point) -> Result<f64> {
        self.eval_slice(x.coords())
    }

    pub fn eval_slice(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let mut buf = Vec::new();
        self.tape.run(x, &mut buf)
    }

    /// Value and gradient in one call (one dual pass per coordinate).
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let mut buf = Vec::new();
        let mut inputs: Vec<Dual> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let mut grad = vec![0.0; self.arity];
        let mut value = 0.0;
        for j in 0..self.arity {
            inputs[j].dot = 1.0;
            let out = self.tape.run(&inputs, &mut buf)?;
            inputs[j].dot = 0.0;
            grad[j] = out.dot;
            value = out.val;
        }
        Ok((value, grad))
    }

    /// Partial derivatives for the listed coordinates only.
    pub fn partials(&self, x: &[f64], indices: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let mut buf = Vec::new();
        let mut inputs: Vec<Dual> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let mut out_grad = Vec::with_capacity(indices.len());
        let mut value = None;
        for &j in indices {
            inputs[j].dot = 1.0;
            let out = self.tape.run(&inputs, &mut buf)?;
            inputs[j].dot = 0.0;
            out_grad.push(out.dot);
            value = Some(out.val);
        }
        let value = match value {
            Some(v) => v,
            None => self.tape.run(x, &mut Vec::new())?,
        };
        Ok((value, out_grad))
    }

    pub fn gradient(&self, x: &Point) -> Result<Point> {
        Ok(Point::new(self.value_and_gradient(x.coords())?.1))
    }

    pub fn grad_norm(&self, x: &Point) -> Result<f64> {
        Ok(self.gradient(x)?.norm())
    }

    /// Exact Hessian by hyper-dual (forward-over-forward) passes, mirrored so
    /// the result is symmetric bit for bit.
    pub fn hessian(&self, x: &Point) -> Result<DMatrix<f64>> {
        let all: Vec<usize> = (0..self.arity).collect();
        self.hessian_block(x.coords(), &all)
    }

    /// Hessian restricted to the rows/columns in `indices`.
    pub fn hessian_block(&self, x: &[f64], indices: &[usize]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let k = indices.len();
        let mut h = DMatrix::zeros(k, k);
        let mut buf = Vec::new();
        let mut inputs: Vec<HyperDual> = x.iter().map(|&v| HyperDual::new(v, 0.0, 0.0, 0.0)).collect();
        for (r, &i) in indices.iter().enumerate() {
            for (c, &j) in indices.iter().enumerate().skip(r) {
                inputs[i].b = 1.0;
                inputs[j].c = 1.0;
                let out = self.tape.run(&inputs, &mut buf)?;
                inputs[i].b = 0.0;
                inputs[j].c = 0.0;
                h[(r, c)] = out.d;
                h[(c, r)] = out.d;
            }
        }
        Ok(h)
    }

    /// `f ∘ h`.
    pub fn compose(&self, h: &AnalyticMap) -> Result<AnalyticFunction> {
        if h.dim() != self.arity {
            return Err(Error::Arity { expected: self.arity, got: h.dim() });
        }
        let subs: Vec<Expr> = h.components.iter().map(|c| c.expr.clone()).collect();
        let mut memo = HashMap::new();
        AnalyticFunction::new(h.dim(), self.expr.substitute(&subs, &mut memo))
    }

    /// `alpha·self + beta·other`.
    pub fn linear_combination(&self, alpha: f64, other: &AnalyticFunction, beta: f64) -> Result<Self> {
        if other.arity != self.arity {
            return Err(Error::Arity { expected: self.arity, got: other.arity });
        }
        AnalyticFunction::new(self.arity, alpha * &self.expr + beta * &other.expr)
    }
}

impl fmt::Display for AnalyticFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

/// Analytic self-map of `R^M`, one component function per coordinate.
#[derive(Debug, Clone)]
pub struct AnalyticMap {
    components: Vec<AnalyticFunction>,
}

impl AnalyticMap {
    pub fn new(components: Vec<AnalyticFunction>) -> Result<Self> {
        let m = components.len();
        if m == 0 {
            return Err(Error::InvalidArgument("map needs at least one component".into()));
        }
        if let Some(bad) = components.iter().find(|c| c.arity() != m) {
            return Err(Error::Arity { expected: m, got: bad.arity() });
        }
        Ok(AnalyticMap { components })
    }

    pub fn identity(dim: usize) -> Self {
        let components = (0..dim).map(|i| AnalyticFunction::new(dim, Expr::var(i)).expect("valid variable")).collect();
        AnalyticMap { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[AnalyticFunction] {
        &self.components
    }

    pub fn apply(&self, x: &Point) -> Result<Point> {
        let v = self.components.iter().map(|c| c.eval(x)).collect::<Result<Vec<f64>>>()?;
        Ok(Point::new(v))
    }
}

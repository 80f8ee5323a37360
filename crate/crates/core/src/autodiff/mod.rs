//! Scalar reverse-mode differentiation on an explicit tape.
//!
//! Every value is an `f64` node; complex quantities are recorded as re/im
//! pairs (see [`algebra`]). The tape is append-only: recording an operation
//! evaluates it eagerly and stores the operands, and [`Tape::backward`]
//! replays the tape once in reverse to accumulate adjoints. `dot` and `sum`
//! exist as fused n-ary nodes so that dense layers do not explode the tape.
//!
//! Conventions baked into the derivatives:
//!
//! * `abs` values are exact, but the derivative is smoothed to
//!   `x / sqrt(x^2 + EPS^2)` so recorded graphs stay usable at the kink;
//! * `relu`/`step`/`clamp` take subgradient 0 at their corners and outside
//!   the active interval;
//! * there is no higher-order support: adjoints are plain numbers, not
//!   nodes.

pub mod adam;
pub mod algebra;
pub mod check;

pub use adam::AdamState;
pub use algebra::{Algebra, Cx, Reals};
pub use check::grad_check;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Smoothing constant for the `abs` derivative.
pub const ABS_EPS: f64 = 1e-12;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Opaque handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: u32,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Sqrt(u32),
    Log(u32),
    Exp(u32),
    Square(u32),
    Abs(u32),
    Sin(u32),
    Cos(u32),
    Tanh(u32),
    Elu(u32),
    Relu(u32),
    /// The derivative is zero everywhere, so backward never follows this
    /// edge; the operand is kept so recorded graphs stay self-describing.
    #[allow(dead_code)]
    Step(u32),
    Clamp { x: u32, lo: f64, hi: f64 },
    /// Sum of `len` operands stored in `args[off..off+len]`.
    Sum { off: u32, len: u32 },
    /// Inner product of `len` pairs stored interleaved in
    /// `args[off..off+2*len]`.
    Dot { off: u32, len: u32 },
}

/// Operation identifiers for the checked [`Tape::record`] entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Log,
    Exp,
    Square,
    Abs,
    Sin,
    Cos,
    Tanh,
    Elu,
    Relu,
    Step,
    Sum,
    Dot,
}

/// Append-only computation tape.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    args: Vec<u32>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            vals: Vec::new(),
            args: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node, val: f64) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(node);
        self.vals.push(val);
        Var { tape: self.id, idx }
    }

    fn own(&self, v: Var) -> u32 {
        assert_eq!(v.tape, self.id, "operand belongs to a different tape");
        v.idx
    }

    /// Differentiable input.
    pub fn leaf(&mut self, v: f64) -> Var {
        self.push(Node::Leaf, v)
    }

    /// Recorded constant; adjoints still flow to it but callers treat it as
    /// fixed data.
    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Node::Const, v)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.vals[self.own(v) as usize]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        let val = self.vals[ia as usize] + self.vals[ib as usize];
        self.push(Node::Add(ia, ib), val)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        let val = self.vals[ia as usize] - self.vals[ib as usize];
        self.push(Node::Sub(ia, ib), val)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        let val = self.vals[ia as usize] * self.vals[ib as usize];
        self.push(Node::Mul(ia, ib), val)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        let val = self.vals[ia as usize] / self.vals[ib as usize];
        self.push(Node::Div(ia, ib), val)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = -self.vals[ia as usize];
        self.push(Node::Neg(ia), val)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let x = self.vals[ia as usize];
        assert!(x >= 0.0, "sqrt of negative value {x}");
        self.push(Node::Sqrt(ia), x.sqrt())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let x = self.vals[ia as usize];
        assert!(x > 0.0, "log of non-positive value {x}");
        self.push(Node::Log(ia), x.ln())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].exp();
        self.push(Node::Exp(ia), val)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let x = self.vals[ia as usize];
        self.push(Node::Square(ia), x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].abs();
        self.push(Node::Abs(ia), val)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].sin();
        self.push(Node::Sin(ia), val)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].cos();
        self.push(Node::Cos(ia), val)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].tanh();
        self.push(Node::Tanh(ia), val)
    }

    /// Exponential linear unit with unit slope: `x` for `x > 0`,
    /// `exp(x) - 1` otherwise. The derivative is continuous at 0.
    pub fn elu(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let x = self.vals[ia as usize];
        let val = if x > 0.0 { x } else { x.exp() - 1.0 };
        self.push(Node::Elu(ia), val)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].max(0.0);
        self.push(Node::Relu(ia), val)
    }

    /// Heaviside step (1 for positive input). Derivative is 0 everywhere.
    pub fn step(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let val = if self.vals[ia as usize] > 0.0 { 1.0 } else { 0.0 };
        self.push(Node::Step(ia), val)
    }

    /// Clamp into `[lo, hi]`; derivative 1 strictly inside, 0 otherwise.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let ia = self.own(a);
        let val = self.vals[ia as usize].clamp(lo, hi);
        self.push(Node::Clamp { x: ia, lo, hi }, val)
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let off = self.args.len() as u32;
        let mut val = 0.0;
        for v in xs {
            let i = self.own(*v);
            self.args.push(i);
            val += self.vals[i as usize];
        }
        self.push(
            Node::Sum {
                off,
                len: xs.len() as u32,
            },
            val,
        )
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let off = self.args.len() as u32;
        let mut val = 0.0;
        for (x, y) in a.iter().zip(b) {
            let (ix, iy) = (self.own(*x), self.own(*y));
            self.args.push(ix);
            self.args.push(iy);
            val += self.vals[ix as usize] * self.vals[iy as usize];
        }
        self.push(
            Node::Dot {
                off,
                len: a.len() as u32,
            },
            val,
        )
    }

    /// Checked recording entry point. Verifies tape ownership, arity and the
    /// real domain of `sqrt`/`log`; for `Dot` the inputs are the interleaved
    /// pairs.
    pub fn record(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.tape != self.id {
                return Err(Error::TapeMismatch);
            }
        }
        let arity_ok = match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => inputs.len() == 2,
            OpKind::Sum => true,
            OpKind::Dot => inputs.len() % 2 == 0,
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::InvalidParameter(format!(
                "wrong arity {} for {op:?}",
                inputs.len()
            )));
        }
        match op {
            OpKind::Sqrt => {
                let x = self.value(inputs[0]);
                if x < 0.0 {
                    return Err(Error::TapeDomain { op: "sqrt", value: x });
                }
            }
            OpKind::Log => {
                let x = self.value(inputs[0]);
                if x <= 0.0 {
                    return Err(Error::TapeDomain { op: "log", value: x });
                }
            }
            _ => {}
        }
        Ok(match op {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::Div => self.div(inputs[0], inputs[1]),
            OpKind::Neg => self.neg(inputs[0]),
            OpKind::Sqrt => self.sqrt(inputs[0]),
            OpKind::Log => self.ln(inputs[0]),
            OpKind::Exp => self.exp(inputs[0]),
            OpKind::Square => self.square(inputs[0]),
            OpKind::Abs => self.abs(inputs[0]),
            OpKind::Sin => self.sin(inputs[0]),
            OpKind::Cos => self.cos(inputs[0]),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::Elu => self.elu(inputs[0]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Step => self.step(inputs[0]),
            OpKind::Sum => self.sum(inputs),
            OpKind::Dot => {
                let n = inputs.len() / 2;
                let a: Vec<Var> = (0..n).map(|i| inputs[2 * i]).collect();
                let b: Vec<Var> = (0..n).map(|i| inputs[2 * i + 1]).collect();
                self.dot(&a, &b)
            }
        })
    }

    /// Reverse sweep from `out`. Repeated calls return identical results;
    /// the adjoint buffer is rebuilt from scratch each time.
    pub fn backward(&self, out: Var) -> Gradients {
        let start = self.own(out) as usize;
        let mut adj = vec![0.0; self.nodes.len()];
        adj[start] = 1.0;
        for i in (0..=start).rev() {
            let w = adj[i];
            if w == 0.0 {
                continue;
            }
            match self.nodes[i] {
                Node::Leaf | Node::Const => {}
                Node::Add(a, b) => {
                    adj[a as usize] += w;
                    adj[b as usize] += w;
                }
                Node::Sub(a, b) => {
                    adj[a as usize] += w;
                    adj[b as usize] -= w;
                }
                Node::Mul(a, b) => {
                    adj[a as usize] += w * self.vals[b as usize];
                    adj[b as usize] += w * self.vals[a as usize];
                }
                Node::Div(a, b) => {
                    let bv = self.vals[b as usize];
                    adj[a as usize] += w / bv;
                    adj[b as usize] -= w * self.vals[i] / bv;
                }
                Node::Neg(a) => adj[a as usize] -= w,
                Node::Sqrt(a) => {
                    adj[a as usize] += w * 0.5 / self.vals[i];
                }
                Node::Log(a) => {
                    adj[a as usize] += w / self.vals[a as usize];
                }
                Node::Exp(a) => {
                    adj[a as usize] += w * self.vals[i];
                }
                Node::Square(a) => {
                    adj[a as usize] += w * 2.0 * self.vals[a as usize];
                }
                Node::Abs(a) => {
                    let x = self.vals[a as usize];
                    adj[a as usize] += w * x / (x * x + ABS_EPS * ABS_EPS).sqrt();
                }
                Node::Sin(a) => {
                    adj[a as usize] += w * self.vals[a as usize].cos();
                }
                Node::Cos(a) => {
                    adj[a as usize] -= w * self.vals[a as usize].sin();
                }
                Node::Tanh(a) => {
                    let t = self.vals[i];
                    adj[a as usize] += w * (1.0 - t * t);
                }
                Node::Elu(a) => {
                    let x = self.vals[a as usize];
                    adj[a as usize] += if x > 0.0 { w } else { w * x.exp() };
                }
                Node::Relu(a) => {
                    if self.vals[a as usize] > 0.0 {
                        adj[a as usize] += w;
                    }
                }
                Node::Step(_) => {}
                Node::Clamp { x, lo, hi } => {
                    let v = self.vals[x as usize];
                    if v > lo && v < hi {
                        adj[x as usize] += w;
                    }
                }
                Node::Sum { off, len } => {
                    for j in off..off + len {
                        adj[self.args[j as usize] as usize] += w;
                    }
                }
                Node::Dot { off, len } => {
                    for j in 0..len {
                        let a = self.args[(off + 2 * j) as usize] as usize;
                        let b = self.args[(off + 2 * j + 1) as usize] as usize;
                        adj[a] += w * self.vals[b];
                        adj[b] += w * self.vals[a];
                    }
                }
            }
        }
        Gradients { tape: self.id, adj }
    }
}

/// Adjoints produced by one backward sweep.
pub struct Gradients {
    tape: u64,
    adj: Vec<f64>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> f64 {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        self.adj[v.idx as usize]
    }

    pub fn get_all(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|v| self.get(*v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(3.0);
        let y = t.square(x);
        let g = t.backward(y);
        assert_eq!(g.get(x), 6.0);
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(2.0);
        let y = t.leaf(3.0);
        let z = t.mul(x, y);
        let g = t.backward(z);
        assert_eq!(g.get(x), 3.0);
        assert_eq!(g.get(y), 2.0);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.tanh(x);
        let g = t.backward(y);
        assert_eq!(g.get(x), 1.0);
    }

    #[test]
    fn elu_is_continuous_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.elu(x);
        assert_eq!(t.value(y), 0.0);
        let g = t.backward(y);
        assert_eq!(g.get(x), 1.0);
    }

    #[test]
    fn modulus_squared_pair_gradient() {
        // |a + jb|^2 = a^2 + b^2, gradient (2a, 2b).
        let mut t = Tape::new();
        let a = t.leaf(1.5);
        let b = t.leaf(-2.0);
        let aa = t.square(a);
        let bb = t.square(b);
        let y = t.add(aa, bb);
        let g = t.backward(y);
        assert_eq!(g.get(a), 3.0);
        assert_eq!(g.get(b), -4.0);
    }

    #[test]
    fn backward_is_idempotent() {
        let mut t = Tape::new();
        let x = t.leaf(0.7);
        let s = t.sin(x);
        let e = t.exp(s);
        let g1 = t.backward(e);
        let g2 = t.backward(e);
        assert_eq!(g1.get(x).to_bits(), g2.get(x).to_bits());
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let build = || {
            let mut t = Tape::new();
            let x = t.leaf(0.3);
            let y = t.leaf(1.9);
            let p = t.mul(x, y);
            let q = t.sqrt(y);
            let r = t.div(p, q);
            let s = t.tanh(r);
            let g = t.backward(s);
            (t.value(s).to_bits(), g.get(x).to_bits(), g.get(y).to_bits())
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn dot_and_sum_adjoints() {
        let mut t = Tape::new();
        let a: Vec<Var> = [1.0, 2.0, 3.0].iter().map(|v| t.leaf(*v)).collect();
        let b: Vec<Var> = [4.0, 5.0, 6.0].iter().map(|v| t.leaf(*v)).collect();
        let d = t.dot(&a, &b);
        assert_eq!(t.value(d), 32.0);
        let s = t.sum(&a);
        let y = t.mul(d, s);
        let g = t.backward(y);
        // y = dot * sum; d(dot)/da_i = b_i, d(sum)/da_i = 1.
        let sv = 6.0;
        let dv = 32.0;
        for (i, ai) in a.iter().enumerate() {
            let expect = sv * [4.0, 5.0, 6.0][i] + dv;
            assert!((g.get(*ai) - expect).abs() < 1e-12);
        }
        for (i, bi) in b.iter().enumerate() {
            let expect = sv * [1.0, 2.0, 3.0][i];
            assert!((g.get(*bi) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_subgradient_convention() {
        for (x, expect) in [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0), (-2.0, 0.0), (3.0, 0.0)] {
            let mut t = Tape::new();
            let v = t.leaf(x);
            let c = t.clamp(v, 0.0, 1.0);
            let g = t.backward(c);
            assert_eq!(g.get(v), expect, "clamp'({x})");
        }
    }

    #[test]
    fn abs_gradient_is_smoothed_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.abs(x);
        assert_eq!(t.value(y), 0.0);
        let g = t.backward(y);
        assert_eq!(g.get(x), 0.0);
        let mut t = Tape::new();
        let x = t.leaf(-2.0);
        let y = t.abs(x);
        assert_eq!(t.value(y), 2.0);
        let g = t.backward(y);
        assert!((g.get(x) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_tape_mixing_is_an_error() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(1.0);
        let b = t2.leaf(2.0);
        match t1.record(OpKind::Add, &[a, b]) {
            Err(crate::Error::TapeMismatch) => {}
            other => panic!("expected tape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn record_checks_domains() {
        let mut t = Tape::new();
        let neg = t.leaf(-1.0);
        assert!(matches!(
            t.record(OpKind::Sqrt, &[neg]),
            Err(crate::Error::TapeDomain { op: "sqrt", .. })
        ));
        assert!(matches!(
            t.record(OpKind::Log, &[neg]),
            Err(crate::Error::TapeDomain { op: "log", .. })
        ));
        let zero = t.leaf(0.0);
        assert!(t.record(OpKind::Log, &[zero]).is_err());
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        type Rec = fn(&mut Tape, Var) -> Var;
        let cases: Vec<(Rec, Vec<f64>)> = vec![
            (|t, x| t.sqrt(x), vec![0.3, 1.7, 4.0]),
            (|t, x| t.ln(x), vec![0.2, 1.0, 9.0]),
            (|t, x| t.exp(x), vec![-1.0, 0.0, 1.3]),
            (|t, x| t.square(x), vec![-2.0, 0.4]),
            (|t, x| t.sin(x), vec![-1.0, 0.5, 2.0]),
            (|t, x| t.cos(x), vec![-1.0, 0.5, 2.0]),
            (|t, x| t.tanh(x), vec![-1.5, 0.2, 1.0]),
            (|t, x| t.elu(x), vec![-1.5, -0.2, 0.7]),
            (|t, x| t.relu(x), vec![-1.0, 0.8]),
            (|t, x| t.abs(x), vec![-1.0, 2.0]),
            (|t, x| t.neg(x), vec![-0.4, 1.1]),
        ];
        let h = 1e-6;
        for (f, points) in cases {
            for x0 in points {
                let mut t = Tape::new();
                let x = t.leaf(x0);
                let y = f(&mut t, x);
                let g = t.backward(y).get(x);
                let eval = |x0: f64| {
                    let mut t = Tape::new();
                    let x = t.leaf(x0);
                    let y = f(&mut t, x);
                    t.value(y)
                };
                let fd = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
                assert!(
                    (g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1.0),
                    "autodiff {g} vs fd {fd} at {x0}"
                );
            }
        }
    }

    #[test]
    fn composite_chain_matches_finite_differences() {
        // f(x, y) = tanh(x * y) + sin(x) / exp(y) + sqrt(x^2 + y^2)
        let f = |t: &mut Tape, v: &[Var]| {
            let (x, y) = (v[0], v[1]);
            let xy = t.mul(x, y);
            let a = t.tanh(xy);
            let sx = t.sin(x);
            let ey = t.exp(y);
            let b = t.div(sx, ey);
            let x2 = t.square(x);
            let y2 = t.square(y);
            let s = t.add(x2, y2);
            let c = t.sqrt(s);
            let ab = t.add(a, b);
            t.add(ab, c)
        };
        let err = grad_check(f, &[0.8, -0.6], 1e-6).unwrap();
        assert!(err < 1e-8, "max rel err {err}");
    }
}

//! Evaluation backends: the same expression-building code runs either on
//! plain numbers ([`Reals`]) or on a [`Tape`] that records every operation.
//! Model formulas written against [`Algebra`] are therefore guaranteed to
//! compute identical values in both modes, which is what lets the learned
//! optimizer train on exactly the arithmetic its inference path executes.

use super::{Tape, Var};

pub trait Algebra {
    type V: Copy + std::fmt::Debug;

    /// Embed a constant.
    fn lit(&mut self, x: f64) -> Self::V;
    /// Current numeric value.
    fn val(&self, v: Self::V) -> f64;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn neg(&mut self, a: Self::V) -> Self::V;
    fn sqrt(&mut self, a: Self::V) -> Self::V;
    fn ln(&mut self, a: Self::V) -> Self::V;
    fn exp(&mut self, a: Self::V) -> Self::V;
    fn square(&mut self, a: Self::V) -> Self::V;
    fn abs(&mut self, a: Self::V) -> Self::V;
    fn sin(&mut self, a: Self::V) -> Self::V;
    fn cos(&mut self, a: Self::V) -> Self::V;
    fn tanh(&mut self, a: Self::V) -> Self::V;
    fn elu(&mut self, a: Self::V) -> Self::V;
    fn relu(&mut self, a: Self::V) -> Self::V;
    /// Heaviside step, treated as locally constant by differentiation.
    fn step(&mut self, a: Self::V) -> Self::V;
    fn clamp(&mut self, a: Self::V, lo: f64, hi: f64) -> Self::V;
    fn dot(&mut self, a: &[Self::V], b: &[Self::V]) -> Self::V;
    fn sum(&mut self, xs: &[Self::V]) -> Self::V;

    fn scale(&mut self, a: Self::V, c: f64) -> Self::V {
        let c = self.lit(c);
        self.mul(a, c)
    }

    fn add_const(&mut self, a: Self::V, c: f64) -> Self::V {
        let c = self.lit(c);
        self.add(a, c)
    }

    fn log2(&mut self, a: Self::V) -> Self::V {
        let l = self.ln(a);
        self.scale(l, std::f64::consts::LOG2_E)
    }
}

/// Plain `f64` evaluation.
pub struct Reals;

impl Algebra for Reals {
    type V = f64;

    fn lit(&mut self, x: f64) -> f64 {
        x
    }

    fn val(&self, v: f64) -> f64 {
        v
    }

    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }

    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }

    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }

    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }

    fn neg(&mut self, a: f64) -> f64 {
        -a
    }

    fn sqrt(&mut self, a: f64) -> f64 {
        a.sqrt()
    }

    fn ln(&mut self, a: f64) -> f64 {
        a.ln()
    }

    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }

    fn square(&mut self, a: f64) -> f64 {
        a * a
    }

    fn abs(&mut self, a: f64) -> f64 {
        a.abs()
    }

    fn sin(&mut self, a: f64) -> f64 {
        a.sin()
    }

    fn cos(&mut self, a: f64) -> f64 {
        a.cos()
    }

    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }

    fn elu(&mut self, a: f64) -> f64 {
        if a > 0.0 {
            a
        } else {
            a.exp() - 1.0
        }
    }

    fn relu(&mut self, a: f64) -> f64 {
        a.max(0.0)
    }

    fn step(&mut self, a: f64) -> f64 {
        if a > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn clamp(&mut self, a: f64, lo: f64, hi: f64) -> f64 {
        a.clamp(lo, hi)
    }

    fn dot(&mut self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn sum(&mut self, xs: &[f64]) -> f64 {
        xs.iter().sum()
    }
}

impl Algebra for Tape {
    type V = Var;

    fn lit(&mut self, x: f64) -> Var {
        self.constant(x)
    }

    fn val(&self, v: Var) -> f64 {
        self.value(v)
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        Tape::add(self, a, b)
    }

    fn sub(&mut self, a: Var, b: Var) -> Var {
        Tape::sub(self, a, b)
    }

    fn mul(&mut self, a: Var, b: Var) -> Var {
        Tape::mul(self, a, b)
    }

    fn div(&mut self, a: Var, b: Var) -> Var {
        Tape::div(self, a, b)
    }

    fn neg(&mut self, a: Var) -> Var {
        Tape::neg(self, a)
    }

    fn sqrt(&mut self, a: Var) -> Var {
        Tape::sqrt(self, a)
    }

    fn ln(&mut self, a: Var) -> Var {
        Tape::ln(self, a)
    }

    fn exp(&mut self, a: Var) -> Var {
        Tape::exp(self, a)
    }

    fn square(&mut self, a: Var) -> Var {
        Tape::square(self, a)
    }

    fn abs(&mut self, a: Var) -> Var {
        Tape::abs(self, a)
    }

    fn sin(&mut self, a: Var) -> Var {
        Tape::sin(self, a)
    }

    fn cos(&mut self, a: Var) -> Var {
        Tape::cos(self, a)
    }

    fn tanh(&mut self, a: Var) -> Var {
        Tape::tanh(self, a)
    }

    fn elu(&mut self, a: Var) -> Var {
        Tape::elu(self, a)
    }

    fn relu(&mut self, a: Var) -> Var {
        Tape::relu(self, a)
    }

    fn step(&mut self, a: Var) -> Var {
        Tape::step(self, a)
    }

    fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        Tape::clamp(self, a, lo, hi)
    }

    fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        Tape::dot(self, a, b)
    }

    fn sum(&mut self, xs: &[Var]) -> Var {
        Tape::sum(self, xs)
    }
}

/// Complex value as a re/im pair over any backend.
#[derive(Debug, Clone, Copy)]
pub struct Cx<V> {
    pub re: V,
    pub im: V,
}

impl<V> Cx<V> {
    pub fn new(re: V, im: V) -> Self {
        Cx { re, im }
    }
}

pub fn c_lit<A: Algebra>(alg: &mut A, re: f64, im: f64) -> Cx<A::V> {
    Cx {
        re: alg.lit(re),
        im: alg.lit(im),
    }
}

pub fn c_add<A: Algebra>(alg: &mut A, a: Cx<A::V>, b: Cx<A::V>) -> Cx<A::V> {
    Cx {
        re: alg.add(a.re, b.re),
        im: alg.add(a.im, b.im),
    }
}

pub fn c_mul<A: Algebra>(alg: &mut A, a: Cx<A::V>, b: Cx<A::V>) -> Cx<A::V> {
    let rr = alg.mul(a.re, b.re);
    let ii = alg.mul(a.im, b.im);
    let ri = alg.mul(a.re, b.im);
    let ir = alg.mul(a.im, b.re);
    Cx {
        re: alg.sub(rr, ii),
        im: alg.add(ri, ir),
    }
}

pub fn c_conj<A: Algebra>(alg: &mut A, a: Cx<A::V>) -> Cx<A::V> {
    Cx {
        re: a.re,
        im: alg.neg(a.im),
    }
}

pub fn c_scale<A: Algebra>(alg: &mut A, a: Cx<A::V>, s: A::V) -> Cx<A::V> {
    Cx {
        re: alg.mul(a.re, s),
        im: alg.mul(a.im, s),
    }
}

/// `sum_i conj(h_i) * p_i` via four fused inner products.
pub fn c_dot_conj<A: Algebra>(alg: &mut A, h: &[Cx<A::V>], p: &[Cx<A::V>]) -> Cx<A::V> {
    debug_assert_eq!(h.len(), p.len());
    let hr: Vec<A::V> = h.iter().map(|c| c.re).collect();
    let hi: Vec<A::V> = h.iter().map(|c| c.im).collect();
    let pr: Vec<A::V> = p.iter().map(|c| c.re).collect();
    let pi: Vec<A::V> = p.iter().map(|c| c.im).collect();
    let rr = alg.dot(&hr, &pr);
    let ii = alg.dot(&hi, &pi);
    let ri = alg.dot(&hr, &pi);
    let ir = alg.dot(&hi, &pr);
    Cx {
        re: alg.add(rr, ii),
        im: alg.sub(ri, ir),
    }
}

/// `|a|^2` as `re^2 + im^2`.
pub fn c_norm_sqr<A: Algebra>(alg: &mut A, a: Cx<A::V>) -> A::V {
    let rr = alg.square(a.re);
    let ii = alg.square(a.im);
    alg.add(rr, ii)
}

/// `Re(conj(a) * b)`.
pub fn c_re_conj_mul<A: Algebra>(alg: &mut A, a: Cx<A::V>, b: Cx<A::V>) -> A::V {
    let rr = alg.mul(a.re, b.re);
    let ii = alg.mul(a.im, b.im);
    alg.add(rr, ii)
}

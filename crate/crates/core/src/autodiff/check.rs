//! Central-difference verification of recorded gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Record `f` at `point`, backpropagate, and compare every partial against a
/// central difference with half-width `step`. Returns the largest relative
/// error, where the denominator is floored at 1e-6 to keep near-zero
/// gradients from blowing the ratio up.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|x| tape.leaf(*x)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);

    let eval = |x: &[f64]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = x.iter().map(|v| t.leaf(*v)).collect();
        let o = f(&mut t, &vs);
        t.value(o)
    };

    let mut worst: f64 = 0.0;
    let mut shifted = point.to_vec();
    for i in 0..point.len() {
        shifted[i] = point[i] + step;
        let up = eval(&shifted);
        shifted[i] = point[i] - step;
        let down = eval(&shifted);
        shifted[i] = point[i];
        let fd = (up - down) / (2.0 * step);
        let g = grads.get(vars[i]);
        let denom = g.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((g - fd).abs() / denom);
    }
    Ok(worst)
}

/// Central difference of a plain closure along one coordinate.
pub fn central_diff<F>(f: F, point: &[f64], i: usize, step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    x[i] = point[i] + step;
    let up = f(&x);
    x[i] = point[i] - step;
    let down = f(&x);
    (up - down) / (2.0 * step)
}

/// Relative error with a floored denominator, the convention used across the
/// gradient test suites.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

//! Fractional-programming reformulation of the weighted sum rate.
//!
//! The rate of user `m` is replaced by a two-stage surrogate. First the log
//! is decoupled with a per-user auxiliary `gamma`:
//!
//! ```text
//! log2(1+sinr) = max_{gamma >= 0} log2(1+gamma) - gamma/ln2
//!                + (1+gamma) sinr / (ln2 (1+sinr))
//! ```
//!
//! then the remaining fraction `sinr/(1+sinr) = G/(G+I+noise)` is decoupled
//! with a second auxiliary `y`:
//!
//! ```text
//! G/(G+I+noise) = max_{y >= 0} 2 y sqrt(G) - y^2 (G+I+noise)
//! ```
//!
//! Both maxima are attained in closed form ([`update_auxiliaries`]). With
//! the auxiliaries frozen the objective becomes a difference of a linear and
//! a convex-quadratic term in the beamforming coefficients, which the
//! beamforming subproblem further linearizes around an anchor
//! ([`LinearizationPoint`], [`surrogate_p_objective`]). Minimum-SINR
//! constraints enter as squared violation penalties and the power ball
//! either by projection (normalization) or through a log barrier.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Reals, Tape};
use crate::error::{Error, Result};
use crate::graph;
use crate::system::{
    compute_sinr, coupling, AntennaPositions, BeamformingMatrix, ChannelMatrix, LinkStats,
    Scenario, SystemConfig,
};

const LN2: f64 = std::f64::consts::LN_2;

/// Per-user auxiliaries of the two transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryVars {
    pub gamma: Vec<f64>,
    pub y: Vec<f64>,
}

impl AuxiliaryVars {
    pub fn validate(&self, users: usize) -> Result<()> {
        if self.gamma.len() != users || self.y.len() != users {
            return Err(Error::ShapeMismatch(format!(
                "auxiliaries sized {}/{} for {} users",
                self.gamma.len(),
                self.y.len(),
                users
            )));
        }
        if self
            .gamma
            .iter()
            .chain(&self.y)
            .any(|v| *v < 0.0 || !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "auxiliaries must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Violation penalty weight and barrier parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Weight on squared minimum-SINR violations.
    pub mu: f64,
    /// Barrier sharpness; the barrier term is `ln(power slack) / barrier_t`.
    pub barrier_t: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            mu: 10.0,
            barrier_t: 1.0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "penalty weight must be positive, got {}",
                self.mu
            )));
        }
        if !(self.barrier_t > 0.0) || !self.barrier_t.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "barrier parameter must be positive, got {}",
                self.barrier_t
            )));
        }
        Ok(())
    }
}

/// Value of the rate dual at a fixed auxiliary:
/// `log2(1+gamma) - gamma/ln2 + (1+gamma) sinr / (ln2 (1+sinr))`.
/// Maximized over `gamma >= 0` exactly at `gamma = sinr`, where it equals
/// `log2(1+sinr)`.
pub fn dual_rate_value(gamma: f64, sinr: f64) -> Result<f64> {
    if gamma < 0.0 || sinr < 0.0 || !gamma.is_finite() || !sinr.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dual rate needs gamma, sinr >= 0, got ({gamma}, {sinr})"
        )));
    }
    // Evaluated through the algebraically equal form
    // `log2(1+gamma) + (sinr - gamma) / (ln2 (1+sinr))`: the three-term
    // original cancels catastrophically for large auxiliaries, losing the
    // peak identity past ~1e5.
    Ok((1.0 + gamma).log2() + (sinr - gamma) / (LN2 * (1.0 + sinr)))
}

/// Value of the quadratic decoupling at a fixed auxiliary:
/// `2 y sqrt(g) - y^2 (g + i + noise)`. Maximized over `y >= 0` at
/// `y = sqrt(g)/(g+i+noise)`, where it equals `g/(g+i+noise)`.
pub fn quadratic_fraction_value(y: f64, g: f64, i: f64, noise: f64) -> Result<f64> {
    if y < 0.0 || g < 0.0 || i < 0.0 || !(noise > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quadratic fraction needs y, g, i >= 0 and noise > 0, got ({y}, {g}, {i}, {noise})"
        )));
    }
    Ok(2.0 * y * g.sqrt() - y * y * (g + i + noise))
}

/// Closed-form maximizers of both transforms at the current link state.
pub fn update_auxiliaries(stats: &LinkStats, noise: f64) -> AuxiliaryVars {
    let gamma = stats
        .gain
        .iter()
        .zip(&stats.interference)
        .map(|(g, i)| (g / (i + noise)).max(0.0))
        .collect();
    let y = stats
        .gain
        .iter()
        .zip(&stats.interference)
        .map(|(g, i)| (g.sqrt() / (g + i + noise)).max(0.0))
        .collect();
    AuxiliaryVars { gamma, y }
}

/// Full reformulated objective at fixed auxiliaries. With auxiliaries from
/// [`update_auxiliaries`] this equals the weighted sum rate.
pub fn transformed_objective(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    aux: &AuxiliaryVars,
    cfg: &SystemConfig,
) -> Result<f64> {
    aux.validate(h.users())?;
    let stats = compute_sinr(h, p, cfg.noise_power)?;
    let mut total = 0.0;
    for m in 0..h.users() {
        let (g, i) = (stats.gain[m], stats.interference[m]);
        let gamma = aux.gamma[m];
        let quad = quadratic_fraction_value(aux.y[m], g, i, cfg.noise_power)?;
        total += cfg.weights[m]
            * ((1.0 + gamma).log2() - gamma / LN2 + (1.0 + gamma) / LN2 * quad);
    }
    Ok(total)
}

/// The quadratic-transform part of the objective (the terms that depend on
/// the link state), used as the common value both subproblems improve.
pub fn bracket_objective(
    stats: &LinkStats,
    aux: &AuxiliaryVars,
    cfg: &SystemConfig,
) -> Result<f64> {
    aux.validate(stats.gain.len())?;
    let mut total = 0.0;
    for m in 0..stats.gain.len() {
        let quad = quadratic_fraction_value(
            aux.y[m],
            stats.gain[m],
            stats.interference[m],
            cfg.noise_power,
        )?;
        total += cfg.weights[m] * (1.0 + aux.gamma[m]) / LN2 * quad;
    }
    Ok(total)
}

/// First-order expansion anchor for the beamforming subproblem.
#[derive(Debug, Clone)]
pub struct LinearizationPoint {
    pub anchor: BeamformingMatrix,
    /// `h_m^H p_n` at the anchor, entry `(m, n)` at `m*M + n`.
    pub couplings: Vec<Complex64>,
    /// `sqrt(G_m)` at the anchor.
    pub sqrt_gain: Vec<f64>,
    /// Interference at the anchor.
    pub interference: Vec<f64>,
}

impl LinearizationPoint {
    pub fn at(h: &ChannelMatrix, p: &BeamformingMatrix) -> Result<Self> {
        if h.waveguides() != p.waveguides() || h.users() != p.users() {
            return Err(Error::ShapeMismatch(format!(
                "channel {}x{} vs anchor {}x{}",
                h.waveguides(),
                h.users(),
                p.waveguides(),
                p.users()
            )));
        }
        let m = h.users();
        let mut couplings = Vec::with_capacity(m * m);
        for mu in 0..m {
            for nu in 0..m {
                couplings.push(coupling(h, p, mu, nu));
            }
        }
        let mut sqrt_gain = Vec::with_capacity(m);
        let mut interference = Vec::with_capacity(m);
        for mu in 0..m {
            let g = couplings[mu * m + mu].norm_sqr();
            if g == 0.0 {
                return Err(Error::LinearizationSingular { user: mu });
            }
            sqrt_gain.push(g.sqrt());
            let i: f64 = (0..m)
                .filter(|nu| *nu != mu)
                .map(|nu| couplings[mu * m + nu].norm_sqr())
                .sum();
            interference.push(i);
        }
        Ok(LinearizationPoint {
            anchor: p.clone(),
            couplings,
            sqrt_gain,
            interference,
        })
    }
}

/// First-order expansions around the anchor, evaluated at `p`.
#[derive(Debug, Clone)]
pub struct LinearizedTerms {
    /// `sqrt(G_m)` expanded to first order.
    pub sqrt_gain: Vec<f64>,
    /// Interference expanded to first order.
    pub interference: Vec<f64>,
}

pub fn linearize(
    h: &ChannelMatrix,
    lin: &LinearizationPoint,
    p: &BeamformingMatrix,
) -> Result<LinearizedTerms> {
    let m = h.users();
    let mut sqrt_gain = Vec::with_capacity(m);
    let mut interference = Vec::with_capacity(m);
    for mu in 0..m {
        let u_mm = coupling(h, p, mu, mu);
        let c_mm = lin.couplings[mu * m + mu];
        // sqrt(G) ~= sqrt(G0) + Re(conj(c0) (u - c0)) / sqrt(G0)
        sqrt_gain
            .push(lin.sqrt_gain[mu] + (c_mm.conj() * (u_mm - c_mm)).re / lin.sqrt_gain[mu]);
        let mut i_lin = lin.interference[mu];
        for nu in 0..m {
            if nu == mu {
                continue;
            }
            let u = coupling(h, p, mu, nu);
            let c = lin.couplings[mu * m + nu];
            i_lin += 2.0 * (c.conj() * (u - c)).re;
        }
        interference.push(i_lin);
    }
    Ok(LinearizedTerms {
        sqrt_gain,
        interference,
    })
}

/// Linearized beamforming surrogate:
/// `sum_m w_m (1+gamma_m)/ln2 [2 y_m sqrtG_lin_m - y_m^2 (G0_m + Ilin_m + noise)]`.
/// Touches [`bracket_objective`] exactly at the anchor.
pub fn surrogate_p_objective(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    lin: &LinearizationPoint,
    aux: &AuxiliaryVars,
    cfg: &SystemConfig,
) -> Result<f64> {
    aux.validate(h.users())?;
    let terms = linearize(h, lin, p)?;
    let mut total = 0.0;
    for m in 0..h.users() {
        let a = cfg.weights[m] * (1.0 + aux.gamma[m]) / LN2;
        let g0 = lin.sqrt_gain[m] * lin.sqrt_gain[m];
        let y = aux.y[m];
        total += a
            * (2.0 * y * terms.sqrt_gain[m]
                - y * y * (g0 + terms.interference[m] + cfg.noise_power));
    }
    Ok(total)
}

/// Per-user minimum-SINR violations of the linearized constraint:
/// `V_m = max(0, sinr_min_m (Ilin_m + noise) - G_m(p))` with the exact
/// quadratic gain.
pub fn qos_violations(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    lin: &LinearizationPoint,
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    let terms = linearize(h, lin, p)?;
    let m = h.users();
    let mut out = Vec::with_capacity(m);
    for mu in 0..m {
        let g_exact = coupling(h, p, mu, mu).norm_sqr();
        let i_app = terms.interference[mu] + cfg.noise_power;
        out.push((cfg.sinr_min[mu] * i_app - g_exact).max(0.0));
    }
    Ok(out)
}

/// Surrogate minus squared violation penalties.
pub fn penalized_p_objective(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    lin: &LinearizationPoint,
    aux: &AuxiliaryVars,
    cfg: &SystemConfig,
    pen: &PenaltyConfig,
) -> Result<f64> {
    pen.validate()?;
    let base = surrogate_p_objective(h, p, lin, aux, cfg)?;
    let viol = qos_violations(h, p, lin, cfg)?;
    Ok(base - pen.mu * viol.iter().map(|v| v * v).sum::<f64>())
}

/// Closed-form gradient of [`penalized_p_objective`] in the stacked
/// beamforming coordinates (see `BeamformingMatrix::to_stacked`).
pub fn grad_penalized_p(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    lin: &LinearizationPoint,
    aux: &AuxiliaryVars,
    cfg: &SystemConfig,
    pen: &PenaltyConfig,
) -> Result<Vec<f64>> {
    pen.validate()?;
    aux.validate(h.users())?;
    let mut alg = Reals;
    let hv = graph::lift_complex(&mut alg, h.as_slice());
    let pv = graph::lift_complex(&mut alg, p.as_slice());
    Ok(graph::surrogate_grad_p(
        &mut alg,
        &hv,
        &pv,
        h.waveguides(),
        h.users(),
        &lin.couplings,
        &lin.sqrt_gain,
        &lin.interference,
        &cfg.weights,
        cfg.noise_power,
        &aux.gamma,
        &aux.y,
        &cfg.sinr_min,
        pen.mu,
    ))
}

/// Position-subproblem objective `f(d)` (the bracket with the channel
/// recomputed from `d`) and its gradient, obtained by a reverse sweep
/// through the channel expressions.
pub fn position_objective_and_grad(
    cfg: &SystemConfig,
    sc: &Scenario,
    d: &AntennaPositions,
    p: &BeamformingMatrix,
    aux: &AuxiliaryVars,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    sc.validate(cfg)?;
    aux.validate(cfg.num_users)?;
    if d.len() != cfg.num_waveguides {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} waveguides",
            d.len(),
            cfg.num_waveguides
        )));
    }
    let mut tape = Tape::new();
    let dv: Vec<_> = d.0.iter().map(|x| tape.leaf(*x)).collect();
    let pv = graph::lift_complex(&mut tape, p.as_slice());
    let hv = graph::channel(&mut tape, cfg, sc, &dv);
    let s = graph::couplings(&mut tape, &hv, &pv, cfg.num_waveguides, cfg.num_users);
    let (g, i) = graph::gain_interference(&mut tape, &s, cfg.num_users);
    let val = graph::bracket_value(
        &mut tape,
        &g,
        &i,
        &cfg.weights,
        cfg.noise_power,
        &aux.gamma,
        &aux.y,
    );
    let grads = tape.backward(val);
    Ok((tape.value(val), grads.get_all(&dv)))
}

/// Barrier-augmented beamforming objective
/// `Z = penalized + ln(total_power - ||p||^2) / barrier_t` and its stacked
/// gradient. Defined only strictly inside the power ball; `Z` falls to
/// `-inf` at the boundary, which is what keeps ascent iterates interior.
pub fn barrier_p_objective_and_grad(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    lin: &LinearizationPoint,
    aux: &AuxiliaryVars,
    cfg: &SystemConfig,
    pen: &PenaltyConfig,
) -> Result<(f64, Vec<f64>)> {
    let slack = cfg.total_power - p.total_power();
    if slack <= 0.0 {
        return Err(Error::BarrierDomain { slack });
    }
    let base = penalized_p_objective(h, p, lin, aux, cfg, pen)?;
    let z = base + slack.ln() / pen.barrier_t;
    let mut grad = grad_penalized_p(h, p, lin, aux, cfg, pen)?;
    let n = h.waveguides() * h.users();
    let coef = -2.0 / (pen.barrier_t * slack);
    for (i, c) in p.as_slice().iter().enumerate() {
        grad[i] += coef * c.re;
        grad[n + i] += coef * c.im;
    }
    Ok((z, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{central_diff, rel_err};
    use crate::system::{compute_channel, compute_wsr, normalize_power};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(
        seed: u64,
        k: usize,
        m: usize,
    ) -> (
        SystemConfig,
        Scenario,
        AntennaPositions,
        ChannelMatrix,
        BeamformingMatrix,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SystemConfig::new_28ghz(k, m, 30.0, 20.0);
        let sc = Scenario {
            users: (0..m)
                .map(|_| (rng.gen::<f64>() * 20.0, rng.gen::<f64>() * 20.0))
                .collect(),
            waveguide_y: (0..k).map(|i| (i as f64 + 0.5) * 20.0 / k as f64).collect(),
            feed_x: vec![0.0; k],
        };
        let d = AntennaPositions((0..k).map(|_| rng.gen::<f64>() * 20.0).collect());
        let h = compute_channel(&cfg, &sc, &d).unwrap();
        let scale = (cfg.total_power / (k * m) as f64).sqrt();
        let p = BeamformingMatrix::from_vec(
            k,
            m,
            (0..k * m)
                .map(|_| {
                    Complex64::new(
                        scale * (rng.gen::<f64>() - 0.5),
                        scale * (rng.gen::<f64>() - 0.5),
                    )
                })
                .collect(),
        )
        .unwrap();
        let p = normalize_power(&p, cfg.total_power).unwrap();
        (cfg, sc, d, h, p)
    }

    #[test]
    fn dual_rate_identity_at_optimum() {
        assert_eq!(dual_rate_value(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(dual_rate_value(0.0, 0.0).unwrap(), 0.0);
        assert!(dual_rate_value(0.5, 1.0).unwrap() < 1.0);
        assert!(dual_rate_value(-0.1, 1.0).is_err());
        assert!(dual_rate_value(0.1, -1.0).is_err());
    }

    #[test]
    fn dual_rate_scan_peaks_at_sinr() {
        // 1-D scan oracle: over a gamma grid the value is maximized at
        // gamma = sinr and equals log2(1+sinr) there.
        for sinr in [0.3, 1.0, 4.5, 50.0] {
            let at_opt = dual_rate_value(sinr, sinr).unwrap();
            assert!((at_opt - (1.0 + sinr).log2()).abs() < 1e-12);
            let mut best = f64::NEG_INFINITY;
            let mut best_gamma = -1.0;
            for j in 0..=400 {
                let gamma = sinr * 2.0 * j as f64 / 400.0;
                let v = dual_rate_value(gamma, sinr).unwrap();
                assert!(v <= at_opt + 1e-12);
                if v > best {
                    best = v;
                    best_gamma = gamma;
                }
            }
            assert!((best_gamma - sinr).abs() <= sinr * 2.0 / 400.0 + 1e-12);
        }
    }

    #[test]
    fn dual_rate_strictly_below_optimum_away_from_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let sinr = rng.gen::<f64>() * 20.0;
            let mut gamma = rng.gen::<f64>() * 20.0;
            if (gamma - sinr).abs() < 0.01 * (1.0 + sinr) {
                gamma = sinr + 0.05 * (1.0 + sinr);
            }
            assert!(dual_rate_value(gamma, sinr).unwrap() < (1.0 + sinr).log2());
        }
    }

    #[test]
    fn dual_rate_is_concave_in_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let sinr = rng.gen::<f64>() * 10.0;
            let g = rng.gen::<f64>() * 10.0;
            let step = 0.1 + rng.gen::<f64>();
            let a = dual_rate_value(g, sinr).unwrap();
            let b = dual_rate_value(g + step, sinr).unwrap();
            let c = dual_rate_value(g + 2.0 * step, sinr).unwrap();
            assert!(c - b <= b - a + 1e-12);
        }
    }

    #[test]
    fn quadratic_fraction_examples_and_scan() {
        let v = quadratic_fraction_value(3f64.sqrt() / 4.0, 3.0, 0.0, 1.0).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        assert_eq!(quadratic_fraction_value(0.0, 5.0, 2.0, 1.0).unwrap(), 0.0);
        // Scan oracle at (g, i, noise) = (4, 1, 1): optimum y* = 2/6.
        let y_star = 2.0 / 6.0;
        let at_opt = quadratic_fraction_value(y_star, 4.0, 1.0, 1.0).unwrap();
        assert!((at_opt - 4.0 / 6.0).abs() < 1e-12);
        let mut best = f64::NEG_INFINITY;
        let mut best_y = -1.0;
        for j in 0..=600 {
            let y = j as f64 / 600.0;
            let v = quadratic_fraction_value(y, 4.0, 1.0, 1.0).unwrap();
            assert!(v <= at_opt + 1e-12);
            if v > best {
                best = v;
                best_y = y;
            }
        }
        assert!((best_y - y_star).abs() <= 1.0 / 600.0 + 1e-12);
        assert!(quadratic_fraction_value(-0.1, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn auxiliary_updates_match_closed_forms() {
        let stats = LinkStats {
            gain: vec![3.0],
            interference: vec![1.0],
            sinr: vec![1.5],
        };
        let aux = update_auxiliaries(&stats, 1.0);
        assert_eq!(aux.gamma, vec![1.5]);
        assert!((aux.y[0] - 3f64.sqrt() / 5.0).abs() < 1e-15);

        let dead = LinkStats {
            gain: vec![0.0],
            interference: vec![5.0],
            sinr: vec![0.0],
        };
        let aux = update_auxiliaries(&dead, 1.0);
        assert_eq!(aux.gamma, vec![0.0]);
        assert_eq!(aux.y, vec![0.0]);
    }

    #[test]
    fn transform_round_trip_recovers_wsr() {
        for seed in 0..20 {
            let (cfg, _, _, h, p) = instance(seed, 2, 2);
            let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
            let aux = update_auxiliaries(&stats, cfg.noise_power);
            let obj = transformed_objective(&h, &p, &aux, &cfg).unwrap();
            let wsr = compute_wsr(&h, &p, &cfg).unwrap();
            assert!(
                (obj - wsr).abs() <= 1e-9 * wsr.abs().max(1.0),
                "{obj} vs {wsr}"
            );
        }
    }

    #[test]
    fn perturbed_auxiliaries_never_beat_the_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..10 {
            let (cfg, _, _, h, p) = instance(seed, 2, 2);
            let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
            let aux = update_auxiliaries(&stats, cfg.noise_power);
            let best = transformed_objective(&h, &p, &aux, &cfg).unwrap();
            for _ in 0..20 {
                let jitter = AuxiliaryVars {
                    gamma: aux
                        .gamma
                        .iter()
                        .map(|g| (g * (0.5 + rng.gen::<f64>())).max(0.0))
                        .collect(),
                    y: aux
                        .y
                        .iter()
                        .map(|y| (y * (0.5 + rng.gen::<f64>())).max(0.0))
                        .collect(),
                };
                let v = transformed_objective(&h, &p, &jitter, &cfg).unwrap();
                assert!(v <= best + 1e-9 * best.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_auxiliaries_zero_objective() {
        let (cfg, _, _, h, p) = instance(3, 2, 2);
        let aux = AuxiliaryVars {
            gamma: vec![0.0; 2],
            y: vec![0.0; 2],
        };
        let obj = transformed_objective(&h, &p, &aux, &cfg).unwrap();
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn linearization_touches_anchor_exactly() {
        let (cfg, _, _, h, p) = instance(4, 2, 2);
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let terms = linearize(&h, &lin, &p).unwrap();
        for m in 0..2 {
            assert_eq!(terms.sqrt_gain[m].to_bits(), lin.sqrt_gain[m].to_bits());
            assert_eq!(
                terms.interference[m].to_bits(),
                lin.interference[m].to_bits()
            );
        }
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let sur = surrogate_p_objective(&h, &p, &lin, &aux, &cfg).unwrap();
        let bra = bracket_objective(&stats, &aux, &cfg).unwrap();
        assert!((sur - bra).abs() <= 1e-9 * bra.abs().max(1.0));
    }

    #[test]
    fn linearization_error_is_second_order() {
        let (cfg, _, _, h, p) = instance(6, 2, 2);
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let delta = 1e-4 * (cfg.total_power).sqrt();
        for _ in 0..20 {
            let mut q = p.clone();
            let mut norm2 = 0.0;
            let dirs: Vec<Complex64> = (0..4)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let dn = dirs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for (i, c) in q.as_mut_slice().iter_mut().enumerate() {
                let step = dirs[i] / dn * delta;
                *c += step;
                norm2 += step.norm_sqr();
            }
            let terms = linearize(&h, &lin, &q).unwrap();
            for m in 0..2 {
                let exact = coupling(&h, &q, m, m).norm().max(1e-300);
                let hm_norm2: f64 = h.user_column(m).iter().map(|c| c.norm_sqr()).sum();
                let bound = hm_norm2 / lin.sqrt_gain[m] * norm2;
                assert!(
                    (terms.sqrt_gain[m] - exact).abs() <= bound.max(1e-12),
                    "err {} bound {}",
                    (terms.sqrt_gain[m] - exact).abs(),
                    bound
                );
            }
        }
    }

    #[test]
    fn single_user_linearization_has_no_interference() {
        let (cfg, _, _, h, p) = instance(8, 2, 1);
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let mut q = p.clone();
        for c in q.as_mut_slice() {
            *c *= 1.1;
        }
        let terms = linearize(&h, &lin, &q).unwrap();
        assert_eq!(terms.interference, vec![0.0]);
        let _ = cfg;
    }

    #[test]
    fn zero_anchor_column_is_singular() {
        let (_, _, _, h, p) = instance(5, 2, 2);
        let mut bad = p.clone();
        for k in 0..2 {
            *bad.entry_mut(k, 1) = Complex64::new(0.0, 0.0);
        }
        assert!(matches!(
            LinearizationPoint::at(&h, &bad),
            Err(Error::LinearizationSingular { user: 1 })
        ));
    }

    #[test]
    fn penalty_inactive_when_constraints_hold() {
        let (mut cfg, _, _, h, p) = instance(10, 2, 2);
        cfg.sinr_min = vec![0.0, 0.0];
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let pen = PenaltyConfig::default();
        let sur = surrogate_p_objective(&h, &p, &lin, &aux, &cfg).unwrap();
        let pv = penalized_p_objective(&h, &p, &lin, &aux, &cfg, &pen).unwrap();
        assert_eq!(sur, pv);
    }

    #[test]
    fn penalty_vanishes_with_mu() {
        let (mut cfg, _, _, h, p) = instance(11, 2, 2);
        // Force violations with an absurd SINR floor.
        cfg.sinr_min = vec![1e9, 1e9];
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let sur = surrogate_p_objective(&h, &p, &lin, &aux, &cfg).unwrap();
        let mut pen = PenaltyConfig::default();
        let v2: f64 = qos_violations(&h, &p, &lin, &cfg)
            .unwrap()
            .iter()
            .map(|v| v * v)
            .sum();
        assert!(v2 > 0.0);
        for mu in [1e-3, 1e-6, 1e-9] {
            pen.mu = mu;
            let pv = penalized_p_objective(&h, &p, &lin, &aux, &cfg, &pen).unwrap();
            assert!((sur - pv - mu * v2).abs() <= 1e-9 * (mu * v2).max(1e-12));
        }
    }

    fn stacked_eval(
        h: &ChannelMatrix,
        lin: &LinearizationPoint,
        aux: &AuxiliaryVars,
        cfg: &SystemConfig,
        pen: &PenaltyConfig,
        x: &[f64],
    ) -> f64 {
        let p = BeamformingMatrix::from_stacked(h.waveguides(), h.users(), x).unwrap();
        penalized_p_objective(h, &p, lin, aux, cfg, pen).unwrap()
    }

    #[test]
    fn penalized_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let (mut cfg, _, _, h, p) = instance(seed + 30, 2, 2);
            // Mixed regime: one loose and one likely-active constraint.
            let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
            cfg.sinr_min = vec![stats.sinr[0] * 0.2, stats.sinr[1] * 2.5];
            let lin = LinearizationPoint::at(&h, &p).unwrap();
            let aux = update_auxiliaries(&stats, cfg.noise_power);
            let pen = PenaltyConfig {
                mu: 5.0,
                barrier_t: 1.0,
            };
            let grad = grad_penalized_p(&h, &p, &lin, &aux, &cfg, &pen).unwrap();
            let x = p.to_stacked();
            let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let step = scale * 1e-6;
            for i in 0..x.len() {
                let fd = central_diff(
                    |x| stacked_eval(&h, &lin, &aux, &cfg, &pen, x),
                    &x,
                    i,
                    step,
                );
                // Skip coordinates where fd noise dominates a tiny slope.
                let denom = grad[i].abs().max(fd.abs());
                if denom < 1e-8 {
                    continue;
                }
                assert!(
                    rel_err(grad[i], fd) < 1e-4,
                    "seed {seed} coord {i}: grad {} vs fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn zero_weights_zero_floors_kill_the_gradient() {
        let (mut cfg, _, _, h, p) = instance(40, 2, 2);
        cfg.weights = vec![0.0, 0.0];
        cfg.sinr_min = vec![0.0, 0.0];
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let pen = PenaltyConfig::default();
        let grad = grad_penalized_p(&h, &p, &lin, &aux, &cfg, &pen).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn position_objective_matches_bracket_and_fd() {
        for seed in 0..5 {
            let (cfg, sc, d, h, p) = instance(seed + 50, 2, 2);
            let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
            let aux = update_auxiliaries(&stats, cfg.noise_power);
            let (f, grad) = position_objective_and_grad(&cfg, &sc, &d, &p, &aux).unwrap();
            let bra = bracket_objective(&stats, &aux, &cfg).unwrap();
            assert!((f - bra).abs() <= 1e-9 * bra.abs().max(1.0));
            for k in 0..2 {
                let fd = central_diff(
                    |x| {
                        let dd = AntennaPositions(x.to_vec());
                        let hh = compute_channel(&cfg, &sc, &dd).unwrap();
                        let st = compute_sinr(&hh, &p, cfg.noise_power).unwrap();
                        bracket_objective(&st, &aux, &cfg).unwrap()
                    },
                    &d.0,
                    k,
                    1e-5,
                );
                assert!(
                    rel_err(grad[k], fd) < 1e-3,
                    "seed {seed} k {k}: {} vs {}",
                    grad[k],
                    fd
                );
            }
        }
    }

    #[test]
    fn position_gradient_vanishes_under_symmetric_user() {
        // Single link with the user directly below a point of the waveguide:
        // the free-path distance is minimized there and the guide phase
        // cancels out of the modulus, so the slope is zero to roundoff.
        let mut cfg = SystemConfig::new_28ghz(1, 1, 30.0, 20.0);
        cfg.sinr_min = vec![0.0];
        let sc = Scenario {
            users: vec![(7.0, 4.0)],
            waveguide_y: vec![4.0],
            feed_x: vec![0.0],
        };
        let d = AntennaPositions(vec![7.0]);
        let h = compute_channel(&cfg, &sc, &d).unwrap();
        let p = BeamformingMatrix::from_vec(
            1,
            1,
            vec![Complex64::new(cfg.total_power.sqrt(), 0.0)],
        )
        .unwrap();
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let (f, grad) = position_objective_and_grad(&cfg, &sc, &d, &p, &aux).unwrap();
        assert!(grad[0].abs() <= 1e-10 * f.abs().max(1.0), "slope {}", grad[0]);
    }

    #[test]
    fn barrier_diverges_and_vanishes_as_designed() {
        let (mut cfg, _, _, h, p) = instance(60, 2, 2);
        cfg.sinr_min = vec![0.0, 0.0];
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);

        // Interior point with tiny slack: Z collapses once the barrier is
        // sharp (small barrier_t divides the log term). The slack must stay
        // well above the rounding floor of the renormalization (~1e-16 P)
        // so the point is reliably interior.
        let shrunk = normalize_power(&p, cfg.total_power * (1.0 - 1e-13)).unwrap();
        let pen = PenaltyConfig {
            mu: 10.0,
            barrier_t: 1e-5,
        };
        let (z, _) = barrier_p_objective_and_grad(&h, &shrunk, &lin, &aux, &cfg, &pen).unwrap();
        assert!(z < -1e6, "Z = {z}");

        // Huge barrier_t: Z approaches the penalized objective pointwise.
        let pen = PenaltyConfig {
            mu: 10.0,
            barrier_t: 1e12,
        };
        let half = normalize_power(&p, cfg.total_power / 2.0).unwrap();
        let (z, _) = barrier_p_objective_and_grad(&h, &half, &lin, &aux, &cfg, &pen).unwrap();
        let base = penalized_p_objective(&h, &half, &lin, &aux, &cfg, &pen).unwrap();
        assert!((z - base).abs() < 1e-9 * base.abs().max(1.0));

        // Outside the ball: domain error. The overshoot must exceed the
        // renormalization rounding so the point is reliably exterior.
        let full = normalize_power(&p, cfg.total_power * (1.0 + 1e-12)).unwrap();
        assert!(matches!(
            barrier_p_objective_and_grad(&h, &full, &lin, &aux, &cfg, &pen),
            Err(Error::BarrierDomain { .. })
        ));
        let outside = normalize_power(&p, cfg.total_power * 2.0).unwrap();
        assert!(barrier_p_objective_and_grad(&h, &outside, &lin, &aux, &cfg, &pen).is_err());
    }

    #[test]
    fn barrier_gradient_matches_finite_differences() {
        let (mut cfg, _, _, h, p) = instance(61, 2, 2);
        let stats = compute_sinr(&h, &p, cfg.noise_power).unwrap();
        cfg.sinr_min = vec![stats.sinr[0] * 0.5, stats.sinr[1] * 1.5];
        let lin = LinearizationPoint::at(&h, &p).unwrap();
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let pen = PenaltyConfig {
            mu: 2.0,
            barrier_t: 3.0,
        };
        let interior = normalize_power(&p, cfg.total_power * 0.7).unwrap();
        let (_, grad) =
            barrier_p_objective_and_grad(&h, &interior, &lin, &aux, &cfg, &pen).unwrap();
        let x = interior.to_stacked();
        let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..x.len() {
            let fd = central_diff(
                |x| {
                    let q = BeamformingMatrix::from_stacked(2, 2, x).unwrap();
                    barrier_p_objective_and_grad(&h, &q, &lin, &aux, &cfg, &pen)
                        .unwrap()
                        .0
                },
                &x,
                i,
                scale * 1e-6,
            );
            if grad[i].abs().max(fd.abs()) < 1e-8 {
                continue;
            }
            assert!(
                rel_err(grad[i], fd) < 1e-4,
                "coord {i}: {} vs {}",
                grad[i],
                fd
            );
        }
    }
}

//! Alternating and gradient baselines for the joint beamforming /
//! antenna-position problem, plus an exhaustive grid reference.
//!
//! All solvers share the same reporting contract: a [`Trajectory`] of
//! per-iteration [`IterRecord`]s carrying the exact weighted sum rate (never
//! a surrogate value), the solver's own internal objective, the running
//! best, and constraint slacks. Beamforming iterates stay on or inside the
//! power ball (normalization for most solvers, a log barrier with
//! backtracking for [`solve_et_ca`]); positions are clamped into the
//! deployment box after every step.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use num_complex::Complex64;

use crate::autodiff::Reals;
use crate::error::{Error, Result};
use crate::graph;
use crate::system::{
    compute_channel, compute_sinr, compute_wsr, normalize_power, project_positions,
    AntennaPositions, BeamformingMatrix, ChannelMatrix, Scenario, SystemConfig,
};
use crate::transforms::{
    barrier_p_objective_and_grad, grad_penalized_p, position_objective_and_grad,
    update_auxiliaries, LinearizationPoint, PenaltyConfig,
};

/// Step sizes, inner budgets, penalty schedules and the stopping rule shared
/// by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveOptions {
    /// Outer (alternation) rounds. Zero is allowed and evaluates the
    /// initial point only.
    pub max_outer_iters: usize,
    /// Beamforming gradient steps per round.
    pub inner_iters_p: usize,
    /// Position gradient steps per round.
    pub inner_iters_d: usize,
    /// Beamforming step size.
    pub step_p: f64,
    /// Position step size, in meters.
    pub step_d: f64,
    /// Initial violation penalty weight and barrier parameter.
    pub pen: PenaltyConfig,
    /// Multiply the penalty weight by this every `mu_every` rounds...
    pub mu_growth: f64,
    pub mu_every: usize,
    /// ...up to this cap.
    pub mu_cap: f64,
    /// Barrier parameter growth per round (ET-CA only)...
    pub t_growth: f64,
    /// ...up to this cap. Large `t` means a weak barrier.
    pub t_cap: f64,
    /// Reserved for randomized initialization helpers; the iterative solvers
    /// themselves are deterministic and never draw from it.
    pub seed: u64,
    /// Early stop once the best weighted sum rate improves by less than this
    /// over `tol_window` rounds. Zero disables the window check and runs the
    /// full budget.
    pub tol: f64,
    pub tol_window: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_outer_iters: 500,
            inner_iters_p: 10,
            inner_iters_d: 10,
            step_p: 2e-4,
            step_d: 5e-4,
            pen: PenaltyConfig::default(),
            mu_growth: 2.0,
            mu_every: 50,
            mu_cap: 1e4,
            t_growth: 5.0,
            t_cap: 1e6,
            seed: 0,
            tol: 0.0,
            tol_window: 25,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        self.pen.validate()?;
        for (name, v) in [
            ("step_p", self.step_p),
            ("step_d", self.step_d),
            ("mu_growth", self.mu_growth),
            ("t_growth", self.t_growth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.inner_iters_p == 0 || self.inner_iters_d == 0 {
            return Err(Error::InvalidParameter(
                "inner iteration counts must be at least 1".into(),
            ));
        }
        if self.mu_every == 0 || self.tol_window == 0 {
            return Err(Error::InvalidParameter(
                "mu_every and tol_window must be at least 1".into(),
            ));
        }
        if self.tol < 0.0 || !self.tol.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tol must be finite and >= 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// A joint beamforming / position point — solver input and output alike.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pub p: BeamformingMatrix,
    pub d: AntennaPositions,
}

impl SolutionState {
    /// Deterministic default start: antennas at the slice midpoints of the
    /// box, beamformer matched to the channel there with the budget split
    /// evenly across users.
    pub fn deterministic(cfg: &SystemConfig, sc: &Scenario) -> Result<Self> {
        let d = equally_spaced_positions(cfg);
        let h = compute_channel(cfg, sc, &d)?;
        let p = matched_filter_init(cfg, &h)?;
        Ok(SolutionState { p, d })
    }

    /// Seeded random start: positions uniform in the box, complex-Gaussian
    /// beamformer normalized onto the power sphere.
    pub fn random(cfg: &SystemConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_beamforming(cfg, &mut rng)?;
        let d = random_positions(cfg, &mut rng);
        Ok(SolutionState { p, d })
    }
}

/// Exact weighted sum rate of a state under its scenario's channel.
pub fn evaluate_wsr(cfg: &SystemConfig, sc: &Scenario, state: &SolutionState) -> Result<f64> {
    let h = compute_channel(cfg, sc, &state.d)?;
    compute_wsr(&h, &state.p, cfg)
}

/// One row of a solve trace. `wsr` is the exact weighted sum rate of the
/// iterate; `objective` is the value the solver itself is ascending at that
/// iterate (they coincide whenever no penalty or barrier term is active);
/// slacks come from the exact constraint check.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub wsr: f64,
    pub objective: f64,
    pub best_wsr: f64,
    pub min_qos_slack: f64,
    pub power_slack: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<IterRecord>,
    /// Best iterate seen, by exact weighted sum rate.
    pub best: SolutionState,
    pub best_wsr: f64,
    /// Final iterate.
    pub last: SolutionState,
    pub last_wsr: f64,
}

/// The internal objective a solver reports alongside the exact rate.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ObjectiveKind {
    /// The weighted sum rate itself.
    Wsr,
    /// `wsr - mu * sum_m max(0, sinr_min_m (I_m + noise) - G_m)`.
    LinearPenalty { mu: f64 },
    /// `wsr - mu * sum_m max(0, ...)^2`.
    QuadraticPenalty { mu: f64 },
    /// Quadratic penalty plus `ln(power slack) / t`.
    Barrier { mu: f64, t: f64 },
}

pub(crate) struct Tracker {
    start: Instant,
    records: Vec<IterRecord>,
    best: Option<(SolutionState, f64)>,
}

impl Tracker {
    pub(crate) fn new() -> Self {
        Tracker {
            start: Instant::now(),
            records: Vec::new(),
            best: None,
        }
    }

    pub(crate) fn observe(
        &mut self,
        iter: usize,
        cfg: &SystemConfig,
        h: &ChannelMatrix,
        p: &BeamformingMatrix,
        d: &AntennaPositions,
        kind: ObjectiveKind,
    ) -> Result<f64> {
        let wsr = compute_wsr(h, p, cfg)?;
        let stats = compute_sinr(h, p, cfg.noise_power)?;
        let power_slack = cfg.total_power - p.total_power();
        let min_qos_slack = stats
            .sinr
            .iter()
            .zip(&cfg.sinr_min)
            .map(|(s, g)| s - g)
            .fold(f64::INFINITY, f64::min);
        let violation = |pow: u32| -> f64 {
            stats
                .gain
                .iter()
                .zip(&stats.interference)
                .zip(&cfg.sinr_min)
                .map(|((gain, interf), g)| {
                    (g * (interf + cfg.noise_power) - gain).max(0.0).powi(pow as i32)
                })
                .sum()
        };
        let objective = match kind {
            ObjectiveKind::Wsr => wsr,
            ObjectiveKind::LinearPenalty { mu } => wsr - mu * violation(1),
            ObjectiveKind::QuadraticPenalty { mu } => wsr - mu * violation(2),
            ObjectiveKind::Barrier { mu, t } => wsr - mu * violation(2) + power_slack.ln() / t,
        };
        let improved = self.best.as_ref().map_or(true, |(_, b)| wsr > *b);
        if improved {
            self.best = Some((
                SolutionState {
                    p: p.clone(),
                    d: d.clone(),
                },
                wsr,
            ));
        }
        let best_wsr = self.best.as_ref().unwrap().1;
        self.records.push(IterRecord {
            iter,
            wsr,
            objective,
            best_wsr,
            min_qos_slack,
            power_slack,
            wall_time_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(wsr)
    }

    /// True once the running best has improved by less than `tol` across the
    /// trailing `window` records.
    pub(crate) fn stalled(&self, tol: f64, window: usize) -> bool {
        if tol <= 0.0 {
            return false;
        }
        let n = self.records.len();
        if n <= window {
            return false;
        }
        self.records[n - 1].best_wsr - self.records[n - 1 - window].best_wsr < tol
    }

    pub(crate) fn finish(self, p: BeamformingMatrix, d: AntennaPositions, wsr: f64) -> Trajectory {
        let (best, best_wsr) = self.best.expect("observe called at least once");
        Trajectory {
            records: self.records,
            best,
            best_wsr,
            last: SolutionState { p, d },
            last_wsr: wsr,
        }
    }
}

/// Antennas at the midpoints of `K` equal slices of the deployment box.
pub fn equally_spaced_positions(cfg: &SystemConfig) -> AntennaPositions {
    let (lo, hi) = cfg.position_box;
    let span = hi - lo;
    let k = cfg.num_waveguides;
    AntennaPositions(
        (0..k)
            .map(|i| lo + (i as f64 + 0.5) * span / k as f64)
            .collect(),
    )
}

/// Beamformer whose column `m` points along user `m`'s channel, with the
/// power budget split evenly across users.
pub fn matched_filter_init(cfg: &SystemConfig, h: &ChannelMatrix) -> Result<BeamformingMatrix> {
    let (k, m) = (h.waveguides(), h.users());
    let mut p = BeamformingMatrix::zeros(k, m);
    for mu in 0..m {
        let col = h.user_column(mu);
        let norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NormalizationUndefined);
        }
        let scale = (cfg.total_power / m as f64).sqrt() / norm;
        for kk in 0..k {
            *p.entry_mut(kk, mu) = col[kk] * scale;
        }
    }
    normalize_power(&p, cfg.total_power)
}

/// Complex-Gaussian beamformer scaled onto the power sphere.
pub fn random_beamforming<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> Result<BeamformingMatrix> {
    let (k, m) = (cfg.num_waveguides, cfg.num_users);
    let data: Vec<Complex64> = (0..k * m)
        .map(|_| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect();
    normalize_power(&BeamformingMatrix::from_vec(k, m, data)?, cfg.total_power)
}

/// Positions drawn uniformly from the deployment box.
pub fn random_positions<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> AntennaPositions {
    let (lo, hi) = cfg.position_box;
    AntennaPositions(
        (0..cfg.num_waveguides)
            .map(|_| lo + (hi - lo) * rng.gen::<f64>())
            .collect(),
    )
}

fn ascend_stacked(p: &BeamformingMatrix, grad: &[f64], step: f64) -> Result<BeamformingMatrix> {
    let mut x = p.to_stacked();
    for (xi, gi) in x.iter_mut().zip(grad) {
        *xi += step * gi;
    }
    BeamformingMatrix::from_stacked(p.waveguides(), p.users(), &x)
}

fn checked_init(cfg: &SystemConfig, sc: &Scenario, init: &SolutionState) -> Result<()> {
    cfg.validate()?;
    sc.validate(cfg)?;
    if init.p.waveguides() != cfg.num_waveguides
        || init.p.users() != cfg.num_users
        || init.d.len() != cfg.num_waveguides
    {
        return Err(Error::ShapeMismatch(format!(
            "init sized {}x{} / {} for a {}x{} system",
            init.p.waveguides(),
            init.p.users(),
            init.d.len(),
            cfg.num_waveguides,
            cfg.num_users
        )));
    }
    Ok(())
}

/// Alternating solver on the transformed objective: each round refreshes the
/// auxiliaries and the linearization anchor, runs gradient ascent with
/// renormalization on the penalized beamforming surrogate, then projected
/// gradient ascent on the position objective.
pub fn solve_transformed_ao(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    checked_init(cfg, sc, init)?;
    opts.validate()?;
    let mut p = normalize_power(&init.p, cfg.total_power)?;
    let mut d = project_positions(&init.d, cfg.position_box)?;
    let mut pen = opts.pen;
    let mut h = compute_channel(cfg, sc, &d)?;
    let mut tracker = Tracker::new();
    let kind = |mu: f64| ObjectiveKind::QuadraticPenalty { mu };
    let mut wsr = tracker.observe(0, cfg, &h, &p, &d, kind(pen.mu))?;
    for it in 1..=opts.max_outer_iters {
        let stats = compute_sinr(&h, &p, cfg.noise_power)?;
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let lin = LinearizationPoint::at(&h, &p)?;
        for _ in 0..opts.inner_iters_p {
            let g = grad_penalized_p(&h, &p, &lin, &aux, cfg, &pen)?;
            p = normalize_power(&ascend_stacked(&p, &g, opts.step_p)?, cfg.total_power)?;
        }
        for _ in 0..opts.inner_iters_d {
            let (_, g) = position_objective_and_grad(cfg, sc, &d, &p, &aux)?;
            for (x, gi) in d.0.iter_mut().zip(&g) {
                *x += opts.step_d * gi;
            }
            d = project_positions(&d, cfg.position_box)?;
        }
        h = compute_channel(cfg, sc, &d)?;
        if it % opts.mu_every == 0 {
            pen.mu = (pen.mu * opts.mu_growth).min(opts.mu_cap);
        }
        wsr = tracker.observe(it, cfg, &h, &p, &d, kind(pen.mu))?;
        if tracker.stalled(opts.tol, opts.tol_window) {
            break;
        }
    }
    Ok(tracker.finish(p, d, wsr))
}

/// Alternating solver on the raw penalized objective (no transforms, no
/// linearization): gradient ascent directly on
/// `wsr - mu * sum_m max(0, violation_m)`.
pub fn solve_ao_baseline(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    checked_init(cfg, sc, init)?;
    opts.validate()?;
    let mut p = normalize_power(&init.p, cfg.total_power)?;
    let mut d = project_positions(&init.d, cfg.position_box)?;
    let mut mu = opts.pen.mu;
    let mut h = compute_channel(cfg, sc, &d)?;
    let mut tracker = Tracker::new();
    let mut wsr = tracker.observe(0, cfg, &h, &p, &d, ObjectiveKind::LinearPenalty { mu })?;
    let mut alg = Reals;
    for it in 1..=opts.max_outer_iters {
        let hv = graph::lift_complex(&mut alg, h.as_slice());
        for _ in 0..opts.inner_iters_p {
            let pv = graph::lift_complex(&mut alg, p.as_slice());
            let g = graph::raw_grad_p(
                &mut alg,
                &hv,
                &pv,
                cfg.num_waveguides,
                cfg.num_users,
                &cfg.weights,
                cfg.noise_power,
                &cfg.sinr_min,
                mu,
            );
            p = normalize_power(&ascend_stacked(&p, &g, opts.step_p)?, cfg.total_power)?;
        }
        let pv = graph::lift_complex(&mut alg, p.as_slice());
        for _ in 0..opts.inner_iters_d {
            let g = graph::raw_grad_d(
                &mut alg,
                cfg,
                sc,
                &d.0,
                &pv,
                &cfg.weights,
                cfg.noise_power,
                &cfg.sinr_min,
                mu,
            );
            for (x, gi) in d.0.iter_mut().zip(&g) {
                *x += opts.step_d * gi;
            }
            d = project_positions(&d, cfg.position_box)?;
        }
        h = compute_channel(cfg, sc, &d)?;
        if it % opts.mu_every == 0 {
            mu = (mu * opts.mu_growth).min(opts.mu_cap);
        }
        wsr = tracker.observe(it, cfg, &h, &p, &d, ObjectiveKind::LinearPenalty { mu })?;
        if tracker.stalled(opts.tol, opts.tol_window) {
            break;
        }
    }
    Ok(tracker.finish(p, d, wsr))
}

/// Simultaneous (non-alternating) gradient ascent on the raw penalized
/// objective. Both blocks step once per iteration using gradients evaluated
/// at the iterate `tau_lag` iterations behind the current one (clamped at
/// the start), so with `tau_lag = 0` this is plain joint gradient ascent and
/// with `tau_lag >= 1` neither block sees the other's latest update.
pub fn solve_gd(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    opts: &SolveOptions,
    tau_lag: usize,
) -> Result<Trajectory> {
    checked_init(cfg, sc, init)?;
    opts.validate()?;
    if tau_lag >= opts.max_outer_iters.max(1) {
        return Err(Error::InvalidParameter(format!(
            "tau_lag {} must be smaller than the outer budget {}",
            tau_lag, opts.max_outer_iters
        )));
    }
    let p0 = normalize_power(&init.p, cfg.total_power)?;
    let d0 = project_positions(&init.d, cfg.position_box)?;
    let mut hist: Vec<(BeamformingMatrix, AntennaPositions)> = vec![(p0, d0)];
    let mut tracker = Tracker::new();
    let h0 = compute_channel(cfg, sc, &hist[0].1)?;
    let mut mu = opts.pen.mu;
    let mut wsr = tracker.observe(
        0,
        cfg,
        &h0,
        &hist[0].0,
        &hist[0].1,
        ObjectiveKind::LinearPenalty { mu },
    )?;
    let mut alg = Reals;
    for it in 1..=opts.max_outer_iters {
        let (ref p_cur, ref d_cur) = hist[it - 1];
        let (ref p_lag, ref d_lag) = hist[(it - 1).saturating_sub(tau_lag)];
        let h_lag = compute_channel(cfg, sc, d_lag)?;
        let hv = graph::lift_complex(&mut alg, h_lag.as_slice());
        let pv = graph::lift_complex(&mut alg, p_lag.as_slice());
        let gp = graph::raw_grad_p(
            &mut alg,
            &hv,
            &pv,
            cfg.num_waveguides,
            cfg.num_users,
            &cfg.weights,
            cfg.noise_power,
            &cfg.sinr_min,
            mu,
        );
        let gd = graph::raw_grad_d(
            &mut alg,
            cfg,
            sc,
            &d_lag.0,
            &pv,
            &cfg.weights,
            cfg.noise_power,
            &cfg.sinr_min,
            mu,
        );
        let p_next = normalize_power(&ascend_stacked(p_cur, &gp, opts.step_p)?, cfg.total_power)?;
        let mut d_next = d_cur.clone();
        for (x, gi) in d_next.0.iter_mut().zip(&gd) {
            *x += opts.step_d * gi;
        }
        let d_next = project_positions(&d_next, cfg.position_box)?;
        let h = compute_channel(cfg, sc, &d_next)?;
        wsr = tracker.observe(
            it,
            cfg,
            &h,
            &p_next,
            &d_next,
            ObjectiveKind::LinearPenalty { mu },
        )?;
        hist.push((p_next, d_next));
        if it % opts.mu_every == 0 {
            mu = (mu * opts.mu_growth).min(opts.mu_cap);
        }
        if tracker.stalled(opts.tol, opts.tol_window) {
            break;
        }
    }
    let (p, d) = hist.pop().expect("history never empty");
    Ok(tracker.finish(p, d, wsr))
}

/// Coordinate-ascent solver that keeps the power constraint with a log
/// barrier instead of normalization. The initial beamformer must already be
/// strictly inside the power ball — a boundary or exterior start is a
/// barrier-domain error. Beamforming steps use backtracking so every
/// accepted iterate stays strictly interior and never decreases the barrier
/// objective within a round; the barrier weakens (`barrier_t` grows by
/// `t_growth` per round) so late iterates can approach the sphere.
pub fn solve_et_ca(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    checked_init(cfg, sc, init)?;
    opts.validate()?;
    let slack = cfg.total_power - init.p.total_power();
    if slack <= 0.0 {
        return Err(Error::BarrierDomain { slack });
    }
    let mut p = init.p.clone();
    let mut d = project_positions(&init.d, cfg.position_box)?;
    let mut pen = opts.pen;
    let mut h = compute_channel(cfg, sc, &d)?;
    let mut tracker = Tracker::new();
    let kind = |pen: &PenaltyConfig| ObjectiveKind::Barrier {
        mu: pen.mu,
        t: pen.barrier_t,
    };
    let mut wsr = tracker.observe(0, cfg, &h, &p, &d, kind(&pen))?;
    for it in 1..=opts.max_outer_iters {
        let stats = compute_sinr(&h, &p, cfg.noise_power)?;
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let lin = LinearizationPoint::at(&h, &p)?;
        for _ in 0..opts.inner_iters_p {
            let (z0, g) = barrier_p_objective_and_grad(&h, &p, &lin, &aux, cfg, &pen)?;
            let mut step = opts.step_p;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = ascend_stacked(&p, &g, step)?;
                if cfg.total_power - cand.total_power() > 0.0 {
                    let (z, _) = barrier_p_objective_and_grad(&h, &cand, &lin, &aux, cfg, &pen)?;
                    if z >= z0 {
                        p = cand;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        for _ in 0..opts.inner_iters_d {
            let (_, g) = position_objective_and_grad(cfg, sc, &d, &p, &aux)?;
            for (x, gi) in d.0.iter_mut().zip(&g) {
                *x += opts.step_d * gi;
            }
            d = project_positions(&d, cfg.position_box)?;
        }
        h = compute_channel(cfg, sc, &d)?;
        pen.barrier_t = (pen.barrier_t * opts.t_growth).min(opts.t_cap);
        if it % opts.mu_every == 0 {
            pen.mu = (pen.mu * opts.mu_growth).min(opts.mu_cap);
        }
        wsr = tracker.observe(it, cfg, &h, &p, &d, kind(&pen))?;
        if tracker.stalled(opts.tol, opts.tol_window) {
            break;
        }
    }
    Ok(tracker.finish(p, d, wsr))
}

/// Non-iterative reference: antennas equally spaced across the box, a seeded
/// random beamformer normalized onto the power sphere. Same seed, same
/// output.
pub fn solve_udb(cfg: &SystemConfig, sc: &Scenario, seed: u64) -> Result<SolutionState> {
    cfg.validate()?;
    sc.validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = equally_spaced_positions(cfg);
    let p = random_beamforming(cfg, &mut rng)?;
    Ok(SolutionState { p, d })
}

/// Budgets for the per-grid-point beamforming solve of [`solve_exhaustive`].
#[derive(Debug, Clone, Copy)]
pub struct ExhaustiveOptions {
    /// Random beamforming restarts per grid point, on top of one
    /// deterministic matched-filter start.
    pub restarts: usize,
    /// Alternation rounds of the per-point beamforming solve. The step
    /// scale decays geometrically across rounds down to 1e-3 of its initial
    /// value, so late rounds fine-tune.
    pub rounds: usize,
    /// Direction-normalized gradient steps per round.
    pub inner_p: usize,
    /// Initial step length as a fraction of `sqrt(P_total)`.
    pub step_scale: f64,
    pub pen: PenaltyConfig,
    pub seed: u64,
}

impl Default for ExhaustiveOptions {
    fn default() -> Self {
        ExhaustiveOptions {
            restarts: 5,
            rounds: 12,
            inner_p: 5,
            step_scale: 0.25,
            pen: PenaltyConfig::default(),
            seed: 0,
        }
    }
}

/// Hard cap on the number of grid points the exhaustive solver will visit.
pub const GRID_LIMIT: u128 = 1_000_000;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Restart stream tied to the grid point's coordinates (not its index), so
/// refining the grid re-evaluates shared points identically.
fn point_rng(seed: u64, d: &[f64], restart: usize) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for x in d {
        state = splitmix64(state ^ x.to_bits());
    }
    state = splitmix64(state ^ restart as u64);
    ChaCha8Rng::seed_from_u64(state)
}

/// Beamforming-only solve at fixed positions: penalized-surrogate ascent
/// with direction-normalized, geometrically decaying steps and a fresh
/// auxiliary/anchor refresh every round.
fn beamforming_only(
    cfg: &SystemConfig,
    h: &ChannelMatrix,
    p0: BeamformingMatrix,
    opts: &ExhaustiveOptions,
) -> Result<(BeamformingMatrix, f64)> {
    let mut p = normalize_power(&p0, cfg.total_power)?;
    let pen = opts.pen;
    let mut best_wsr = compute_wsr(h, &p, cfg)?;
    let mut best_p = p.clone();
    let decay = if opts.rounds > 1 {
        (1e-3f64).powf(1.0 / (opts.rounds as f64 - 1.0))
    } else {
        1.0
    };
    let mut scale = opts.step_scale * cfg.total_power.sqrt();
    for _ in 0..opts.rounds {
        let stats = compute_sinr(h, &p, cfg.noise_power)?;
        let aux = update_auxiliaries(&stats, cfg.noise_power);
        let lin = match LinearizationPoint::at(h, &p) {
            Ok(lin) => lin,
            // A collapsed column is a dead restart, not an input error.
            Err(Error::LinearizationSingular { .. }) => break,
            Err(e) => return Err(e),
        };
        for _ in 0..opts.inner_p {
            let g = grad_penalized_p(h, &p, &lin, &aux, cfg, &pen)?;
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            p = normalize_power(&ascend_stacked(&p, &g, scale / norm)?, cfg.total_power)?;
        }
        let wsr = compute_wsr(h, &p, cfg)?;
        if wsr > best_wsr {
            best_wsr = wsr;
            best_p = p.clone();
        }
        scale *= decay;
    }
    Ok((best_p, best_wsr))
}

/// Exhaustive reference: every point of a uniform position grid with spacing
/// `grid_res` is scored by a multi-restart beamforming solve; returns the
/// best grid point found. Deterministic for a fixed seed, including under
/// parallel evaluation (ties break toward the lexicographically first grid
/// point). Errors with [`Error::GridTooLarge`] rather than attempting more
/// than [`GRID_LIMIT`] points.
pub fn solve_exhaustive(
    cfg: &SystemConfig,
    sc: &Scenario,
    grid_res: f64,
    opts: &ExhaustiveOptions,
) -> Result<SolutionState> {
    cfg.validate()?;
    sc.validate(cfg)?;
    if !(grid_res > 0.0) || !grid_res.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid_res must be positive, got {grid_res}"
        )));
    }
    if opts.rounds == 0 || opts.inner_p == 0 || !(opts.step_scale > 0.0) {
        return Err(Error::InvalidParameter(
            "exhaustive search needs positive per-point budgets".into(),
        ));
    }
    let (lo, hi) = cfg.position_box;
    let per_axis = ((hi - lo) / grid_res).floor() as usize + 1;
    let points = (per_axis as u128).pow(cfg.num_waveguides as u32);
    if points > GRID_LIMIT {
        return Err(Error::GridTooLarge {
            points,
            limit: GRID_LIMIT,
        });
    }
    let total = points as usize;
    let k = cfg.num_waveguides;

    let evaluate = |index: usize| -> Result<(f64, usize, SolutionState)> {
        let mut rest = index;
        let mut d = vec![0.0; k];
        for axis in (0..k).rev() {
            d[axis] = lo + (rest % per_axis) as f64 * grid_res;
            rest /= per_axis;
        }
        let d = AntennaPositions(d);
        let h = compute_channel(cfg, sc, &d)?;
        let mut best: Option<(f64, BeamformingMatrix)> = None;
        // Restart 0 is the deterministic matched filter; the `restarts`
        // configured ones are random.
        for r in 0..=opts.restarts {
            let p0 = if r == 0 {
                matched_filter_init(cfg, &h)?
            } else {
                let mut rng = point_rng(opts.seed, &d.0, r);
                random_beamforming(cfg, &mut rng)?
            };
            let (p, wsr) = beamforming_only(cfg, &h, p0, opts)?;
            if best.as_ref().map_or(true, |(w, _)| wsr > *w) {
                best = Some((wsr, p));
            }
        }
        let (wsr, p) = best.expect("at least the matched-filter start");
        Ok((wsr, index, SolutionState { p, d }))
    };

    let best = (0..total)
        .into_par_iter()
        .map(evaluate)
        .try_reduce_with(|a, b| {
            // Strictly-better or earlier-point-on-tie keeps the reduction
            // order-independent and therefore deterministic under rayon.
            Ok(if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            })
        })
        .expect("grid has at least one point")?;
    Ok(best.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::POWER_TOL;
    use rand::SeedableRng;

    fn small_instance(seed: u64, k: usize, m: usize) -> (SystemConfig, Scenario, SolutionState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SystemConfig::new_28ghz(k, m, 30.0, 10.0);
        let sc = Scenario {
            users: (0..m)
                .map(|_| (rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0))
                .collect(),
            waveguide_y: (0..k).map(|i| (i as f64 + 0.5) * 10.0 / k as f64).collect(),
            feed_x: vec![0.0; k],
        };
        let init = SolutionState::deterministic(&cfg, &sc).unwrap();
        (cfg, sc, init)
    }

    fn quick_opts() -> SolveOptions {
        SolveOptions {
            max_outer_iters: 8,
            inner_iters_p: 3,
            inner_iters_d: 3,
            step_p: 1e-4,
            step_d: 1e-3,
            ..SolveOptions::default()
        }
    }

    fn interior(init: &SolutionState, cfg: &SystemConfig) -> SolutionState {
        SolutionState {
            p: normalize_power(&init.p, 0.9 * cfg.total_power).unwrap(),
            d: init.d.clone(),
        }
    }

    fn assert_well_formed(cfg: &SystemConfig, t: &Trajectory, iters: usize) {
        assert_eq!(t.records.len(), iters + 1);
        let mut best = f64::NEG_INFINITY;
        for (i, r) in t.records.iter().enumerate() {
            assert_eq!(r.iter, i);
            assert!(r.wsr.is_finite());
            assert!(r.objective.is_finite());
            best = best.max(r.wsr);
            assert_eq!(r.best_wsr, best, "best_wsr must track the running max");
            assert!(
                r.power_slack >= -POWER_TOL * cfg.total_power,
                "power violated at iter {i}: slack {}",
                r.power_slack
            );
        }
        assert_eq!(t.best_wsr, best);
        assert!(t.last.p.total_power() <= cfg.total_power * (1.0 + POWER_TOL));
        let (lo, hi) = cfg.position_box;
        assert!(t.last.d.0.iter().all(|x| *x >= lo && *x <= hi));
    }

    #[test]
    fn zero_iterations_reports_the_init() {
        let (cfg, sc, init) = small_instance(1, 2, 2);
        let opts = SolveOptions {
            max_outer_iters: 0,
            ..quick_opts()
        };
        for t in [
            solve_transformed_ao(&cfg, &sc, &init, &opts).unwrap(),
            solve_ao_baseline(&cfg, &sc, &init, &opts).unwrap(),
            solve_gd(&cfg, &sc, &init, &opts, 0).unwrap(),
            solve_et_ca(&cfg, &sc, &interior(&init, &cfg), &opts).unwrap(),
        ] {
            assert_eq!(t.records.len(), 1);
            assert_eq!(t.best_wsr, t.records[0].wsr);
            assert_eq!(t.last.d.0, init.d.0);
        }
    }

    #[test]
    fn trajectories_are_well_formed() {
        let (cfg, sc, init) = small_instance(2, 2, 2);
        let opts = quick_opts();
        let n = opts.max_outer_iters;
        assert_well_formed(&cfg, &solve_transformed_ao(&cfg, &sc, &init, &opts).unwrap(), n);
        assert_well_formed(&cfg, &solve_ao_baseline(&cfg, &sc, &init, &opts).unwrap(), n);
        assert_well_formed(&cfg, &solve_gd(&cfg, &sc, &init, &opts, 1).unwrap(), n);
        assert_well_formed(
            &cfg,
            &solve_et_ca(&cfg, &sc, &interior(&init, &cfg), &opts).unwrap(),
            n,
        );
    }

    #[test]
    fn objective_equals_wsr_when_no_penalty_is_active() {
        // Zero SINR floors switch every penalty term off, so the reported
        // internal objective must coincide with the exact rate, bit for bit.
        let (mut cfg, sc, init) = small_instance(3, 2, 2);
        cfg.sinr_min = vec![0.0, 0.0];
        let opts = quick_opts();
        for t in [
            solve_transformed_ao(&cfg, &sc, &init, &opts).unwrap(),
            solve_ao_baseline(&cfg, &sc, &init, &opts).unwrap(),
            solve_gd(&cfg, &sc, &init, &opts, 1).unwrap(),
        ] {
            for r in &t.records {
                assert_eq!(r.objective.to_bits(), r.wsr.to_bits());
            }
        }
        // The barrier solver keeps its log term even with no penalty.
        let t = solve_et_ca(&cfg, &sc, &interior(&init, &cfg), &opts).unwrap();
        for r in &t.records {
            assert!(r.objective < r.wsr, "barrier term must pull the objective down");
        }
    }

    #[test]
    fn solvers_improve_a_cold_start() {
        // Start far from anything useful; every iterative solver should
        // strictly improve the exact objective on this easy instance.
        let (cfg, sc, _) = small_instance(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let init = SolutionState {
            p: random_beamforming(&cfg, &mut rng).unwrap(),
            d: AntennaPositions(vec![0.0, 0.0]),
        };
        let opts = SolveOptions {
            max_outer_iters: 40,
            step_d: 5e-2,
            ..quick_opts()
        };
        let w0 = evaluate_wsr(&cfg, &sc, &init).unwrap();
        for t in [
            solve_transformed_ao(&cfg, &sc, &init, &opts).unwrap(),
            solve_ao_baseline(&cfg, &sc, &init, &opts).unwrap(),
            solve_gd(&cfg, &sc, &init, &opts, 1).unwrap(),
            solve_et_ca(&cfg, &sc, &interior(&init, &cfg), &opts).unwrap(),
        ] {
            assert!(t.best_wsr > w0, "no improvement: {} vs init {}", t.best_wsr, w0);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (cfg, sc, init) = small_instance(4, 2, 2);
        let opts = quick_opts();
        let interior_init = interior(&init, &cfg);
        let runs: [Box<dyn Fn() -> Result<Trajectory>>; 4] = [
            Box::new(|| solve_transformed_ao(&cfg, &sc, &init, &opts)),
            Box::new(|| solve_ao_baseline(&cfg, &sc, &init, &opts)),
            Box::new(|| solve_gd(&cfg, &sc, &init, &opts, 2)),
            Box::new(|| solve_et_ca(&cfg, &sc, &interior_init, &opts)),
        ];
        for run in runs {
            let a = run().unwrap();
            let b = run().unwrap();
            for (ra, rb) in a.records.iter().zip(&b.records) {
                assert_eq!(ra.wsr.to_bits(), rb.wsr.to_bits());
                assert_eq!(ra.objective.to_bits(), rb.objective.to_bits());
                assert_eq!(ra.best_wsr.to_bits(), rb.best_wsr.to_bits());
                assert_eq!(ra.min_qos_slack.to_bits(), rb.min_qos_slack.to_bits());
            }
            assert_eq!(a.last.p, b.last.p);
            assert_eq!(a.last.d.0, b.last.d.0);
        }
    }

    #[test]
    fn stall_window_cuts_the_run_short() {
        let (cfg, sc, init) = small_instance(12, 2, 2);
        let opts = SolveOptions {
            max_outer_iters: 200,
            // An absurd improvement demand trips the window immediately.
            tol: 1e9,
            tol_window: 3,
            ..quick_opts()
        };
        let t = solve_transformed_ao(&cfg, &sc, &init, &opts).unwrap();
        // The init record plus the earliest window over which the running
        // best can fail to improve by `tol`.
        assert_eq!(t.records.len(), opts.tol_window + 1);
        let full = SolveOptions { tol: 0.0, ..opts };
        let t = solve_transformed_ao(&cfg, &sc, &init, &full).unwrap();
        assert_eq!(t.records.len(), full.max_outer_iters + 1);
    }

    #[test]
    fn et_ca_rejects_boundary_and_exterior_starts() {
        let (cfg, sc, init) = small_instance(5, 2, 2);
        // The matched-filter init sits exactly on the power sphere.
        assert!((init.p.total_power() - cfg.total_power).abs() <= POWER_TOL * cfg.total_power);
        match solve_et_ca(&cfg, &sc, &init, &quick_opts()) {
            Err(Error::BarrierDomain { slack }) => assert!(slack <= 0.0),
            other => panic!("expected a barrier-domain error, got {other:?}"),
        }
        let outside = SolutionState {
            p: normalize_power(&init.p, 2.0 * cfg.total_power).unwrap(),
            d: init.d.clone(),
        };
        assert!(matches!(
            solve_et_ca(&cfg, &sc, &outside, &quick_opts()),
            Err(Error::BarrierDomain { .. })
        ));
    }

    #[test]
    fn et_ca_stays_strictly_interior() {
        let (cfg, sc, init) = small_instance(5, 2, 2);
        let opts = SolveOptions {
            max_outer_iters: 15,
            ..quick_opts()
        };
        let t = solve_et_ca(&cfg, &sc, &interior(&init, &cfg), &opts).unwrap();
        for r in &t.records {
            assert!(
                r.power_slack > 0.0,
                "iterate touched the sphere at iter {}: slack {}",
                r.iter,
                r.power_slack
            );
        }
        assert!(t.last.p.total_power() < cfg.total_power);
    }

    #[test]
    fn et_ca_weaker_barriers_fill_more_of_the_budget() {
        // With the barrier parameter held fixed per run, larger `t` leaves a
        // weaker inward force, so the final transmit power climbs toward the
        // budget monotonically across the sweep while staying below it.
        let (cfg, sc, init) = small_instance(6, 2, 2);
        let start = interior(&init, &cfg);
        let mut finals = Vec::new();
        for t in [1.0, 10.0, 100.0] {
            let opts = SolveOptions {
                max_outer_iters: 60,
                inner_iters_p: 5,
                inner_iters_d: 1,
                step_p: 1e-2,
                step_d: 1e-6,
                t_growth: 1.0,
                pen: PenaltyConfig {
                    barrier_t: t,
                    ..PenaltyConfig::default()
                },
                ..SolveOptions::default()
            };
            let traj = solve_et_ca(&cfg, &sc, &start, &opts).unwrap();
            finals.push(traj.last.p.total_power());
        }
        assert!(
            finals[0] < finals[1] && finals[1] < finals[2],
            "final powers not monotone in t: {finals:?}"
        );
        assert!(finals.iter().all(|pw| *pw < cfg.total_power));
    }

    #[test]
    fn gd_rejects_a_lag_beyond_the_budget() {
        let (cfg, sc, init) = small_instance(6, 2, 2);
        let opts = quick_opts();
        assert!(matches!(
            solve_gd(&cfg, &sc, &init, &opts, opts.max_outer_iters),
            Err(Error::InvalidParameter(_))
        ));
        // A lag equal to budget-1 clamps every lookup to the start and must
        // still complete feasibly.
        let t = solve_gd(&cfg, &sc, &init, &opts, opts.max_outer_iters - 1).unwrap();
        assert_well_formed(&cfg, &t, opts.max_outer_iters);
    }

    #[test]
    fn gd_zero_lag_differs_from_stale_gradients() {
        let (cfg, sc, init) = small_instance(13, 2, 2);
        let opts = SolveOptions {
            max_outer_iters: 6,
            ..quick_opts()
        };
        let fresh = solve_gd(&cfg, &sc, &init, &opts, 0).unwrap();
        let stale = solve_gd(&cfg, &sc, &init, &opts, 3).unwrap();
        // Identical first step (no history yet), divergence afterwards.
        assert_eq!(fresh.records[1].wsr.to_bits(), stale.records[1].wsr.to_bits());
        assert!(fresh
            .records
            .iter()
            .zip(&stale.records)
            .any(|(a, b)| a.wsr.to_bits() != b.wsr.to_bits()));
    }

    #[test]
    fn udb_is_single_shot_and_deterministic() {
        let (cfg, sc, _) = small_instance(7, 3, 2);
        let a = solve_udb(&cfg, &sc, 11).unwrap();
        assert_eq!(a.d.0, vec![10.0 / 6.0, 3.0 * 10.0 / 6.0, 5.0 * 10.0 / 6.0]);
        assert!((a.p.total_power() - cfg.total_power).abs() <= POWER_TOL * cfg.total_power);
        let b = solve_udb(&cfg, &sc, 11).unwrap();
        assert_eq!(a.p, b.p);
        assert_ne!(a.p, solve_udb(&cfg, &sc, 12).unwrap().p);
    }

    #[test]
    fn exhaustive_grid_guard_trips() {
        let cfg = SystemConfig::new_28ghz(3, 2, 30.0, 20.0);
        let sc = Scenario {
            users: vec![(1.0, 1.0), (2.0, 2.0)],
            waveguide_y: vec![3.0, 10.0, 17.0],
            feed_x: vec![0.0; 3],
        };
        match solve_exhaustive(&cfg, &sc, 0.01, &ExhaustiveOptions::default()) {
            Err(Error::GridTooLarge { points, limit }) => {
                assert_eq!(points, 2001u128.pow(3));
                assert_eq!(limit, GRID_LIMIT);
            }
            other => panic!("expected the grid guard, got {other:?}"),
        }
    }

    #[test]
    fn exhaustive_finds_the_single_link_optimum() {
        // K = M = 1: the rate only depends on the free-path distance, so
        // the best grid point is the one closest to the user's x.
        let cfg = SystemConfig::new_28ghz(1, 1, 30.0, 4.0);
        let sc = Scenario {
            users: vec![(2.63, 2.0)],
            waveguide_y: vec![2.0],
            feed_x: vec![0.0],
        };
        let opts = ExhaustiveOptions {
            restarts: 2,
            rounds: 10,
            seed: 5,
            ..ExhaustiveOptions::default()
        };
        let sol = solve_exhaustive(&cfg, &sc, 0.1, &opts).unwrap();
        assert!(
            (sol.d.0[0] - 2.6).abs() < 0.051,
            "grid point {} not nearest the user",
            sol.d.0[0]
        );
        // With a single user the whole budget on the matched direction is
        // optimal, so the solve must sit essentially at that rate.
        let h = compute_channel(&cfg, &sc, &sol.d).unwrap();
        let ideal = compute_wsr(&h, &matched_filter_init(&cfg, &h).unwrap(), &cfg).unwrap();
        let got = compute_wsr(&h, &sol.p, &cfg).unwrap();
        assert!(got >= 0.999 * ideal, "got {got}, ideal {ideal}");
    }

    #[test]
    fn exhaustive_refinement_never_hurts() {
        let cfg = SystemConfig::new_28ghz(1, 1, 30.0, 4.0);
        let sc = Scenario {
            users: vec![(1.77, 3.1)],
            waveguide_y: vec![2.0],
            feed_x: vec![0.0],
        };
        let opts = ExhaustiveOptions {
            restarts: 2,
            rounds: 8,
            seed: 9,
            ..ExhaustiveOptions::default()
        };
        // Halving the step keeps every coarse point (same f64 coordinates,
        // hence the same restart streams), so the fine optimum dominates.
        let a = solve_exhaustive(&cfg, &sc, 0.2, &opts).unwrap();
        let b = solve_exhaustive(&cfg, &sc, 0.1, &opts).unwrap();
        let wa = evaluate_wsr(&cfg, &sc, &a).unwrap();
        let wb = evaluate_wsr(&cfg, &sc, &b).unwrap();
        assert!(wb >= wa, "refined {wb} < coarse {wa}");
    }

    #[test]
    fn exhaustive_is_deterministic_under_parallelism() {
        let cfg = SystemConfig::new_28ghz(1, 2, 30.0, 4.0);
        let sc = Scenario {
            users: vec![(0.9, 1.2), (3.0, 2.8)],
            waveguide_y: vec![2.0],
            feed_x: vec![0.0],
        };
        let opts = ExhaustiveOptions {
            restarts: 3,
            rounds: 6,
            seed: 13,
            ..ExhaustiveOptions::default()
        };
        let a = solve_exhaustive(&cfg, &sc, 0.25, &opts).unwrap();
        let b = solve_exhaustive(&cfg, &sc, 0.25, &opts).unwrap();
        assert_eq!(a.d.0, b.d.0);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn matched_filter_hits_the_power_budget() {
        let (cfg, sc, init) = small_instance(8, 3, 2);
        let h = compute_channel(&cfg, &sc, &init.d).unwrap();
        let p = matched_filter_init(&cfg, &h).unwrap();
        assert!((p.total_power() - cfg.total_power).abs() <= POWER_TOL * cfg.total_power);
        // Each column carries an equal share.
        for m in 0..2 {
            let col_power: f64 = (0..3).map(|k| p.entry(k, m).norm_sqr()).sum();
            assert!((col_power - cfg.total_power / 2.0).abs() <= 1e-9 * cfg.total_power);
        }
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let (cfg, sc, init) = small_instance(9, 2, 2);
        let bad = SolutionState {
            p: BeamformingMatrix::zeros(3, 2),
            d: init.d.clone(),
        };
        assert!(matches!(
            solve_transformed_ao(&cfg, &sc, &bad, &quick_opts()),
            Err(Error::ShapeMismatch(_))
        ));
        let bad_opts = SolveOptions {
            step_p: 0.0,
            ..quick_opts()
        };
        assert!(solve_transformed_ao(&cfg, &sc, &init, &bad_opts).is_err());
    }
}

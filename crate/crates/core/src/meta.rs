//! Learned inner optimizers for the joint problem.
//!
//! Two small MLPs replace the hand-tuned step rules: a beamforming network
//! mapping the (normalized) stacked surrogate gradient to an update
//! direction, and a position network doing the same for the antenna
//! positions. Training unrolls the full inner loop on a batch of channel
//! realizations ("sub-tasks") that all start from one shared point, scores
//! each completed run by its exact weighted sum rate, and descends the mean
//! negated rate through the unrolled computation with Adam. The same
//! generic core drives both the recorded (training) and the plain
//! (inference) path, so the two always compute identical iterates.
//!
//! Networks bound their output to `[-1, 1]` per coordinate via `tanh`; the
//! step scales `lambda_p` / `lambda_d` convert that to an actual update, so
//! a single inner step can never move farther than the scale allows.
//! Inputs are normalized to unit length before entering a network: raw
//! gradient magnitudes here span several orders of magnitude and would pin
//! the `tanh` layers, which kills the meta-gradient. The normalization is
//! part of the recorded graph, so training sees through it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::algebra::{c_norm_sqr, Algebra, Cx};
use crate::autodiff::{AdamState, Reals, Tape, Var};
use crate::error::{Error, Result};
use crate::graph;
use crate::solvers::{IterRecord, ObjectiveKind, SolutionState, Tracker, Trajectory};
use crate::system::{
    check_feasibility, compute_channel, compute_sinr, AntennaPositions, BeamformingMatrix,
    Scenario, SystemConfig,
};
use crate::transforms::{update_auxiliaries, LinearizationPoint};

const INPUT_NORM_EPS: f64 = 1e-12;

/// Which objective the inner gradients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaVariant {
    /// Surrogate gradients: auxiliaries plus an anchor linearization,
    /// refreshed once per sub-task (the joint-optimization variant).
    TransformedInputs,
    /// Raw penalized weighted-sum-rate gradients.
    RawInputs,
}

/// Dense `dims[0] -> ... -> dims.last()` network with ELU hidden layers and
/// a `tanh` output layer. Parameters live in one flat buffer: per layer,
/// row-major weights then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output dims");
        MlpSpec { dims }
    }

    pub fn param_count(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init for each layer.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in self.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                out.push(bound * (2.0 * rng.gen::<f64>() - 1.0));
            }
        }
        out
    }
}

/// Forward pass, generic over the value backend.
pub fn mlp_forward<A: Algebra>(
    alg: &mut A,
    spec: &MlpSpec,
    params: &[A::V],
    input: &[A::V],
) -> Vec<A::V> {
    assert_eq!(input.len(), spec.dims[0], "input width");
    assert_eq!(params.len(), spec.param_count(), "parameter count");
    let mut x = input.to_vec();
    let mut off = 0;
    let last = spec.dims.len() - 2;
    for (l, w) in spec.dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = &params[off..off + fan_in * fan_out];
        let biases = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let mut next = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let z = alg.dot(&weights[o * fan_in..(o + 1) * fan_in], &x);
            let z = alg.add(z, biases[o]);
            next.push(if l == last { alg.tanh(z) } else { alg.elu(z) });
        }
        x = next;
    }
    x
}

/// The two learned optimizers plus their Adam state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaNetworks {
    pub variant: MetaVariant,
    pub waveguides: usize,
    pub users: usize,
    pub bn_spec: MlpSpec,
    pub an_spec: MlpSpec,
    pub bn_params: Vec<f64>,
    pub an_params: Vec<f64>,
    pub bn_adam: AdamState,
    pub an_adam: AdamState,
}

impl MetaNetworks {
    pub fn new(
        variant: MetaVariant,
        k: usize,
        m: usize,
        hidden: usize,
        alpha_p: f64,
        alpha_d: f64,
        seed: u64,
    ) -> Self {
        let stacked = 2 * k * m;
        let bn_spec = MlpSpec::new(vec![stacked, hidden, hidden, stacked]);
        let an_spec = MlpSpec::new(vec![k, hidden, hidden, k]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bn_params = bn_spec.init_params(&mut rng);
        let an_params = an_spec.init_params(&mut rng);
        let bn_adam = AdamState::new(bn_params.len(), alpha_p);
        let an_adam = AdamState::new(an_params.len(), alpha_d);
        MetaNetworks {
            variant,
            waveguides: k,
            users: m,
            bn_spec,
            an_spec,
            bn_params,
            an_params,
            bn_adam,
            an_adam,
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.waveguides != cfg.num_waveguides || self.users != cfg.num_users {
            return Err(Error::ShapeMismatch(format!(
                "networks trained for {}x{}, system is {}x{}",
                self.waveguides, self.users, cfg.num_waveguides, cfg.num_users
            )));
        }
        if self.bn_params.len() != self.bn_spec.param_count()
            || self.an_params.len() != self.an_spec.param_count()
        {
            return Err(Error::ShapeMismatch("parameter buffers resized".into()));
        }
        Ok(())
    }
}

/// Training and inner-loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Meta-training epochs (outer Adam updates).
    pub epochs: usize,
    /// Inner gradient/network steps per block per sub-task.
    pub inner_steps: usize,
    /// Hidden width of both networks.
    pub hidden: usize,
    /// Beamforming update scale (absolute, in amplitude units).
    pub lambda_p: f64,
    /// Position update scale, meters per step.
    pub lambda_d: f64,
    /// Adam learning rate for the beamforming network.
    pub alpha_p: f64,
    /// Adam learning rate for the position network.
    pub alpha_d: f64,
    /// Weight on minimum-SINR violations inside the input gradients.
    pub penalty_mu: f64,
    /// Ablation: feed the networks value-only inputs, cutting the
    /// meta-gradient path through the input gradients.
    pub detach_inputs: bool,
    /// Ablation: recompute the auxiliary variables from the current iterate
    /// before every inner step (as plain values) instead of freezing them at
    /// the sub-task start. Off by default.
    pub refresh_aux: bool,
    /// Seed for network initialization.
    pub seed: u64,
}

impl MetaConfig {
    /// Defaults scaled to a system: the beamforming step scale tracks the
    /// per-entry amplitude `sqrt(total_power / (K M))`.
    pub fn for_system(cfg: &SystemConfig, seed: u64) -> Self {
        let km = (cfg.num_waveguides * cfg.num_users) as f64;
        MetaConfig {
            epochs: 100,
            inner_steps: 10,
            hidden: 256,
            lambda_p: 0.01 * (cfg.total_power / km).sqrt(),
            lambda_d: 0.05,
            alpha_p: 2e-4,
            alpha_d: 5e-4,
            penalty_mu: 10.0,
            detach_inputs: false,
            refresh_aux: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_d", self.lambda_d),
            ("alpha_p", self.alpha_p),
            ("alpha_d", self.alpha_d),
            ("penalty_mu", self.penalty_mu),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.inner_steps == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter(
                "inner_steps and hidden must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Plain-value snapshots of one inner run, for invariant checks.
#[derive(Debug, Clone, Default)]
pub struct SubtaskTrace {
    /// `||p||_F^2` after every beamforming step.
    pub powers: Vec<f64>,
    /// Positions after every position step.
    pub positions: Vec<Vec<f64>>,
}

struct SubtaskOut<V> {
    wsr: V,
    p: Vec<Cx<V>>,
    d: Vec<V>,
}

/// Normalize a stacked vector to unit length (plus epsilon); keeps network
/// inputs inside the active range of `tanh` whatever the gradient scale.
fn condition<A: Algebra>(alg: &mut A, g: &[A::V]) -> Vec<A::V> {
    let sq = alg.dot(g, g);
    let norm = alg.sqrt(sq);
    let denom = alg.add_const(norm, INPUT_NORM_EPS);
    g.iter().map(|gi| alg.div(*gi, denom)).collect()
}

fn detach<A: Algebra>(alg: &mut A, g: &[A::V]) -> Vec<A::V> {
    g.iter().map(|gi| alg.lit(alg.val(*gi))).collect()
}

fn stack_to_cx<V: Copy>(x: &[V]) -> Vec<Cx<V>> {
    let n = x.len() / 2;
    (0..n).map(|i| Cx::new(x[i], x[n + i])).collect()
}

fn cx_to_stack<V: Copy>(p: &[Cx<V>]) -> Vec<V> {
    p.iter()
        .map(|c| c.re)
        .chain(p.iter().map(|c| c.im))
        .collect()
}

/// One unrolled inner run from the shared start, generic over the backend:
/// `inner_steps` network-driven beamforming updates (each renormalized onto
/// the power sphere), then `inner_steps` network-driven position updates
/// (each clamped into the box), scored by the exact weighted sum rate at
/// the end. Auxiliaries and the linearization anchor are computed once at
/// the start and frozen for the whole run (unless `refresh_aux` asks for
/// per-step auxiliary recomputation).
#[allow(clippy::too_many_arguments)]
fn run_subtask_core<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    variant: MetaVariant,
    bn_spec: &MlpSpec,
    bn_params: &[A::V],
    an_spec: &MlpSpec,
    an_params: &[A::V],
    mcfg: &MetaConfig,
    mut trace: Option<&mut SubtaskTrace>,
) -> Result<SubtaskOut<A::V>> {
    let (k, m) = (cfg.num_waveguides, cfg.num_users);
    let h0 = compute_channel(cfg, sc, &init.d)?;
    let hv = graph::lift_complex(alg, h0.as_slice());
    let mut p = graph::lift_complex(alg, init.p.as_slice());
    let mut d: Vec<A::V> = init.d.0.iter().map(|x| alg.lit(*x)).collect();

    // Frozen per-run quantities, from plain values at the start.
    let stats = compute_sinr(&h0, &init.p, cfg.noise_power)?;
    let aux = update_auxiliaries(&stats, cfg.noise_power);
    let (mut gamma, mut y) = (aux.gamma, aux.y);
    let lin = match variant {
        MetaVariant::TransformedInputs => Some(LinearizationPoint::at(&h0, &init.p)?),
        MetaVariant::RawInputs => None,
    };
    // Value-only auxiliary recomputation from in-graph gain/interference
    // nodes; the refreshed values enter the next gradient as constants.
    let refresh =
        |alg: &mut A, gain: &[A::V], interf: &[A::V], gamma: &mut [f64], y: &mut [f64]| {
            for mm in 0..gamma.len() {
                let g = alg.val(gain[mm]);
                let i = alg.val(interf[mm]);
                gamma[mm] = (g / (i + cfg.noise_power)).max(0.0);
                y[mm] = (g.sqrt() / (g + i + cfg.noise_power)).max(0.0);
            }
        };

    let sqrt_power = alg.lit(cfg.total_power.sqrt());
    for _ in 0..mcfg.inner_steps {
        if mcfg.refresh_aux && variant == MetaVariant::TransformedInputs {
            let s = graph::couplings(alg, &hv, &p, k, m);
            let (gain, interf) = graph::gain_interference(alg, &s, m);
            refresh(alg, &gain, &interf, &mut gamma, &mut y);
        }
        let g = match &lin {
            Some(lin) => graph::surrogate_grad_p(
                alg,
                &hv,
                &p,
                k,
                m,
                &lin.couplings,
                &lin.sqrt_gain,
                &lin.interference,
                &cfg.weights,
                cfg.noise_power,
                &gamma,
                &y,
                &cfg.sinr_min,
                mcfg.penalty_mu,
            ),
            None => graph::raw_grad_p(
                alg,
                &hv,
                &p,
                k,
                m,
                &cfg.weights,
                cfg.noise_power,
                &cfg.sinr_min,
                mcfg.penalty_mu,
            ),
        };
        let g = condition(alg, &g);
        let g = if mcfg.detach_inputs {
            detach(alg, &g)
        } else {
            g
        };
        let delta = mlp_forward(alg, bn_spec, bn_params, &g);
        let mut x = cx_to_stack(&p);
        for (xi, di) in x.iter_mut().zip(&delta) {
            let step = alg.scale(*di, mcfg.lambda_p);
            *xi = alg.add(*xi, step);
        }
        // Renormalize onto the power sphere, inside the recorded graph.
        let sq = alg.dot(&x, &x);
        let norm = alg.sqrt(sq);
        let scale = alg.div(sqrt_power, norm);
        for xi in x.iter_mut() {
            *xi = alg.mul(*xi, scale);
        }
        p = stack_to_cx(&x);
        if let Some(t) = trace.as_deref_mut() {
            let total: f64 = p
                .iter()
                .map(|c| {
                    let n = c_norm_sqr(alg, *c);
                    alg.val(n)
                })
                .sum();
            t.powers.push(total);
        }
    }

    let (lo, hi) = cfg.position_box;
    for _ in 0..mcfg.inner_steps {
        if mcfg.refresh_aux && variant == MetaVariant::TransformedInputs {
            let hd = graph::channel(alg, cfg, sc, &d);
            let s = graph::couplings(alg, &hd, &p, k, m);
            let (gain, interf) = graph::gain_interference(alg, &s, m);
            refresh(alg, &gain, &interf, &mut gamma, &mut y);
        }
        let g = match variant {
            MetaVariant::TransformedInputs => {
                graph::bracket_grad_d(alg, cfg, sc, &d, &p, &cfg.weights, &gamma, &y)
            }
            MetaVariant::RawInputs => graph::raw_grad_d(
                alg,
                cfg,
                sc,
                &d,
                &p,
                &cfg.weights,
                cfg.noise_power,
                &cfg.sinr_min,
                mcfg.penalty_mu,
            ),
        };
        let g = condition(alg, &g);
        let g = if mcfg.detach_inputs {
            detach(alg, &g)
        } else {
            g
        };
        let delta = mlp_forward(alg, an_spec, an_params, &g);
        for (di, dd) in d.iter_mut().zip(&delta) {
            let step = alg.scale(*dd, mcfg.lambda_d);
            let moved = alg.add(*di, step);
            *di = alg.clamp(moved, lo, hi);
        }
        if let Some(t) = trace.as_deref_mut() {
            t.positions.push(d.iter().map(|x| alg.val(*x)).collect());
        }
    }

    let h_final = graph::channel(alg, cfg, sc, &d);
    let s = graph::couplings(alg, &h_final, &p, k, m);
    let (gain, interf) = graph::gain_interference(alg, &s, m);
    let wsr = graph::wsr_value(alg, &gain, &interf, &cfg.weights, cfg.noise_power);
    Ok(SubtaskOut { wsr, p, d })
}

fn subtask_checks(
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    init: &SolutionState,
    nets: &MetaNetworks,
    mcfg: &MetaConfig,
) -> Result<()> {
    cfg.validate()?;
    mcfg.validate()?;
    nets.validate(cfg)?;
    if scenarios.is_empty() {
        return Err(Error::InvalidParameter(
            "meta training needs at least one sub-task".into(),
        ));
    }
    for sc in scenarios {
        sc.validate(cfg)?;
    }
    if init.p.waveguides() != cfg.num_waveguides
        || init.p.users() != cfg.num_users
        || init.d.len() != cfg.num_waveguides
    {
        return Err(Error::ShapeMismatch("shared init shape".into()));
    }
    Ok(())
}

/// Plain-value inner run on one scenario. Returns the final state together
/// with its loss, the negated exact weighted sum rate.
pub fn run_subtask(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    nets: &MetaNetworks,
    mcfg: &MetaConfig,
    trace: Option<&mut SubtaskTrace>,
) -> Result<(SolutionState, f64)> {
    subtask_checks(cfg, std::slice::from_ref(sc), init, nets, mcfg)?;
    let mut alg = Reals;
    let out = run_subtask_core(
        &mut alg,
        cfg,
        sc,
        init,
        nets.variant,
        &nets.bn_spec,
        &nets.bn_params,
        &nets.an_spec,
        &nets.an_params,
        mcfg,
        trace,
    )?;
    let p = BeamformingMatrix::from_stacked(
        cfg.num_waveguides,
        cfg.num_users,
        &cx_to_stack(&out.p),
    )?;
    Ok((
        SolutionState {
            p,
            d: AntennaPositions(out.d),
        },
        -out.wsr,
    ))
}

/// Recorded inner run on one scenario: unrolls the loop on a tape with the
/// network parameters as leaves and returns the mean-ready loss gradient
/// contributions `d(-wsr)/d(theta)` plus the plain outcome.
fn subtask_loss_and_grads(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    nets: &MetaNetworks,
    mcfg: &MetaConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>, SolutionState, f64)> {
    let mut tape = Tape::new();
    let bn_leaves: Vec<Var> = nets.bn_params.iter().map(|w| tape.leaf(*w)).collect();
    let an_leaves: Vec<Var> = nets.an_params.iter().map(|w| tape.leaf(*w)).collect();
    let out = run_subtask_core(
        &mut tape,
        cfg,
        sc,
        init,
        nets.variant,
        &nets.bn_spec,
        &bn_leaves,
        &nets.an_spec,
        &an_leaves,
        mcfg,
        None,
    )?;
    let loss = tape.neg(out.wsr);
    let grads = tape.backward(loss);
    let g_bn = grads.get_all(&bn_leaves);
    let g_an = grads.get_all(&an_leaves);
    let wsr = tape.value(out.wsr);
    let p_stack: Vec<f64> = out
        .p
        .iter()
        .map(|c| tape.value(c.re))
        .chain(out.p.iter().map(|c| tape.value(c.im)))
        .collect();
    let d_vals: Vec<f64> = out.d.iter().map(|v| tape.value(*v)).collect();
    let p = BeamformingMatrix::from_stacked(cfg.num_waveguides, cfg.num_users, &p_stack)?;
    Ok((
        -wsr,
        g_bn,
        g_an,
        SolutionState {
            p,
            d: AntennaPositions(d_vals),
        },
        wsr,
    ))
}

/// Mean loss over a batch of sub-tasks and its gradients with respect to
/// both parameter buffers. Sub-tasks are evaluated in parallel but reduced
/// in index order, so the result is bit-reproducible.
pub fn mean_loss_and_grads(
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    init: &SolutionState,
    nets: &MetaNetworks,
    mcfg: &MetaConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<(SolutionState, f64)>)> {
    subtask_checks(cfg, scenarios, init, nets, mcfg)?;
    let per: Vec<_> = scenarios
        .par_iter()
        .map(|sc| subtask_loss_and_grads(cfg, sc, init, nets, mcfg))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mut loss = 0.0;
    let mut g_bn = vec![0.0; nets.bn_params.len()];
    let mut g_an = vec![0.0; nets.an_params.len()];
    let mut sols = Vec::with_capacity(per.len());
    for (l, gb, ga, state, wsr) in per {
        loss += l;
        for (acc, g) in g_bn.iter_mut().zip(&gb) {
            *acc += g;
        }
        for (acc, g) in g_an.iter_mut().zip(&ga) {
            *acc += g;
        }
        sols.push((state, wsr));
    }
    loss /= n;
    for g in g_bn.iter_mut() {
        *g /= n;
    }
    for g in g_an.iter_mut() {
        *g /= n;
    }
    Ok((loss, g_bn, g_an, sols))
}

/// Mean loss only, through the plain backend; used by derivative checks.
pub fn mean_loss(
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    init: &SolutionState,
    nets: &MetaNetworks,
    mcfg: &MetaConfig,
) -> Result<f64> {
    subtask_checks(cfg, scenarios, init, nets, mcfg)?;
    let mut alg = Reals;
    let mut total = 0.0;
    for sc in scenarios {
        let out = run_subtask_core(
            &mut alg,
            cfg,
            sc,
            init,
            nets.variant,
            &nets.bn_spec,
            &nets.bn_params,
            &nets.an_spec,
            &nets.an_params,
            mcfg,
            None,
        )?;
        total += -out.wsr;
    }
    Ok(total / scenarios.len() as f64)
}

/// Training outcome: the updated networks, per-epoch records (the `wsr`
/// column is the epoch's mean final rate; `best_wsr` tracks the best single
/// completed run so far), and the best run overall.
#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub nets: MetaNetworks,
    pub records: Vec<IterRecord>,
    pub epoch_mean_wsr: Vec<f64>,
    pub best: SolutionState,
    pub best_wsr: f64,
    pub best_scenario: usize,
}

impl MetaOutcome {
    /// View the training run as a solver trajectory; the final state is the
    /// best tracked run, which is what the algorithm outputs.
    pub fn into_trajectory(self) -> Trajectory {
        let best_wsr = self.best_wsr;
        Trajectory {
            records: self.records,
            best: self.best.clone(),
            best_wsr,
            last: self.best,
            last_wsr: best_wsr,
        }
    }
}

/// Meta-train the two networks: each of `mcfg.epochs` epochs unrolls every
/// sub-task from the shared init under the current parameters, averages the
/// negated final rates, and takes one Adam step per network on that mean.
pub fn train_meta(
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    init: &SolutionState,
    mcfg: &MetaConfig,
    variant: MetaVariant,
    warm: Option<MetaNetworks>,
) -> Result<MetaOutcome> {
    let mut nets = match warm {
        Some(nets) => nets,
        None => MetaNetworks::new(
            variant,
            cfg.num_waveguides,
            cfg.num_users,
            mcfg.hidden,
            mcfg.alpha_p,
            mcfg.alpha_d,
            mcfg.seed,
        ),
    };
    subtask_checks(cfg, scenarios, init, &nets, mcfg)?;
    let start = std::time::Instant::now();
    let mut records = Vec::with_capacity(mcfg.epochs);
    let mut epoch_mean_wsr = Vec::with_capacity(mcfg.epochs);
    let mut best: Option<(usize, SolutionState, f64)> = None;
    for epoch in 0..mcfg.epochs {
        let (loss, g_bn, g_an, sols) = mean_loss_and_grads(cfg, scenarios, init, &nets, mcfg)?;
        for (j, (state, wsr)) in sols.into_iter().enumerate() {
            if best.as_ref().map_or(true, |(_, _, b)| wsr > *b) {
                best = Some((j, state, wsr));
            }
        }
        nets.bn_adam.step_descent(&mut nets.bn_params, &g_bn)?;
        nets.an_adam.step_descent(&mut nets.an_params, &g_an)?;
        let (bj, best_state, best_wsr) = best.as_ref().expect("at least one sub-task ran");
        let h = compute_channel(cfg, &scenarios[*bj], &best_state.d)?;
        let report = check_feasibility(&h, &best_state.p, &best_state.d, cfg)?;
        epoch_mean_wsr.push(-loss);
        records.push(IterRecord {
            iter: epoch,
            wsr: -loss,
            objective: -loss,
            best_wsr: *best_wsr,
            min_qos_slack: report.min_qos_slack(),
            power_slack: report.power_slack,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    // Zero epochs means pure evaluation of a warm start; still unroll the
    // sub-tasks once so the outcome is well-defined.
    if best.is_none() {
        let (loss, _, _, sols) = mean_loss_and_grads(cfg, scenarios, init, &nets, mcfg)?;
        for (j, (state, wsr)) in sols.into_iter().enumerate() {
            if best.as_ref().map_or(true, |(_, _, b)| wsr > *b) {
                best = Some((j, state, wsr));
            }
        }
        epoch_mean_wsr.push(-loss);
    }
    let (best_scenario, best_state, best_wsr) = best.expect("at least one sub-task ran");
    Ok(MetaOutcome {
        nets,
        records,
        epoch_mean_wsr,
        best: best_state,
        best_wsr,
        best_scenario,
    })
}

/// Meta-train on surrogate-gradient inputs (the joint-optimization variant)
/// with freshly initialized networks; the algorithm's output is its
/// MAX-tracked best state across all completed sub-task runs, plus the
/// per-epoch trace.
pub fn gml_jo(
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    init: &SolutionState,
    mcfg: &MetaConfig,
) -> Result<MetaOutcome> {
    train_meta(cfg, scenarios, init, mcfg, MetaVariant::TransformedInputs, None)
}

/// Same training loop on raw penalized-rate gradients (no transforms, no
/// linearization).
pub fn gml_baseline(
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    init: &SolutionState,
    mcfg: &MetaConfig,
) -> Result<MetaOutcome> {
    train_meta(cfg, scenarios, init, mcfg, MetaVariant::RawInputs, None)
}

/// Apply trained networks as a solver on one scenario: each round refreshes
/// the auxiliaries/anchor from the current iterate and unrolls one inner
/// run continuing from it. Reported like any other solver trajectory.
pub fn apply_nets(
    cfg: &SystemConfig,
    sc: &Scenario,
    init: &SolutionState,
    nets: &MetaNetworks,
    mcfg: &MetaConfig,
    rounds: usize,
) -> Result<Trajectory> {
    subtask_checks(cfg, std::slice::from_ref(sc), init, nets, mcfg)?;
    let mut state = SolutionState {
        p: crate::system::normalize_power(&init.p, cfg.total_power)?,
        d: crate::system::project_positions(&init.d, cfg.position_box)?,
    };
    let mut tracker = Tracker::new();
    let h = compute_channel(cfg, sc, &state.d)?;
    let mut wsr = tracker.observe(0, cfg, &h, &state.p, &state.d, ObjectiveKind::Wsr)?;
    for round in 1..=rounds {
        let (next, _) = run_subtask(cfg, sc, &state, nets, mcfg, None)?;
        state = next;
        let h = compute_channel(cfg, sc, &state.d)?;
        wsr = tracker.observe(round, cfg, &h, &state.p, &state.d, ObjectiveKind::Wsr)?;
    }
    Ok(tracker.finish(state.p, state.d, wsr))
}

const CHECKPOINT_VERSION: u32 = 1;

/// Versioned on-disk container for trained networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: MetaConfig,
    pub nets: MetaNetworks,
}

impl Checkpoint {
    pub fn new(config: MetaConfig, nets: MetaNetworks) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config,
            nets,
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string_pretty(ckpt)
        .map_err(|e| Error::Checkpoint(format!("encode: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("decode {}: {e}", path.display())))?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            ckpt.format_version, CHECKPOINT_VERSION
        )));
    }
    Ok(ckpt)
}

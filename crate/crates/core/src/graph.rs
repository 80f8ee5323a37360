//! Backend-generic builders for the model expressions.
//!
//! Everything here is written once against [`Algebra`] so the identical
//! arithmetic can run on plain numbers or be recorded on a [`Tape`]. The
//! closed-form gradients in this module are hand-derived chain rules; the
//! test suite pins them against reverse-mode sweeps of the corresponding
//! value expressions and against central differences.
//!
//! Layout conventions (shared with [`crate::system`]):
//! * channel/beam entries `(k, m)` live at `m * K + k`;
//! * coupling entries `(m, n)` (user `m`'s channel against user `n`'s beam)
//!   live at `m * M + n`;
//! * stacked real gradients put `Re` of entry `(k, n)` at `n*K + k` and `Im`
//!   at `K*M + n*K + k`.

use num_complex::Complex64;

use crate::autodiff::algebra::{c_dot_conj, c_mul, c_norm_sqr, Algebra, Cx};
use crate::autodiff::ABS_EPS;
use crate::system::{Scenario, SystemConfig};

const LN2: f64 = std::f64::consts::LN_2;

/// Embed a complex slice as constants.
pub fn lift_complex<A: Algebra>(alg: &mut A, zs: &[Complex64]) -> Vec<Cx<A::V>> {
    zs.iter()
        .map(|z| Cx {
            re: alg.lit(z.re),
            im: alg.lit(z.im),
        })
        .collect()
}

/// Channel coefficient of waveguide `k` and user `m` as a function of the
/// antenna position `d_k`.
pub fn channel_entry<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    d_k: A::V,
    k: usize,
    m: usize,
) -> Cx<A::V> {
    let (h, _) = channel_entry_inner(alg, cfg, sc, d_k, k, m, false);
    h
}

/// Channel coefficient together with its derivative in `d_k`.
pub fn channel_entry_with_deriv<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    d_k: A::V,
    k: usize,
    m: usize,
) -> (Cx<A::V>, Cx<A::V>) {
    let (h, dh) = channel_entry_inner(alg, cfg, sc, d_k, k, m, true);
    (h, dh.unwrap())
}

fn channel_entry_inner<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    d_k: A::V,
    k: usize,
    m: usize,
    with_deriv: bool,
) -> (Cx<A::V>, Option<Cx<A::V>>) {
    let (ux, uy) = sc.users[m];
    let dy = uy - sc.waveguide_y[k];
    let dz = cfg.waveguide_height;
    let tau = 2.0 * std::f64::consts::PI;

    // The value route mirrors the concrete channel computation operation for
    // operation; the phase is thousands of radians, so any reordering would
    // cost several digits after the sine.
    let dx = alg.add_const(d_k, -ux);
    let dx2 = alg.square(dx);
    let sum_xy = alg.add_const(dx2, dy * dy);
    let rho2 = alg.add_const(sum_xy, dz * dz);
    let rho = alg.sqrt(rho2);

    let t = alg.add_const(d_k, -sc.feed_x[k]);
    let guide = alg.abs(t);

    let lam = alg.lit(cfg.carrier_wavelength);
    let free_cycles = alg.div(rho, lam);
    let lam_g = alg.lit(cfg.guided_wavelength);
    let guide_cycles = alg.div(guide, lam_g);
    let cycles = alg.add(free_cycles, guide_cycles);
    let phase = alg.scale(cycles, -tau);

    let amp_num = alg.lit(cfg.attenuation.sqrt());
    let amp = alg.div(amp_num, rho);
    let cosp = alg.cos(phase);
    let sinp = alg.sin(phase);
    let re = alg.mul(amp, cosp);
    let im = alg.mul(amp, sinp);
    let h = Cx { re, im };

    if !with_deriv {
        return (h, None);
    }

    // dh/dd = h * (-rho'/rho - j*phi'), with the guide-length slope smoothed
    // the same way the tape smooths |.|, so both gradient routes agree.
    let rho_p = alg.div(dx, rho);
    let t2 = alg.square(t);
    let t2e = alg.add_const(t2, ABS_EPS * ABS_EPS);
    let denom = alg.sqrt(t2e);
    let guide_p = alg.div(t, denom);
    let fp = alg.scale(rho_p, tau / cfg.carrier_wavelength);
    let gp = alg.scale(guide_p, tau / cfg.guided_wavelength);
    let phi_p = alg.add(fp, gp);

    let amp_slope = alg.div(rho_p, rho);
    let factor = Cx {
        re: alg.neg(amp_slope),
        im: alg.neg(phi_p),
    };
    let dh = c_mul(alg, h, factor);
    (h, Some(dh))
}

/// Full channel, entries `(k, m)` at `m*K + k`.
pub fn channel<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    d: &[A::V],
) -> Vec<Cx<A::V>> {
    let (kk, mm) = (cfg.num_waveguides, cfg.num_users);
    let mut out = Vec::with_capacity(kk * mm);
    for m in 0..mm {
        for k in 0..kk {
            out.push(channel_entry(alg, cfg, sc, d[k], k, m));
        }
    }
    out
}

/// All couplings `s[m, n] = h_m^H p_n`, entries at `m*M + n`.
pub fn couplings<A: Algebra>(
    alg: &mut A,
    h: &[Cx<A::V>],
    p: &[Cx<A::V>],
    k: usize,
    m: usize,
) -> Vec<Cx<A::V>> {
    let mut out = Vec::with_capacity(m * m);
    for mu in 0..m {
        let hm = &h[mu * k..(mu + 1) * k];
        for nu in 0..m {
            let pn = &p[nu * k..(nu + 1) * k];
            out.push(c_dot_conj(alg, hm, pn));
        }
    }
    out
}

/// Per-user effective gain and interference from the coupling table.
pub fn gain_interference<A: Algebra>(
    alg: &mut A,
    s: &[Cx<A::V>],
    m: usize,
) -> (Vec<A::V>, Vec<A::V>) {
    let mut gain = Vec::with_capacity(m);
    let mut interf = Vec::with_capacity(m);
    for mu in 0..m {
        gain.push(c_norm_sqr(alg, s[mu * m + mu]));
        let mut terms = Vec::with_capacity(m.saturating_sub(1));
        for nu in 0..m {
            if nu != mu {
                terms.push(c_norm_sqr(alg, s[mu * m + nu]));
            }
        }
        let i = if terms.is_empty() {
            alg.lit(0.0)
        } else {
            alg.sum(&terms)
        };
        interf.push(i);
    }
    (gain, interf)
}

/// Weighted sum rate from per-user gain/interference.
pub fn wsr_value<A: Algebra>(
    alg: &mut A,
    gain: &[A::V],
    interf: &[A::V],
    weights: &[f64],
    noise: f64,
) -> A::V {
    let mut terms = Vec::with_capacity(gain.len());
    for m in 0..gain.len() {
        let den = alg.add_const(interf[m], noise);
        let sinr = alg.div(gain[m], den);
        let one_p = alg.add_const(sinr, 1.0);
        let rate = alg.log2(one_p);
        terms.push(alg.scale(rate, weights[m]));
    }
    alg.sum(&terms)
}

/// The quadratic-transform objective with the auxiliaries held fixed:
/// `sum_m w_m (1+gamma_m)/ln2 * (2 y_m sqrt(G_m) - y_m^2 (G_m + I_m + noise))`.
pub fn bracket_value<A: Algebra>(
    alg: &mut A,
    gain: &[A::V],
    interf: &[A::V],
    weights: &[f64],
    noise: f64,
    gamma: &[f64],
    y: &[f64],
) -> A::V {
    let mut terms = Vec::with_capacity(gain.len());
    for m in 0..gain.len() {
        let a = weights[m] * (1.0 + gamma[m]) / LN2;
        let sg = alg.sqrt(gain[m]);
        let lin = alg.scale(sg, 2.0 * y[m]);
        let gi = alg.add(gain[m], interf[m]);
        let total = alg.add_const(gi, noise);
        let quad = alg.scale(total, y[m] * y[m]);
        let diff = alg.sub(lin, quad);
        terms.push(alg.scale(diff, a));
    }
    alg.sum(&terms)
}

/// Exact gradient of [`bracket_value`] in the antenna positions, with the
/// channel dependence expanded through [`channel_entry_with_deriv`].
pub fn bracket_grad_d<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    d: &[A::V],
    p: &[Cx<A::V>],
    weights: &[f64],
    gamma: &[f64],
    y: &[f64],
) -> Vec<A::V> {
    // The noise floor enters the bracket only as an additive constant, so it
    // has no position derivative and is not needed here.
    let (kk, mm) = (cfg.num_waveguides, cfg.num_users);
    let mut h = Vec::with_capacity(kk * mm);
    let mut dh = Vec::with_capacity(kk * mm);
    for m in 0..mm {
        for k in 0..kk {
            let (hv, dv) = channel_entry_with_deriv(alg, cfg, sc, d[k], k, m);
            h.push(hv);
            dh.push(dv);
        }
    }
    let s = couplings(alg, &h, p, kk, mm);
    let (gain, _) = gain_interference(alg, &s, mm);

    let mut out = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut terms = Vec::new();
        for m in 0..mm {
            let a = weights[m] * (1.0 + gamma[m]) / LN2;
            // ds[m,n]/dd_k = conj(dh[m,k]) * p[k,n]
            let dconj = Cx {
                re: dh[m * kk + k].re,
                im: alg.neg(dh[m * kk + k].im),
            };
            // dG_m/dd_k = 2 Re(conj(s_mm) * ds_mm)
            let ds_mm = c_mul(alg, dconj, p[m * kk + k]);
            let smm_conj = Cx {
                re: s[m * mm + m].re,
                im: alg.neg(s[m * mm + m].im),
            };
            let prod = c_mul(alg, smm_conj, ds_mm);
            let dg = alg.scale(prod.re, 2.0);
            // dI_m/dd_k = sum_{n != m} 2 Re(conj(s_mn) * ds_mn)
            let mut di_terms = Vec::new();
            for n in 0..mm {
                if n == m {
                    continue;
                }
                let ds_mn = c_mul(alg, dconj, p[n * kk + k]);
                let smn_conj = Cx {
                    re: s[m * mm + n].re,
                    im: alg.neg(s[m * mm + n].im),
                };
                let prod = c_mul(alg, smn_conj, ds_mn);
                di_terms.push(alg.scale(prod.re, 2.0));
            }
            let di = if di_terms.is_empty() {
                alg.lit(0.0)
            } else {
                alg.sum(&di_terms)
            };
            // df/dG = a (y/sqrt(G) - y^2); df/dI = -a y^2
            let sg = alg.sqrt(gain[m]);
            let yl = alg.lit(y[m]);
            let y_over = alg.div(yl, sg);
            let coef_g = alg.add_const(y_over, -y[m] * y[m]);
            let tg = alg.mul(coef_g, dg);
            let ti = alg.scale(di, -y[m] * y[m]);
            let sum_gi = alg.add(tg, ti);
            terms.push(alg.scale(sum_gi, a));
        }
        out.push(alg.sum(&terms));
    }
    out
}

/// Closed-form gradient of the penalized first-order surrogate in the
/// stacked beamforming coordinates.
///
/// Anchor data (`anchor_c[m*M+n] = h_m^H p_n` at the expansion point,
/// `sqrt_g0`, `i0`) is plain numeric because the expansion point never
/// carries derivatives. The output layout matches
/// [`crate::system::BeamformingMatrix::to_stacked`].
#[allow(clippy::too_many_arguments)]
pub fn surrogate_grad_p<A: Algebra>(
    alg: &mut A,
    h: &[Cx<A::V>],
    p: &[Cx<A::V>],
    k: usize,
    m: usize,
    anchor_c: &[Complex64],
    sqrt_g0: &[f64],
    i0: &[f64],
    weights: &[f64],
    noise: f64,
    gamma: &[f64],
    y: &[f64],
    gamma_min: &[f64],
    mu: f64,
) -> Vec<A::V> {
    let s = couplings(alg, h, p, k, m);

    // Linearized interference and exact gain of the current point, needed by
    // the penalty terms: I_lin_m = i0_m + 2 sum_{n!=m} Re(conj(c_mn)(s_mn - c_mn)).
    let mut viol: Vec<A::V> = Vec::with_capacity(m);
    for mu_ in 0..m {
        let mut ilin_terms: Vec<A::V> = Vec::new();
        for n in 0..m {
            if n == mu_ {
                continue;
            }
            let c = anchor_c[mu_ * m + n];
            let cc = Cx {
                re: alg.lit(c.re),
                im: alg.lit(-c.im),
            };
            let diff = Cx {
                re: alg.add_const(s[mu_ * m + n].re, -c.re),
                im: alg.add_const(s[mu_ * m + n].im, -c.im),
            };
            let prod = c_mul(alg, cc, diff);
            ilin_terms.push(alg.scale(prod.re, 2.0));
        }
        let ilin_delta = if ilin_terms.is_empty() {
            alg.lit(0.0)
        } else {
            alg.sum(&ilin_terms)
        };
        let ilin = alg.add_const(ilin_delta, i0[mu_]);
        let g_exact = c_norm_sqr(alg, s[mu_ * m + mu_]);
        // V_m = max(0, gamma_min * (I_lin + noise) - G)
        let iapp = alg.add_const(ilin, noise);
        let scaled = alg.scale(iapp, gamma_min[mu_]);
        let arg = alg.sub(scaled, g_exact);
        viol.push(alg.relu(arg));
    }

    let zero = alg.lit(0.0);
    let mut out = vec![zero; 2 * k * m];
    for n in 0..m {
        let a_n = weights[n] * (1.0 + gamma[n]) / LN2;
        for kk_ in 0..k {
            let mut re_terms: Vec<A::V> = Vec::new();
            let mut im_terms: Vec<A::V> = Vec::new();
            // Own-signal linear term 2 a_n y_n Re(conj(c0) u)/sqrt_g0_n has
            // gradient 2 a_n y_n / sqrt_g0_n * (c0 h_n[k]) in re/im pairs.
            let coef = 2.0 * a_n * y[n] / sqrt_g0[n];
            let hn = h[n * k + kk_];
            let c0 = anchor_c[n * m + n];
            let ch = c_lit_mul(alg, c0, hn);
            re_terms.push(alg.scale(ch.re, coef));
            im_terms.push(alg.scale(ch.im, coef));
            for mu_ in 0..m {
                if mu_ != n {
                    // Linearized interference: -a_m y_m^2 * 2 c_mn h_m[k].
                    let c = anchor_c[mu_ * m + n];
                    let a_m = weights[mu_] * (1.0 + gamma[mu_]) / LN2;
                    let coef = -2.0 * a_m * y[mu_] * y[mu_];
                    let hm = h[mu_ * k + kk_];
                    let cc = c_lit_mul(alg, c, hm);
                    re_terms.push(alg.scale(cc.re, coef));
                    im_terms.push(alg.scale(cc.im, coef));
                    // Penalty via I_lin: -2 mu V_m * gamma_min * 2 c_mn h_m[k].
                    if mu > 0.0 {
                        let vterm = alg.scale(viol[mu_], -4.0 * mu * gamma_min[mu_]);
                        let vr = alg.mul(vterm, cc.re);
                        let vi = alg.mul(vterm, cc.im);
                        re_terms.push(vr);
                        im_terms.push(vi);
                    }
                } else if mu > 0.0 {
                    // Penalty via exact gain: -2 mu V_n * (-2 s_nn h_n[k]).
                    let snn = s[n * m + n];
                    let sh = c_mul(alg, snn, hn);
                    let vterm = alg.scale(viol[n], 4.0 * mu);
                    let vr = alg.mul(vterm, sh.re);
                    let vi = alg.mul(vterm, sh.im);
                    re_terms.push(vr);
                    im_terms.push(vi);
                }
            }
            out[n * k + kk_] = alg.sum(&re_terms);
            out[k * m + n * k + kk_] = alg.sum(&im_terms);
        }
    }
    out
}

fn c_lit_mul<A: Algebra>(alg: &mut A, c: Complex64, v: Cx<A::V>) -> Cx<A::V> {
    // (c.re + j c.im)(v.re + j v.im)
    let rr = alg.scale(v.re, c.re);
    let ii = alg.scale(v.im, c.im);
    let ri = alg.scale(v.im, c.re);
    let ir = alg.scale(v.re, c.im);
    Cx {
        re: alg.sub(rr, ii),
        im: alg.add(ri, ir),
    }
}

/// Rate objective with first-power violation penalty:
/// `sum_m w_m log2(1 + SINR_m) - mu * sum_m max(0, gamma_min_m (I_m + noise) - G_m)`.
pub fn raw_objective_value<A: Algebra>(
    alg: &mut A,
    gain: &[A::V],
    interf: &[A::V],
    weights: &[f64],
    noise: f64,
    gamma_min: &[f64],
    mu: f64,
) -> A::V {
    let wsr = wsr_value(alg, gain, interf, weights, noise);
    if mu == 0.0 {
        return wsr;
    }
    let mut v_terms = Vec::with_capacity(gain.len());
    for m in 0..gain.len() {
        let iapp = alg.add_const(interf[m], noise);
        let scaled = alg.scale(iapp, gamma_min[m]);
        let arg = alg.sub(scaled, gain[m]);
        v_terms.push(alg.relu(arg));
    }
    let v = alg.sum(&v_terms);
    let pen = alg.scale(v, mu);
    alg.sub(wsr, pen)
}

/// Closed-form stacked gradient of [`raw_objective_value`] in `p`.
pub fn raw_grad_p<A: Algebra>(
    alg: &mut A,
    h: &[Cx<A::V>],
    p: &[Cx<A::V>],
    k: usize,
    m: usize,
    weights: &[f64],
    noise: f64,
    gamma_min: &[f64],
    mu: f64,
) -> Vec<A::V> {
    let s = couplings(alg, h, p, k, m);
    let (gain, interf) = gain_interference(alg, &s, m);

    // Per-user coefficients: c_own = w/(ln2 (1+SINR)(I+noise)),
    // c_leak_m = -w G /(ln2 (1+SINR)(I+noise)^2), both scalars of the state.
    let mut c_own = Vec::with_capacity(m);
    let mut c_leak = Vec::with_capacity(m);
    let mut gate = Vec::with_capacity(m);
    for mu_ in 0..m {
        let den = alg.add_const(interf[mu_], noise);
        let sinr = alg.div(gain[mu_], den);
        let one_p = alg.add_const(sinr, 1.0);
        let base = alg.mul(one_p, den);
        let wl = alg.lit(weights[mu_] / LN2);
        c_own.push(alg.div(wl, base));
        let den2 = alg.mul(base, den);
        let gd = alg.div(gain[mu_], den2);
        let neg = alg.neg(gd);
        c_leak.push(alg.scale(neg, weights[mu_] / LN2));
        let iapp = alg.add_const(interf[mu_], noise);
        let scaled = alg.scale(iapp, gamma_min[mu_]);
        let arg = alg.sub(scaled, gain[mu_]);
        gate.push(alg.step(arg));
    }

    let zero = alg.lit(0.0);
    let mut out = vec![zero; 2 * k * m];
    for n in 0..m {
        for kk_ in 0..k {
            let mut re_terms: Vec<A::V> = Vec::new();
            let mut im_terms: Vec<A::V> = Vec::new();
            for mu_ in 0..m {
                let hm = h[mu_ * k + kk_];
                let smn = s[mu_ * m + n];
                let sh = c_mul(alg, smn, hm); // s_mn * h_m[k]; gradient pair is 2*coef*sh
                let coef = if mu_ == n {
                    // own gain path + penalty gate on own gain
                    let mut c = c_own[n];
                    if mu > 0.0 {
                        let pen = alg.scale(gate[n], mu);
                        c = alg.add(c, pen);
                    }
                    c
                } else {
                    // leakage path + penalty gate on interference
                    let mut c = c_leak[mu_];
                    if mu > 0.0 {
                        let pen = alg.scale(gate[mu_], -mu * gamma_min[mu_]);
                        c = alg.add(c, pen);
                    }
                    c
                };
                let two_c = alg.scale(coef, 2.0);
                let r = alg.mul(two_c, sh.re);
                let i = alg.mul(two_c, sh.im);
                re_terms.push(r);
                im_terms.push(i);
            }
            out[n * k + kk_] = alg.sum(&re_terms);
            out[k * m + n * k + kk_] = alg.sum(&im_terms);
        }
    }
    out
}

/// Closed-form gradient of [`raw_objective_value`] in the positions.
#[allow(clippy::too_many_arguments)]
pub fn raw_grad_d<A: Algebra>(
    alg: &mut A,
    cfg: &SystemConfig,
    sc: &Scenario,
    d: &[A::V],
    p: &[Cx<A::V>],
    weights: &[f64],
    noise: f64,
    gamma_min: &[f64],
    mu: f64,
) -> Vec<A::V> {
    let (kk, mm) = (cfg.num_waveguides, cfg.num_users);
    let mut h = Vec::with_capacity(kk * mm);
    let mut dh = Vec::with_capacity(kk * mm);
    for m in 0..mm {
        for k in 0..kk {
            let (hv, dv) = channel_entry_with_deriv(alg, cfg, sc, d[k], k, m);
            h.push(hv);
            dh.push(dv);
        }
    }
    let s = couplings(alg, &h, p, kk, mm);
    let (gain, interf) = gain_interference(alg, &s, mm);

    let mut rate_g = Vec::with_capacity(mm);
    let mut rate_i = Vec::with_capacity(mm);
    let mut gate = Vec::with_capacity(mm);
    for m in 0..mm {
        // dWSR/dG = w/(ln2 (1+SINR)(I+n)); dWSR/dI = -w SINR/(ln2 (1+SINR)(I+n))
        let den = alg.add_const(interf[m], noise);
        let sinr = alg.div(gain[m], den);
        let one_p = alg.add_const(sinr, 1.0);
        let base = alg.mul(one_p, den);
        let wl = alg.lit(weights[m] / LN2);
        let dg = alg.div(wl, base);
        let s_over = alg.mul(dg, sinr);
        rate_g.push(dg);
        rate_i.push(alg.neg(s_over));
        let scaled = alg.scale(den, gamma_min[m]);
        let arg = alg.sub(scaled, gain[m]);
        gate.push(alg.step(arg));
    }

    let mut out = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut terms: Vec<A::V> = Vec::new();
        for m in 0..mm {
            let dconj = Cx {
                re: dh[m * kk + k].re,
                im: alg.neg(dh[m * kk + k].im),
            };
            let ds_mm = c_mul(alg, dconj, p[m * kk + k]);
            let smm_conj = Cx {
                re: s[m * mm + m].re,
                im: alg.neg(s[m * mm + m].im),
            };
            let prod = c_mul(alg, smm_conj, ds_mm);
            let dgain = alg.scale(prod.re, 2.0);
            let mut di_terms: Vec<A::V> = Vec::new();
            for n in 0..mm {
                if n == m {
                    continue;
                }
                let ds_mn = c_mul(alg, dconj, p[n * kk + k]);
                let smn_conj = Cx {
                    re: s[m * mm + n].re,
                    im: alg.neg(s[m * mm + n].im),
                };
                let prod = c_mul(alg, smn_conj, ds_mn);
                di_terms.push(alg.scale(prod.re, 2.0));
            }
            let dinterf = if di_terms.is_empty() {
                alg.lit(0.0)
            } else {
                alg.sum(&di_terms)
            };
            let tg = alg.mul(rate_g[m], dgain);
            let ti = alg.mul(rate_i[m], dinterf);
            terms.push(tg);
            terms.push(ti);
            if mu > 0.0 {
                // penalty: -mu * gate * (gamma_min dI - dG)
                let gi = alg.scale(dinterf, gamma_min[m]);
                let arg = alg.sub(gi, dgain);
                let gated = alg.mul(gate[m], arg);
                terms.push(alg.scale(gated, -mu));
            }
        }
        out.push(alg.sum(&terms));
    }
    out
}

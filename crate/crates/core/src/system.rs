//! System geometry, channel model and rate/constraint evaluation.
//!
//! The downlink has `K` waveguides at height `waveguide_height`, parallel to
//! the x axis, each feeding a single antenna that can slide along x within
//! the closed box `[x_min, x_max]`. User `m` sits on the ground plane. The
//! complex channel between user `m` and the antenna on waveguide `k` is
//!
//! ```text
//! h[m,k] = sqrt(eta) * exp(-2*pi*j*(d_free/lambda + d_guide/lambda_g)) / d_free
//! ```
//!
//! where `d_free` is the 3-D user-to-antenna distance and `d_guide` the
//! in-waveguide distance from the feed point to the antenna.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Convert a dBm figure to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Wavelength inside the waveguide given the free-space wavelength and the
/// effective refractive index.
pub fn guided_wavelength(lambda: f64, n_eff: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "carrier wavelength must be positive, got {lambda}"
        )));
    }
    if !(n_eff >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "effective refractive index must be >= 1, got {n_eff}"
        )));
    }
    Ok(lambda / n_eff)
}

/// Static description of one deployment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of waveguides (one movable antenna each).
    pub num_waveguides: usize,
    /// Number of single-antenna users.
    pub num_users: usize,
    /// Free-space carrier wavelength, meters.
    pub carrier_wavelength: f64,
    /// In-guide wavelength, meters.
    pub guided_wavelength: f64,
    /// Channel attenuation factor; `|h| = sqrt(eta) / d_free`.
    pub attenuation: f64,
    /// Receiver noise power, watts.
    pub noise_power: f64,
    /// Total transmit power budget, watts.
    pub total_power: f64,
    /// Per-user rate weights, length `num_users`.
    pub weights: Vec<f64>,
    /// Per-user minimum SINR (linear), length `num_users`.
    pub sinr_min: Vec<f64>,
    /// Closed interval along x inside which every antenna must stay.
    pub position_box: (f64, f64),
    /// Height of the waveguide plane above the user plane, meters.
    pub waveguide_height: f64,
    /// Side of the square user region, meters.
    pub region_side: f64,
}

impl SystemConfig {
    /// Deployment at a 28 GHz carrier with the usual defaults: refractive
    /// index 1.4, noise -40 dBm, unit weights, 0 dB SINR floors, 3 m high
    /// waveguides and a position box spanning the user region.
    pub fn new_28ghz(
        num_waveguides: usize,
        num_users: usize,
        power_dbm: f64,
        region_side: f64,
    ) -> Self {
        let lambda = SPEED_OF_LIGHT / 28e9;
        SystemConfig {
            num_waveguides,
            num_users,
            carrier_wavelength: lambda,
            guided_wavelength: lambda / 1.4,
            attenuation: (lambda / (4.0 * std::f64::consts::PI)).powi(2),
            noise_power: dbm_to_watts(-40.0),
            total_power: dbm_to_watts(power_dbm),
            weights: vec![1.0; num_users],
            sinr_min: vec![1.0; num_users],
            position_box: (0.0, region_side),
            waveguide_height: 3.0,
            region_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_wavelength", self.carrier_wavelength),
            ("guided_wavelength", self.guided_wavelength),
            ("attenuation", self.attenuation),
            ("noise_power", self.noise_power),
            ("total_power", self.total_power),
            ("waveguide_height", self.waveguide_height),
            ("region_side", self.region_side),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.num_waveguides == 0 || self.num_users == 0 {
            return Err(Error::InvalidParameter(
                "need at least one waveguide and one user".into(),
            ));
        }
        if self.weights.len() != self.num_users || self.sinr_min.len() != self.num_users {
            return Err(Error::ShapeMismatch(format!(
                "weights/sinr_min must have length {}",
                self.num_users
            )));
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be >= 0".into()));
        }
        if self.sinr_min.iter().any(|g| *g < 0.0 || !g.is_finite()) {
            return Err(Error::InvalidParameter("sinr_min must be >= 0".into()));
        }
        let (lo, hi) = self.position_box;
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "position box [{lo}, {hi}] is empty"
            )));
        }
        Ok(())
    }
}

/// One realization of user and waveguide placement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    /// User coordinates on the ground plane, `(x, y)`, length `num_users`.
    pub users: Vec<(f64, f64)>,
    /// y coordinate of each waveguide, length `num_waveguides`.
    pub waveguide_y: Vec<f64>,
    /// x coordinate of each feed point, length `num_waveguides`.
    pub feed_x: Vec<f64>,
}

impl Scenario {
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.users.len() != cfg.num_users {
            return Err(Error::ShapeMismatch(format!(
                "scenario has {} users, config expects {}",
                self.users.len(),
                cfg.num_users
            )));
        }
        if self.waveguide_y.len() != cfg.num_waveguides
            || self.feed_x.len() != cfg.num_waveguides
        {
            return Err(Error::ShapeMismatch(format!(
                "scenario has {} waveguides, config expects {}",
                self.waveguide_y.len(),
                cfg.num_waveguides
            )));
        }
        Ok(())
    }
}

/// Antenna x coordinates, one per waveguide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaPositions(pub Vec<f64>);

impl AntennaPositions {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Channel coefficients, entry `(k, m)` couples waveguide `k` to user `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    k: usize,
    m: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn from_vec(k: usize, m: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != k * m {
            return Err(Error::ShapeMismatch(format!(
                "channel storage {} != {k}x{m}",
                data.len()
            )));
        }
        Ok(ChannelMatrix { k, m, data })
    }

    pub fn waveguides(&self) -> usize {
        self.k
    }

    pub fn users(&self) -> usize {
        self.m
    }

    pub fn entry(&self, k: usize, m: usize) -> Complex64 {
        self.data[m * self.k + k]
    }

    /// Channel column of one user, indexed by waveguide.
    pub fn user_column(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.k..(m + 1) * self.k]
    }

    /// All entries, user columns back to back (entry `(k, m)` at `m*K + k`).
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

/// Beamforming coefficients, column `m` is user `m`'s vector across
/// waveguides. The power constraint applies to the squared Frobenius norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingMatrix {
    k: usize,
    m: usize,
    data: Vec<Complex64>,
}

impl BeamformingMatrix {
    pub fn zeros(k: usize, m: usize) -> Self {
        BeamformingMatrix {
            k,
            m,
            data: vec![Complex64::new(0.0, 0.0); k * m],
        }
    }

    pub fn from_vec(k: usize, m: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != k * m {
            return Err(Error::ShapeMismatch(format!(
                "beamforming storage {} != {k}x{m}",
                data.len()
            )));
        }
        Ok(BeamformingMatrix { k, m, data })
    }

    pub fn waveguides(&self) -> usize {
        self.k
    }

    pub fn users(&self) -> usize {
        self.m
    }

    pub fn entry(&self, k: usize, m: usize) -> Complex64 {
        self.data[m * self.k + k]
    }

    pub fn entry_mut(&mut self, k: usize, m: usize) -> &mut Complex64 {
        &mut self.data[m * self.k + k]
    }

    pub fn user_column(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.k..(m + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Squared Frobenius norm, i.e. the transmit power actually used.
    pub fn total_power(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Stack into `[Re(vec(P)); Im(vec(P))]`, columns first. This is the
    /// layout shared by gradient vectors and network inputs/outputs.
    pub fn to_stacked(&self) -> Vec<f64> {
        let n = self.data.len();
        let mut out = vec![0.0; 2 * n];
        for (i, c) in self.data.iter().enumerate() {
            out[i] = c.re;
            out[n + i] = c.im;
        }
        out
    }

    pub fn from_stacked(k: usize, m: usize, stacked: &[f64]) -> Result<Self> {
        let n = k * m;
        if stacked.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!(
                "stacked vector {} != 2*{k}*{m}",
                stacked.len()
            )));
        }
        let data = (0..n)
            .map(|i| Complex64::new(stacked[i], stacked[n + i]))
            .collect();
        Ok(BeamformingMatrix { k, m, data })
    }
}

/// Per-user effective gain, interference and SINR.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    pub gain: Vec<f64>,
    pub interference: Vec<f64>,
    pub sinr: Vec<f64>,
}

/// Free-space distance from user `m` to the antenna on waveguide `k`.
pub fn free_distance(sc: &Scenario, cfg: &SystemConfig, d_k: f64, k: usize, m: usize) -> f64 {
    let (ux, uy) = sc.users[m];
    let dy = uy - sc.waveguide_y[k];
    let dz = cfg.waveguide_height;
    ((d_k - ux).powi(2) + dy * dy + dz * dz).sqrt()
}

/// Channel coefficients for the given antenna positions.
pub fn compute_channel(
    cfg: &SystemConfig,
    sc: &Scenario,
    d: &AntennaPositions,
) -> Result<ChannelMatrix> {
    cfg.validate()?;
    sc.validate(cfg)?;
    if d.len() != cfg.num_waveguides {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} waveguides",
            d.len(),
            cfg.num_waveguides
        )));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let amp = cfg.attenuation.sqrt();
    let mut data = Vec::with_capacity(cfg.num_waveguides * cfg.num_users);
    for m in 0..cfg.num_users {
        for k in 0..cfg.num_waveguides {
            let dist = free_distance(sc, cfg, d.0[k], k, m);
            if dist == 0.0 {
                return Err(Error::DegenerateGeometry { user: m, waveguide: k });
            }
            let guide = (d.0[k] - sc.feed_x[k]).abs();
            let phase = -tau * (dist / cfg.carrier_wavelength + guide / cfg.guided_wavelength);
            data.push(Complex64::from_polar(amp / dist, phase));
        }
    }
    ChannelMatrix::from_vec(cfg.num_waveguides, cfg.num_users, data)
}

/// `h_m^H p_n`: the complex signal coupling from user `n`'s beam into user
/// `m`'s channel.
pub fn coupling(h: &ChannelMatrix, p: &BeamformingMatrix, m: usize, n: usize) -> Complex64 {
    h.user_column(m)
        .iter()
        .zip(p.user_column(n))
        .map(|(hv, pv)| hv.conj() * pv)
        .sum()
}

/// Per-user gain, interference and SINR for a channel/beamforming pair.
pub fn compute_sinr(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    noise_power: f64,
) -> Result<LinkStats> {
    if h.waveguides() != p.waveguides() || h.users() != p.users() {
        return Err(Error::ShapeMismatch(format!(
            "channel {}x{} vs beamforming {}x{}",
            h.waveguides(),
            h.users(),
            p.waveguides(),
            p.users()
        )));
    }
    if !(noise_power > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be positive, got {noise_power}"
        )));
    }
    let m_users = h.users();
    let mut gain = vec![0.0; m_users];
    let mut interference = vec![0.0; m_users];
    for m in 0..m_users {
        for n in 0..m_users {
            let s = coupling(h, p, m, n).norm_sqr();
            if n == m {
                gain[m] = s;
            } else {
                interference[m] += s;
            }
        }
    }
    let sinr = gain
        .iter()
        .zip(&interference)
        .map(|(g, i)| g / (i + noise_power))
        .collect();
    Ok(LinkStats {
        gain,
        interference,
        sinr,
    })
}

/// Weighted sum rate in bits/s/Hz.
pub fn compute_wsr(h: &ChannelMatrix, p: &BeamformingMatrix, cfg: &SystemConfig) -> Result<f64> {
    if cfg.weights.len() != h.users() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} users",
            cfg.weights.len(),
            h.users()
        )));
    }
    let stats = compute_sinr(h, p, cfg.noise_power)?;
    Ok(cfg
        .weights
        .iter()
        .zip(&stats.sinr)
        .map(|(w, s)| w * (1.0 + s).log2())
        .sum())
}

/// Rescale so the total transmit power equals the budget exactly.
pub fn normalize_power(p: &BeamformingMatrix, total_power: f64) -> Result<BeamformingMatrix> {
    if !(total_power > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "power budget must be positive, got {total_power}"
        )));
    }
    let used = p.total_power();
    if used == 0.0 {
        return Err(Error::NormalizationUndefined);
    }
    let scale = (total_power / used).sqrt();
    let mut out = p.clone();
    for c in out.as_mut_slice() {
        *c *= scale;
    }
    Ok(out)
}

/// Clamp every antenna position into the closed box.
pub fn project_positions(d: &AntennaPositions, position_box: (f64, f64)) -> Result<AntennaPositions> {
    let (lo, hi) = position_box;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "position box [{lo}, {hi}] is empty"
        )));
    }
    Ok(AntennaPositions(
        d.0.iter().map(|x| x.clamp(lo, hi)).collect(),
    ))
}

/// Constraint report: booleans per constraint family plus signed slacks
/// (positive means satisfied with margin).
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub power_ok: bool,
    pub position_ok: bool,
    pub qos_ok: bool,
    /// `total_power - ||p||_F^2`.
    pub power_slack: f64,
    /// Per-user `sinr - sinr_min`.
    pub qos_slack: Vec<f64>,
    /// Largest distance by which any antenna leaves the box (0 if none).
    pub position_violation: f64,
}

impl FeasibilityReport {
    pub fn min_qos_slack(&self) -> f64 {
        self.qos_slack.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Relative tolerance on the power budget check.
pub const POWER_TOL: f64 = 1e-9;

pub fn check_feasibility(
    h: &ChannelMatrix,
    p: &BeamformingMatrix,
    d: &AntennaPositions,
    cfg: &SystemConfig,
) -> Result<FeasibilityReport> {
    let stats = compute_sinr(h, p, cfg.noise_power)?;
    let power_slack = cfg.total_power - p.total_power();
    let power_ok = power_slack >= -POWER_TOL * cfg.total_power;
    let (lo, hi) = cfg.position_box;
    let position_violation = d
        .0
        .iter()
        .map(|x| (lo - x).max(0.0).max(x - hi))
        .fold(0.0, f64::max);
    let position_ok = position_violation == 0.0;
    let qos_slack: Vec<f64> = stats
        .sinr
        .iter()
        .zip(&cfg.sinr_min)
        .map(|(s, g)| s - g)
        .collect();
    let qos_ok = qos_slack.iter().all(|s| *s >= -1e-12);
    Ok(FeasibilityReport {
        power_ok,
        position_ok,
        qos_ok,
        power_slack,
        qos_slack,
        position_violation,
    })
}

//! Sweep orchestration: Cartesian experiment cells, per-cell solver runs,
//! crash-safe CSV persistence with resume, and deterministic seeding.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pinch_core::meta::{apply_nets, gml_baseline, gml_jo, MetaConfig};
use pinch_core::solvers::{
    solve_ao_baseline, solve_et_ca, solve_exhaustive, solve_gd, solve_transformed_ao, solve_udb,
    ExhaustiveOptions, SolutionState, SolveOptions, Trajectory,
};
use pinch_core::system::{
    compute_channel, compute_sinr, compute_wsr, dbm_to_watts, normalize_power, SystemConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::sample_scenario;

/// Every solver the harness can drive, by its stable identifier.
/// The declaration order fixes plot colors and legend order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    GmlJo,
    Gml,
    EtCa,
    Ao,
    TransformedAo,
    Gd,
    Udb,
    Exhaustive,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::GmlJo,
        Algorithm::Gml,
        Algorithm::EtCa,
        Algorithm::Ao,
        Algorithm::TransformedAo,
        Algorithm::Gd,
        Algorithm::Udb,
        Algorithm::Exhaustive,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::GmlJo => "gml-jo",
            Algorithm::Gml => "gml",
            Algorithm::EtCa => "et-ca",
            Algorithm::Ao => "ao",
            Algorithm::TransformedAo => "transformed-ao",
            Algorithm::Gd => "gd",
            Algorithm::Udb => "udb",
            Algorithm::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .with_context(|| {
                let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.id()).collect();
                format!("unknown algorithm {s:?}; known: {}", known.join(", "))
            })
    }
}

/// Optional replacements for the 28 GHz construction defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigOverrides {
    /// Receiver noise power in dBm (default -40).
    pub noise_dbm: Option<f64>,
    /// Uniform minimum-SINR floor, linear (default 1).
    pub sinr_min: Option<f64>,
    /// Waveguide height above the user plane, meters (default 3).
    pub waveguide_height: Option<f64>,
}

/// Step-size replacements for the iterative solvers. Defaults are sized for
/// region-scale deployments: antennas may have to travel many meters, so
/// position steps are much larger than the fine-tuning defaults the solvers
/// ship with, and beamforming steps track the per-entry amplitude scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveBudget {
    pub step_p: Option<f64>,
    pub step_d: Option<f64>,
}

/// Budget knobs for the learned solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaBudget {
    /// Hidden width of both networks.
    pub hidden: usize,
    /// Inner network steps per unrolled run.
    pub inner_steps: usize,
    /// Training epochs. Independent of the reported iteration axis, which
    /// for learned solvers counts inference rounds.
    pub epochs: usize,
}

impl Default for MetaBudget {
    fn default() -> Self {
        MetaBudget {
            hidden: 32,
            inner_steps: 10,
            epochs: 100,
        }
    }
}

fn default_grid_res() -> f64 {
    0.05
}

/// A sweep description: the Cartesian product of the placement axes is run
/// once per seed for every listed algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub algorithms: Vec<Algorithm>,
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    pub power_dbm: Vec<f64>,
    pub region_side: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Iteration budget: outer rounds for the iterative solvers, training
    /// epochs and inference rounds for the learned ones. The single-shot
    /// baselines (udb, exhaustive) ignore it.
    pub iters: usize,
    pub out_dir: PathBuf,
    /// Folded into every per-cell stream.
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub overrides: ConfigOverrides,
    #[serde(default)]
    pub solve: SolveBudget,
    #[serde(default)]
    pub meta: MetaBudget,
    /// Position grid spacing for the exhaustive reference, meters.
    #[serde(default = "default_grid_res")]
    pub grid_res: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("algorithms", self.algorithms.is_empty()),
            ("k", self.k.is_empty()),
            ("m", self.m.is_empty()),
            ("power_dbm", self.power_dbm.is_empty()),
            ("region_side", self.region_side.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                bail!("spec axis {name} must be non-empty");
            }
        }
        if self.iters == 0 {
            bail!("iteration budget must be at least 1");
        }
        if !(self.grid_res > 0.0) || !self.grid_res.is_finite() {
            bail!("grid_res must be positive, got {}", self.grid_res);
        }
        if self.k.iter().any(|k| *k == 0) || self.m.iter().any(|m| *m == 0) {
            bail!("k and m axis entries must be at least 1");
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading spec {}", path.display()))?;
        let spec: ExperimentSpec = serde_json::from_str(&text)
            .with_context(|| format!("parsing spec {}", path.display()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Enumeration order is fixed: algorithm, then K, M, power, region, seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &algorithm in &self.algorithms {
            for &k in &self.k {
                for &m in &self.m {
                    for &power_dbm in &self.power_dbm {
                        for &region_side in &self.region_side {
                            for &seed in &self.seeds {
                                out.push(Cell {
                                    algorithm,
                                    seed,
                                    k,
                                    m,
                                    power_dbm,
                                    region_side,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One unit of work: a single solver on a single placement draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub k: usize,
    pub m: usize,
    pub power_dbm: f64,
    pub region_side: f64,
}

impl Cell {
    /// Identity string used by the resume manifest and row grouping.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.algorithm, self.seed, self.k, self.m, self.power_dbm, self.region_side
        )
    }
}

/// One CSV row. The column set and order are stable; downstream plots read
/// only these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub k: usize,
    pub m: usize,
    pub power_dbm: f64,
    pub region_side: f64,
    pub iter: usize,
    pub wsr: f64,
    pub best_wsr: f64,
    pub min_qos_slack: f64,
    pub power_slack: f64,
    pub wall_time_ms: f64,
}

impl ResultRow {
    pub const COLUMNS: [&'static str; 12] = [
        "algorithm",
        "seed",
        "k",
        "m",
        "power_dbm",
        "region_side",
        "iter",
        "wsr",
        "best_wsr",
        "min_qos_slack",
        "power_slack",
        "wall_time_ms",
    ];

    pub fn cell_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.algorithm, self.seed, self.k, self.m, self.power_dbm, self.region_side
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(state: u64, v: u64) -> u64 {
    splitmix64(state ^ v)
}

/// Seeds derived for one cell. Placement and initialization are functions
/// of the placement coordinates only — never of the algorithm — so paired
/// comparisons across algorithms see identical instances, and parallel and
/// serial schedules produce identical rows by construction.
#[derive(Debug, Clone, Copy)]
pub struct CellStreams {
    pub scenario: u64,
    pub init: u64,
    pub nets: u64,
    pub solver: u64,
}

pub fn cell_streams(master_seed: u64, cell: &Cell) -> CellStreams {
    let mut s = mix(master_seed, 0x0B9A_31C5_55ED_5EED);
    s = mix(s, cell.seed);
    s = mix(s, cell.k as u64);
    s = mix(s, cell.m as u64);
    s = mix(s, cell.power_dbm.to_bits());
    s = mix(s, cell.region_side.to_bits());
    CellStreams {
        scenario: s,
        init: mix(s, 1),
        nets: mix(s, 2),
        solver: mix(s, 3),
    }
}

/// The 28 GHz construction plus any spec overrides.
pub fn build_config(spec: &ExperimentSpec, cell: &Cell) -> SystemConfig {
    let mut cfg = SystemConfig::new_28ghz(cell.k, cell.m, cell.power_dbm, cell.region_side);
    if let Some(noise_dbm) = spec.overrides.noise_dbm {
        cfg.noise_power = dbm_to_watts(noise_dbm);
    }
    if let Some(floor) = spec.overrides.sinr_min {
        cfg.sinr_min = vec![floor; cell.m];
    }
    if let Some(h) = spec.overrides.waveguide_height {
        cfg.waveguide_height = h;
    }
    cfg
}

/// Iterative-solver options for one cell. Position steps default to a
/// meter scale so antennas can cross a region-sized box inside the budget;
/// beamforming steps track the per-entry amplitude `sqrt(P/(KM))` (the
/// fine-tuning default 2e-4 corresponds to 1 W over four entries).
pub fn solve_options(spec: &ExperimentSpec, cfg: &SystemConfig, algorithm: Algorithm) -> SolveOptions {
    let km = (cfg.num_waveguides * cfg.num_users) as f64;
    let step_p = spec
        .solve
        .step_p
        .unwrap_or(4e-4 * (cfg.total_power / km).sqrt());
    let step_d = spec.solve.step_d.unwrap_or(match algorithm {
        // One joint step per iteration instead of ten inner steps: larger
        // strides keep the same travel budget.
        Algorithm::Gd => 5.0,
        _ => 1.0,
    });
    SolveOptions {
        max_outer_iters: spec.iters,
        step_p,
        step_d,
        ..SolveOptions::default()
    }
}

fn meta_config(spec: &ExperimentSpec, cfg: &SystemConfig, net_seed: u64) -> MetaConfig {
    MetaConfig {
        epochs: spec.iters,
        inner_steps: spec.meta.inner_steps,
        hidden: spec.meta.hidden,
        ..MetaConfig::for_system(cfg, net_seed)
    }
}

fn trajectory_rows(cell: &Cell, traj: &Trajectory) -> Vec<ResultRow> {
    traj.records
        .iter()
        .map(|r| ResultRow {
            algorithm: cell.algorithm,
            seed: cell.seed,
            k: cell.k,
            m: cell.m,
            power_dbm: cell.power_dbm,
            region_side: cell.region_side,
            iter: r.iter,
            wsr: r.wsr,
            best_wsr: r.best_wsr,
            min_qos_slack: r.min_qos_slack,
            power_slack: r.power_slack,
            wall_time_ms: r.wall_time_ms,
        })
        .collect()
}

fn single_state_row(
    cell: &Cell,
    cfg: &SystemConfig,
    sc: &pinch_core::system::Scenario,
    state: &SolutionState,
    wall_time_ms: f64,
) -> Result<ResultRow> {
    let h = compute_channel(cfg, sc, &state.d)?;
    let wsr = compute_wsr(&h, &state.p, cfg)?;
    let stats = compute_sinr(&h, &state.p, cfg.noise_power)?;
    let min_qos_slack = stats
        .sinr
        .iter()
        .zip(&cfg.sinr_min)
        .map(|(s, g)| s - g)
        .fold(f64::INFINITY, f64::min);
    Ok(ResultRow {
        algorithm: cell.algorithm,
        seed: cell.seed,
        k: cell.k,
        m: cell.m,
        power_dbm: cell.power_dbm,
        region_side: cell.region_side,
        iter: 0,
        wsr,
        best_wsr: wsr,
        min_qos_slack,
        power_slack: cfg.total_power - state.p.total_power(),
        wall_time_ms,
    })
}

/// Run one cell to completion and return its rows.
///
/// Learned solvers are trained on the cell's instance and then reported
/// through their inference trajectory (the trained networks applied from the
/// shared initialization), so their rows are a solve trace like every other
/// algorithm's and their wall times measure the inference loop alone.
pub fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<Vec<ResultRow>> {
    let cfg = build_config(spec, cell);
    cfg.validate()?;
    let streams = cell_streams(spec.master_seed, cell);
    let sc = sample_scenario(&cfg, streams.scenario);
    let init = SolutionState::random(&cfg, streams.init)?;

    let rows = match cell.algorithm {
        Algorithm::TransformedAo => {
            let opts = solve_options(spec, &cfg, cell.algorithm);
            trajectory_rows(cell, &solve_transformed_ao(&cfg, &sc, &init, &opts)?)
        }
        Algorithm::Ao => {
            let opts = solve_options(spec, &cfg, cell.algorithm);
            trajectory_rows(cell, &solve_ao_baseline(&cfg, &sc, &init, &opts)?)
        }
        Algorithm::Gd => {
            let opts = solve_options(spec, &cfg, cell.algorithm);
            trajectory_rows(cell, &solve_gd(&cfg, &sc, &init, &opts, 0)?)
        }
        Algorithm::EtCa => {
            let opts = solve_options(spec, &cfg, cell.algorithm);
            // The barrier solver requires a strictly interior start.
            let interior = SolutionState {
                p: normalize_power(&init.p, cfg.total_power * 0.9)?,
                d: init.d.clone(),
            };
            trajectory_rows(cell, &solve_et_ca(&cfg, &sc, &interior, &opts)?)
        }
        Algorithm::GmlJo | Algorithm::Gml => {
            let mcfg = meta_config(spec, &cfg, streams.nets);
            let batch = [sc.clone()];
            let out = match cell.algorithm {
                Algorithm::GmlJo => gml_jo(&cfg, &batch, &init, &mcfg)?,
                _ => gml_baseline(&cfg, &batch, &init, &mcfg)?,
            };
            trajectory_rows(
                cell,
                &apply_nets(&cfg, &sc, &init, &out.nets, &mcfg, spec.iters)?,
            )
        }
        Algorithm::Udb => {
            let start = Instant::now();
            let state = solve_udb(&cfg, &sc, streams.solver)?;
            let wall = start.elapsed().as_secs_f64() * 1e3;
            vec![single_state_row(cell, &cfg, &sc, &state, wall)?]
        }
        Algorithm::Exhaustive => {
            let opts = ExhaustiveOptions {
                seed: streams.solver,
                ..ExhaustiveOptions::default()
            };
            let start = Instant::now();
            let state = solve_exhaustive(&cfg, &sc, spec.grid_res, &opts)?;
            let wall = start.elapsed().as_secs_f64() * 1e3;
            vec![single_state_row(cell, &cfg, &sc, &state, wall)?]
        }
    };

    // Every reported iterate must be a feasible deployment; fail the cell
    // loudly rather than persist a constraint-violating row.
    let strict_interior = cell.algorithm == Algorithm::EtCa;
    for row in &rows {
        let tol = 1e-9 * cfg.total_power;
        let power_ok = if strict_interior {
            row.power_slack > 0.0
        } else {
            row.power_slack.abs() <= tol
        };
        if !power_ok {
            bail!(
                "cell {} produced power slack {} outside tolerance",
                cell.key(),
                row.power_slack
            );
        }
    }
    Ok(rows)
}

/// Summary of one `run_experiment` invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub csv_path: PathBuf,
    pub cells_total: usize,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub rows_written: usize,
}

/// Sidecar describing a run; everything needed to interpret the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub spec: ExperimentSpec,
    pub spec_hash: String,
    pub code_version: String,
    pub columns: Vec<String>,
    /// The power axis is absolute transmit power in dBm (not SNR): with the
    /// default -40 dBm noise floor, 60 dBm transmit power is 100 dB of
    /// transmit SNR.
    pub power_axis_note: String,
}

fn spec_hash(spec: &ExperimentSpec) -> Result<String> {
    let canon = serde_json::to_string(spec)?;
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in canon.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    Ok(format!("{h:016x}"))
}

pub fn results_path(out_dir: &Path) -> PathBuf {
    out_dir.join("results.csv")
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("completed.jsonl")
}

pub fn metadata_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metadata.json")
}

/// Read a results CSV back into rows.
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening results {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

fn load_completed(path: &Path) -> Result<HashSet<String>> {
    let mut done = HashSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cell: Cell = serde_json::from_str(&line)
            .with_context(|| format!("corrupt manifest line in {}", path.display()))?;
        done.insert(cell.key());
    }
    Ok(done)
}

/// Bring the output directory to a consistent state before running:
/// rows from cells that never reached the manifest (a crash between the CSV
/// flush and the manifest flush) are dropped, and a manifest without a CSV
/// is discarded so its cells rerun.
fn reconcile_outputs(out_dir: &Path) -> Result<(HashSet<String>, Vec<ResultRow>)> {
    let csv_path = results_path(out_dir);
    let manifest = manifest_path(out_dir);
    let mut completed = load_completed(&manifest)?;
    if !csv_path.exists() {
        if !completed.is_empty() {
            fs::remove_file(&manifest)?;
            completed.clear();
        }
        return Ok((completed, Vec::new()));
    }
    let rows = read_rows(&csv_path)?;
    let kept: Vec<ResultRow> = rows
        .iter()
        .filter(|r| completed.contains(&r.cell_key()))
        .cloned()
        .collect();
    if kept.len() != rows.len() {
        write_rows_atomically(&csv_path, &kept)?;
    }
    Ok((completed, kept))
}

fn write_rows_atomically(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&tmp)?;
        // Write the header unconditionally; serde-driven headers only
        // materialize once a row is serialized, and an empty table must
        // still be a well-formed CSV.
        writer.write_record(ResultRow::COLUMNS)?;
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Execute a sweep. Cells already present in the resume manifest are
/// skipped; new cells run in parallel batches but are persisted in
/// enumeration order through a single writer, each followed by its manifest
/// entry, so a crash loses at most the in-flight batch.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunSummary> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir)
        .with_context(|| format!("creating output dir {}", spec.out_dir.display()))?;
    let (completed, kept_rows) = reconcile_outputs(&spec.out_dir)?;

    let metadata = RunMetadata {
        spec: spec.clone(),
        spec_hash: spec_hash(spec)?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        columns: ResultRow::COLUMNS.iter().map(|c| c.to_string()).collect(),
        power_axis_note: "power_dbm is absolute transmit power in dBm; with the default \
                          -40 dBm noise floor, 60 dBm transmit power corresponds to 100 dB \
                          of transmit SNR"
            .to_string(),
    };
    fs::write(
        metadata_path(&spec.out_dir),
        serde_json::to_string_pretty(&metadata)?,
    )?;

    let csv_path = results_path(&spec.out_dir);
    let fresh = kept_rows.is_empty() && !csv_path.exists();
    if fresh {
        // Materialize the header immediately so even an all-skipped rerun
        // leaves a well-formed file.
        write_rows_atomically(&csv_path, &[])?;
    }
    let file = OpenOptions::new().append(true).open(&csv_path)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let mut manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(manifest_path(&spec.out_dir))?;

    let cells = spec.cells();
    let cells_total = cells.len();
    let pending: Vec<Cell> = cells
        .into_iter()
        .filter(|c| !completed.contains(&c.key()))
        .collect();
    let cells_run = pending.len();
    let mut rows_written = 0;

    let batch_size = rayon::current_num_threads().max(1);
    for batch in pending.chunks(batch_size) {
        let results: Vec<(Cell, Vec<ResultRow>)> = batch
            .par_iter()
            .map(|cell| run_cell(spec, cell).map(|rows| (cell.clone(), rows)))
            .collect::<Result<_>>()?;
        for (cell, rows) in results {
            for row in &rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
            rows_written += rows.len();
            let mut line = serde_json::to_string(&cell)?;
            line.push('\n');
            manifest.write_all(line.as_bytes())?;
            manifest.flush()?;
        }
    }

    Ok(RunSummary {
        csv_path,
        cells_total,
        cells_run,
        cells_skipped: cells_total - cells_run,
        rows_written,
    })
}

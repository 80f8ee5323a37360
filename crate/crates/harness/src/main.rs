//! Batch CLI over the experiment harness: execute sweeps from a JSON spec
//! or flags, self-check the numerical core, and render SVG reports from a
//! results table.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pinch_harness::checks::run_all_checks;
use pinch_harness::experiment::{
    read_rows, run_experiment, Algorithm, ConfigOverrides, ExperimentSpec, MetaBudget,
    SolveBudget,
};
use pinch_harness::plots::{emit_plots, PlotKind};

/// Worker-count override; unset means one worker per logical CPU.
const WORKERS_ENV: &str = "PINCH_WORKERS";

#[derive(Parser)]
#[command(
    name = "pinch-harness",
    version,
    about = "Seeded experiments, self-checks and SVG reports for the pinching-antenna optimizers"
)]
struct Cli {
    /// Master seed folded into every per-cell stream (overrides the spec
    /// file's value when given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Algorithm identifier (gml-jo, gml, et-ca, ao, transformed-ao, gd,
    /// udb, exhaustive).
    #[arg(long)]
    algo: String,
    /// Waveguide counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    k: Vec<usize>,
    /// User counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    m: Vec<usize>,
    /// Transmit powers in dBm, comma separated.
    #[arg(long = "power-dbm", value_delimiter = ',', default_value = "30")]
    power_dbm: Vec<f64>,
    /// Region sides in meters, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    region: Vec<f64>,
    /// Number of seeds (0..n).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Iteration budget per cell.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute an experiment spec from a JSON file.
    Run {
        /// Path to the ExperimentSpec JSON.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Execute a one-algorithm sweep described by flags.
    Sweep(SweepArgs),
    /// Run the built-in property and oracle suite; exits nonzero on failure.
    Check,
    /// Render one report family from a results CSV.
    Plot {
        /// Results CSV produced by `run` or `sweep`.
        #[arg(long = "in")]
        input: PathBuf,
        /// trace, power, region or runtime.
        #[arg(long)]
        kind: String,
        /// Output directory for the SVG files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_workers() -> Result<()> {
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .parse()
            .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
        if n == 0 {
            anyhow::bail!("{WORKERS_ENV} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("installing worker pool")?;
    }
    Ok(())
}

fn print_summary(summary: &pinch_harness::experiment::RunSummary) {
    println!(
        "ran {} cells ({} skipped as already complete), wrote {} rows to {}",
        summary.cells_run,
        summary.cells_skipped,
        summary.rows_written,
        summary.csv_path.display()
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    configure_workers()?;
    match cli.cmd {
        Cmd::Run { spec } => {
            let mut spec = ExperimentSpec::from_json_file(&spec)?;
            if let Some(seed) = cli.seed {
                spec.master_seed = seed;
            }
            let summary = run_experiment(&spec)?;
            print_summary(&summary);
        }
        Cmd::Sweep(args) => {
            let algorithm: Algorithm = args.algo.parse()?;
            let spec = ExperimentSpec {
                algorithms: vec![algorithm],
                k: args.k,
                m: args.m,
                power_dbm: args.power_dbm,
                region_side: args.region,
                seeds: (0..args.seeds).collect(),
                iters: args.iters,
                out_dir: args.out,
                master_seed: cli.seed.unwrap_or(0),
                overrides: ConfigOverrides::default(),
                solve: SolveBudget::default(),
                meta: MetaBudget::default(),
                grid_res: 0.05,
            };
            let summary = run_experiment(&spec)?;
            print_summary(&summary);
        }
        Cmd::Check => {
            let reports = run_all_checks();
            let mut failed = 0;
            for report in &reports {
                let status = if report.passed { "PASS" } else { "FAIL" };
                println!("{status} {} — {}", report.name, report.detail);
                if !report.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                anyhow::bail!("{failed} of {} checks failed", reports.len());
            }
        }
        Cmd::Plot { input, kind, out } => {
            let kind: PlotKind = kind.parse()?;
            let rows = read_rows(&input)?;
            let files = emit_plots(&rows, kind, &out)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

//! End-to-end behavior of the experiment pipeline: CSV schema and resume
//! semantics, parallel/serial agreement, the CLI surface, and plot
//! emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::Command;

use pinch_harness::experiment::{
    manifest_path, read_rows, results_path, run_experiment, Algorithm, ConfigOverrides,
    ExperimentSpec, MetaBudget, ResultRow, SolveBudget,
};
use pinch_harness::plots::{emit_plots, PlotKind};
use tempfile::TempDir;

fn tiny_spec(out_dir: PathBuf) -> ExperimentSpec {
    ExperimentSpec {
        algorithms: vec![Algorithm::Udb, Algorithm::Gd],
        k: vec![1],
        m: vec![1],
        power_dbm: vec![30.0],
        region_side: vec![10.0],
        seeds: vec![0, 1],
        iters: 3,
        out_dir,
        master_seed: 7,
        overrides: ConfigOverrides::default(),
        solve: SolveBudget::default(),
        meta: MetaBudget::default(),
        grid_res: 0.5,
    }
}

/// Rows with the only nondeterministic column cleared, for comparisons.
fn stripped(mut rows: Vec<ResultRow>) -> Vec<ResultRow> {
    for r in &mut rows {
        r.wall_time_ms = 0.0;
    }
    rows
}

#[test]
fn a_sweep_writes_a_schema_stable_csv() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec(dir.path().to_path_buf());
    let summary = run_experiment(&spec).unwrap();
    assert_eq!(summary.cells_total, 4);
    assert_eq!(summary.cells_run, 4);
    assert_eq!(summary.cells_skipped, 0);
    // udb is single-shot (1 row), gd records its init plus 3 rounds.
    assert_eq!(summary.rows_written, 2 * 1 + 2 * 4);

    let text = fs::read_to_string(results_path(dir.path())).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        ResultRow::COLUMNS.join(","),
        "header must match the documented column order"
    );
    let rows = read_rows(&results_path(dir.path())).unwrap();
    assert_eq!(rows.len(), summary.rows_written);

    // The running best never decreases within one cell's trace.
    let mut by_cell: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for row in &rows {
        by_cell.entry(row.cell_key()).or_default().push(row);
    }
    assert_eq!(by_cell.len(), 4);
    for (key, trace) in by_cell {
        for pair in trace.windows(2) {
            assert!(pair[1].iter > pair[0].iter, "{key}: iters out of order");
            assert!(
                pair[1].best_wsr >= pair[0].best_wsr,
                "{key}: best rate decreased"
            );
        }
    }

    let metadata: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap())
            .unwrap();
    assert_eq!(metadata["spec"]["master_seed"], 7);
    assert!(metadata["power_axis_note"]
        .as_str()
        .unwrap()
        .contains("dBm"));
    assert_eq!(metadata["columns"].as_array().unwrap().len(), 12);
}

#[test]
fn a_finished_sweep_reruns_as_a_no_op() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec(dir.path().to_path_buf());
    run_experiment(&spec).unwrap();
    let before = fs::read(results_path(dir.path())).unwrap();

    let summary = run_experiment(&spec).unwrap();
    assert_eq!(summary.cells_run, 0);
    assert_eq!(summary.cells_skipped, 4);
    let after = fs::read(results_path(dir.path())).unwrap();
    assert_eq!(before, after, "a completed sweep must not rewrite results");
}

#[test]
fn a_torn_run_resumes_to_the_same_table() {
    let dir = TempDir::new().unwrap();
    let spec = tiny_spec(dir.path().to_path_buf());
    run_experiment(&spec).unwrap();
    let reference = stripped(read_rows(&results_path(dir.path())).unwrap());

    // Crash window 1: rows flushed to the CSV but the manifest entry never
    // landed. The orphaned rows must be dropped and recomputed.
    let manifest = fs::read_to_string(manifest_path(dir.path())).unwrap();
    let mut lines: Vec<&str> = manifest.lines().collect();
    lines.pop();
    fs::write(manifest_path(dir.path()), format!("{}\n", lines.join("\n"))).unwrap();
    let summary = run_experiment(&spec).unwrap();
    assert_eq!(summary.cells_run, 1);
    assert_eq!(summary.cells_skipped, 3);
    let resumed = stripped(read_rows(&results_path(dir.path())).unwrap());
    // Row order may differ (the recomputed cell appends last); compare as
    // sorted multisets of everything except wall time.
    let mut a = reference.clone();
    let mut b = resumed;
    let key = |r: &ResultRow| (r.cell_key(), r.iter);
    a.sort_by_key(key);
    b.sort_by_key(key);
    assert_eq!(a, b, "resume after a torn manifest changed the results");

    // Crash window 2: the manifest survived but the CSV is gone. Everything
    // must rerun rather than trust unbacked manifest entries.
    fs::remove_file(results_path(dir.path())).unwrap();
    let summary = run_experiment(&spec).unwrap();
    assert_eq!(summary.cells_run, 4);
    let rebuilt = stripped(read_rows(&results_path(dir.path())).unwrap());
    assert_eq!(reference, rebuilt);
}

#[test]
fn parallel_and_serial_schedules_agree() {
    let serial_dir = TempDir::new().unwrap();
    let parallel_dir = TempDir::new().unwrap();
    let serial_spec = tiny_spec(serial_dir.path().to_path_buf());
    let parallel_spec = tiny_spec(parallel_dir.path().to_path_buf());

    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    one.install(|| run_experiment(&serial_spec)).unwrap();
    four.install(|| run_experiment(&parallel_spec)).unwrap();

    let serial = stripped(read_rows(&results_path(serial_dir.path())).unwrap());
    let parallel = stripped(read_rows(&results_path(parallel_dir.path())).unwrap());
    assert_eq!(serial, parallel, "worker count changed results or order");
}

#[test]
fn learned_and_exhaustive_cells_run_end_to_end() {
    let dir = TempDir::new().unwrap();
    let mut spec = tiny_spec(dir.path().to_path_buf());
    spec.algorithms = vec![Algorithm::GmlJo, Algorithm::Exhaustive];
    spec.seeds = vec![0];
    spec.iters = 2;
    spec.meta = MetaBudget {
        hidden: 8,
        inner_steps: 4,
    };
    let summary = run_experiment(&spec).unwrap();
    // The learned cell reports its inference trace (init + 2 rounds); the
    // grid reference is single-shot.
    assert_eq!(summary.rows_written, 3 + 1);
    let rows = read_rows(&results_path(dir.path())).unwrap();
    let grid_row = rows
        .iter()
        .find(|r| r.algorithm == Algorithm::Exhaustive)
        .unwrap();
    let learned_best = rows
        .iter()
        .filter(|r| r.algorithm == Algorithm::GmlJo)
        .map(|r| r.best_wsr)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(grid_row.wsr.is_finite() && grid_row.wsr > 0.0);
    assert!(learned_best.is_finite() && learned_best > 0.0);
    // On a 0.5 m grid over a single link the exhaustive reference should
    // not lose to two learned rounds from a random start.
    assert!(
        grid_row.wsr >= learned_best * 0.5,
        "grid {} vs learned {learned_best}",
        grid_row.wsr
    );
}

#[test]
fn every_plot_kind_renders_from_synthetic_rows() {
    let mut rows = Vec::new();
    for (ai, algo) in [Algorithm::GmlJo, Algorithm::Ao].into_iter().enumerate() {
        for k in [1usize, 2] {
            for power in [30.0, 60.0] {
                for region in [10.0, 20.0] {
                    for seed in [0u64, 1] {
                        for iter in 0..3usize {
                            let base = 1.0 + ai as f64 + iter as f64 * 0.1;
                            rows.push(ResultRow {
                                algorithm: algo,
                                seed,
                                k,
                                m: 2,
                                power_dbm: power,
                                region_side: region,
                                iter,
                                wsr: base,
                                best_wsr: base,
                                min_qos_slack: 0.1,
                                power_slack: 0.0,
                                wall_time_ms: 5.0 * (1 + iter) as f64 * k as f64,
                            });
                        }
                    }
                }
            }
        }
    }
    let dir = TempDir::new().unwrap();
    let mut emitted = Vec::new();
    for kind in PlotKind::ALL {
        let files = emit_plots(&rows, kind, dir.path()).unwrap();
        assert!(!files.is_empty(), "{kind} emitted nothing");
        emitted.extend(files);
    }
    // 8 (k, m, power, region) trace charts, 4 (k, m, region) power charts,
    // 4 (k, m, power) region charts, 4 (m, power, region) runtime charts.
    assert_eq!(emitted.len(), 20);
    for file in &emitted {
        let text = fs::read_to_string(file).unwrap();
        assert!(
            text.starts_with("<?xml") || text.starts_with("<svg"),
            "{} is not an SVG",
            file.display()
        );
        assert!(text.contains("</svg>"), "{} is truncated", file.display());
    }
    // Deterministic names, derived only from the grouping axes.
    assert!(dir.path().join("trace_k1_m2_p30dbm_r10.svg").exists());
    assert!(dir.path().join("power_k2_m2_r20.svg").exists());
    assert!(dir.path().join("region_k1_m2_p60dbm.svg").exists());
    assert!(dir.path().join("runtime_m2_p30dbm_r10.svg").exists());

    // A single-row table still renders a (single-point) chart.
    let single = emit_plots(&rows[..1], PlotKind::Trace, dir.path()).unwrap();
    assert_eq!(single.len(), 1);
}

#[test]
fn the_cli_sweeps_plots_and_checks() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep");
    let bin = env!("CARGO_BIN_EXE_pinch-harness");

    let status = Command::new(bin)
        .args([
            "sweep",
            "--algo",
            "udb",
            "--k",
            "1,2",
            "--m",
            "1",
            "--power-dbm",
            "30,40",
            "--region",
            "10",
            "--seeds",
            "2",
            "--iters",
            "2",
            "--out",
        ])
        .arg(&out)
        .arg("--seed")
        .arg("5")
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_rows(&results_path(&out)).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2, "k × power × seeds single-shot rows");

    let plots = dir.path().join("plots");
    for kind in ["trace", "power", "region", "runtime"] {
        let status = Command::new(bin)
            .args(["plot", "--kind", kind, "--in"])
            .arg(results_path(&out))
            .arg("--out")
            .arg(&plots)
            .status()
            .unwrap();
        assert!(status.success(), "plot --kind {kind} failed");
    }
    assert!(plots.join("power_k1_m1_r10.svg").exists());

    // A spec file drives `run`; rerunning it is a no-op.
    let spec = tiny_spec(dir.path().join("run_out"));
    let spec_path = dir.path().join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    for expect_skip in [false, true] {
        let output = Command::new(bin)
            .arg("run")
            .arg("--spec")
            .arg(&spec_path)
            .output()
            .unwrap();
        assert!(output.status.success());
        let stdout = String::from_utf8(output.stdout).unwrap();
        if expect_skip {
            assert!(stdout.contains("ran 0 cells"), "unexpected rerun: {stdout}");
        }
    }

    // Unknown inputs fail loudly.
    let status = Command::new(bin)
        .args(["sweep", "--algo", "wmmse", "--out"])
        .arg(dir.path().join("nope"))
        .status()
        .unwrap();
    assert!(!status.success());
    let status = Command::new(bin)
        .args(["plot", "--kind", "pie", "--in"])
        .arg(results_path(&out))
        .arg("--out")
        .arg(&plots)
        .status()
        .unwrap();
    assert!(!status.success());

    // The self-check suite passes and reports one line per check.
    let output = Command::new(bin).arg("check").output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

//! Static SVG reports built from a results table. Every plotted value is
//! recomputed from the rows alone so a plot can always be reproduced from
//! its CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use crate::experiment::{Algorithm, ResultRow};

/// The four report families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Mean best rate versus iteration, one curve per algorithm.
    Trace,
    /// Mean final rate versus transmit power in dBm.
    Power,
    /// Mean final rate versus region side, grouped bars.
    Region,
    /// Mean solve wall time versus the number of waveguides.
    Runtime,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::Trace,
        PlotKind::Power,
        PlotKind::Region,
        PlotKind::Runtime,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PlotKind::Trace => "trace",
            PlotKind::Power => "power",
            PlotKind::Region => "region",
            PlotKind::Runtime => "runtime",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PlotKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .with_context(|| {
                let known: Vec<&str> = PlotKind::ALL.iter().map(|k| k.id()).collect();
                format!("unknown plot kind {s:?}; known: {}", known.join(", "))
            })
    }
}

/// Shortest decimal form, used in deterministic file names and tick labels.
fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn algo_color(a: Algorithm) -> PaletteColor<Palette99> {
    let idx = Algorithm::ALL
        .iter()
        .position(|x| *x == a)
        .expect("algorithm is in ALL");
    Palette99::pick(idx)
}

/// The last recorded row of every cell (its final iterate).
fn final_rows(rows: &[ResultRow]) -> Vec<&ResultRow> {
    let mut last: BTreeMap<String, &ResultRow> = BTreeMap::new();
    for row in rows {
        let key = row.cell_key();
        match last.get(&key) {
            Some(prev) if prev.iter >= row.iter => {}
            _ => {
                last.insert(key, row);
            }
        }
    }
    last.into_values().collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Render one chart with per-algorithm line-plus-marker series.
fn draw_series_chart(
    path: &Path,
    caption: &str,
    x_desc: &str,
    y_desc: &str,
    series: &BTreeMap<Algorithm, Vec<(f64, f64)>>,
) -> Result<()> {
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y_max = f64::NEG_INFINITY;
    for pts in series.values() {
        for (x, y) in pts {
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            y_max = y_max.max(*y);
        }
    }
    if !x_min.is_finite() {
        bail!("no points to draw for {caption}");
    }
    if x_max - x_min < 1e-12 {
        // A single x value still deserves a visible marker.
        x_min -= 0.5;
        x_max += 0.5;
    }
    let y_top = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(x_min..x_max, 0.0..y_top)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()?;

    for (algo, pts) in series {
        let color = algo_color(*algo);
        let style = color.stroke_width(2);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), style.clone()))?
            .label(algo.id())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], style.clone()));
        chart.draw_series(
            pts.iter()
                .map(|(x, y)| Circle::new((*x, *y), 3, color.filled())),
        )?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()?;
    root.present()?;
    Ok(())
}

fn trace_plots(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    // One file per placement group; curves are seed means of the running
    // best rate at each iteration.
    let mut groups: BTreeMap<String, BTreeMap<Algorithm, BTreeMap<usize, Vec<f64>>>> =
        BTreeMap::new();
    for row in rows {
        groups
            .entry(format!(
                "trace_k{}_m{}_p{}dbm_r{}",
                row.k,
                row.m,
                fmt_num(row.power_dbm),
                fmt_num(row.region_side)
            ))
            .or_default()
            .entry(row.algorithm)
            .or_default()
            .entry(row.iter)
            .or_default()
            .push(row.best_wsr);
    }
    let mut files = Vec::new();
    for (stem, algos) in groups {
        let series: BTreeMap<Algorithm, Vec<(f64, f64)>> = algos
            .into_iter()
            .map(|(algo, by_iter)| {
                let pts = by_iter
                    .into_iter()
                    .map(|(iter, vals)| (iter as f64, mean(&vals)))
                    .collect();
                (algo, pts)
            })
            .collect();
        let path = out_dir.join(format!("{stem}.svg"));
        draw_series_chart(
            &path,
            &stem,
            "iteration",
            "best weighted sum rate (bits/s/Hz)",
            &series,
        )?;
        files.push(path);
    }
    Ok(files)
}

fn power_plots(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<String, BTreeMap<Algorithm, BTreeMap<u64, (f64, Vec<f64>)>>> =
        BTreeMap::new();
    for row in final_rows(rows) {
        let entry = groups
            .entry(format!(
                "power_k{}_m{}_r{}",
                row.k,
                row.m,
                fmt_num(row.region_side)
            ))
            .or_default()
            .entry(row.algorithm)
            .or_default()
            // Key by bits only for identity; ordering is rebuilt below.
            .entry(row.power_dbm.to_bits())
            .or_insert((row.power_dbm, Vec::new()));
        entry.1.push(row.best_wsr);
    }
    let mut files = Vec::new();
    for (stem, algos) in groups {
        let series: BTreeMap<Algorithm, Vec<(f64, f64)>> = algos
            .into_iter()
            .map(|(algo, by_power)| {
                let mut pts: Vec<(f64, f64)> = by_power
                    .into_values()
                    .map(|(p, vals)| (p, mean(&vals)))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (algo, pts)
            })
            .collect();
        let path = out_dir.join(format!("{stem}.svg"));
        draw_series_chart(
            &path,
            &stem,
            "transmit power (dBm)",
            "final best weighted sum rate (bits/s/Hz)",
            &series,
        )?;
        files.push(path);
    }
    Ok(files)
}

fn region_plots(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<String, BTreeMap<Algorithm, BTreeMap<u64, (f64, Vec<f64>)>>> =
        BTreeMap::new();
    for row in final_rows(rows) {
        let entry = groups
            .entry(format!(
                "region_k{}_m{}_p{}dbm",
                row.k,
                row.m,
                fmt_num(row.power_dbm)
            ))
            .or_default()
            .entry(row.algorithm)
            .or_default()
            .entry(row.region_side.to_bits())
            .or_insert((row.region_side, Vec::new()));
        entry.1.push(row.best_wsr);
    }
    let mut files = Vec::new();
    for (stem, algos) in groups {
        let path = out_dir.join(format!("{stem}.svg"));
        draw_region_chart(&path, &stem, &algos)?;
        files.push(path);
    }
    Ok(files)
}

/// Grouped bars: region sides become categorical slots and each algorithm
/// gets one bar per slot.
fn draw_region_chart(
    path: &Path,
    caption: &str,
    algos: &BTreeMap<Algorithm, BTreeMap<u64, (f64, Vec<f64>)>>,
) -> Result<()> {
    let mut sides: Vec<f64> = algos
        .values()
        .flat_map(|m| m.values().map(|(side, _)| *side))
        .collect();
    sides.sort_by(f64::total_cmp);
    sides.dedup();
    let slot_of = |side: f64| -> usize {
        sides
            .iter()
            .position(|s| *s == side)
            .expect("side collected above")
    };
    let n_algos = algos.len().max(1);
    let bar_width = 0.8 / n_algos as f64;
    let mut y_max = f64::NEG_INFINITY;
    for by_side in algos.values() {
        for (_, vals) in by_side.values() {
            y_max = y_max.max(mean(vals));
        }
    }
    let y_top = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let labels: Vec<String> = sides.iter().map(|s| fmt_num(*s)).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(-0.5..sides.len() as f64 - 0.5, 0.0..y_top)?;
    chart
        .configure_mesh()
        .x_desc("region side (m)")
        .y_desc("final best weighted sum rate (bits/s/Hz)")
        .x_labels(sides.len())
        .x_label_formatter(&|x| {
            let idx = x.round() as i64;
            if (x - idx as f64).abs() < 1e-9 && idx >= 0 && (idx as usize) < labels.len() {
                labels[idx as usize].clone()
            } else {
                String::new()
            }
        })
        .draw()?;

    for (i, (algo, by_side)) in algos.iter().enumerate() {
        let color = algo_color(*algo);
        let offset = -0.4 + i as f64 * bar_width;
        chart
            .draw_series(by_side.values().map(|(side, vals)| {
                let x0 = slot_of(*side) as f64 + offset;
                Rectangle::new([(x0, 0.0), (x0 + bar_width, mean(vals))], color.filled())
            }))?
            .label(algo.id())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()?;
    root.present()?;
    Ok(())
}

fn runtime_plots(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<String, BTreeMap<Algorithm, BTreeMap<usize, Vec<f64>>>> =
        BTreeMap::new();
    for row in final_rows(rows) {
        groups
            .entry(format!(
                "runtime_m{}_p{}dbm_r{}",
                row.m,
                fmt_num(row.power_dbm),
                fmt_num(row.region_side)
            ))
            .or_default()
            .entry(row.algorithm)
            .or_default()
            .entry(row.k)
            .or_default()
            .push(row.wall_time_ms / 1e3);
    }
    let mut files = Vec::new();
    for (stem, algos) in groups {
        let series: BTreeMap<Algorithm, Vec<(f64, f64)>> = algos
            .into_iter()
            .map(|(algo, by_k)| {
                let pts = by_k
                    .into_iter()
                    .map(|(k, secs)| (k as f64, mean(&secs)))
                    .collect();
                (algo, pts)
            })
            .collect();
        let path = out_dir.join(format!("{stem}.svg"));
        draw_series_chart(
            &path,
            &stem,
            "waveguides",
            "solve wall time (s)",
            &series,
        )?;
        files.push(path);
    }
    Ok(files)
}

/// Emit every file of one report family into `out_dir`; names are
/// deterministic functions of the table's placement groups.
pub fn emit_plots(rows: &[ResultRow], kind: PlotKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        bail!("refusing to plot an empty result table");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating plot dir {}", out_dir.display()))?;
    match kind {
        PlotKind::Trace => trace_plots(rows, out_dir),
        PlotKind::Power => power_plots(rows, out_dir),
        PlotKind::Region => region_plots(rows, out_dir),
        PlotKind::Runtime => runtime_plots(rows, out_dir),
    }
}

/// The numeric series behind a plot, used by tests and by anyone who wants
/// the aggregated numbers without parsing SVG: seed-mean final best rate per
/// (algorithm, x) where x follows the plot kind's axis.
pub fn aggregate_final_means(
    rows: &[ResultRow],
    x_of: impl Fn(&ResultRow) -> f64,
) -> BTreeMap<Algorithm, Vec<(f64, f64)>> {
    let mut acc: BTreeMap<Algorithm, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for row in final_rows(rows) {
        let x = x_of(row);
        let entry = acc
            .entry(row.algorithm)
            .or_default()
            .entry(x.to_bits())
            .or_insert((x, Vec::new()));
        entry.1.push(row.best_wsr);
    }
    acc.into_iter()
        .map(|(algo, by_x)| {
            let mut pts: Vec<(f64, f64)> = by_x
                .into_values()
                .map(|(x, vals)| (x, mean(&vals)))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (algo, pts)
        })
        .collect()
}

//! CSV writers. Every file has a header row; floats are written with 13
//! significant digits, `nan` when undefined.

use std::path::Path;

use csv::Writer;

use crate::error::Result;
use crate::harness::montecarlo::{MetricMoments, MonteCarloRun, MonteCarloSummary};
use crate::harness::simulate::{Baseline, FilterStep, Simulation, StepRecord};
use crate::harness::vehicle::VehicleParams;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const METRICS: &str = "metrics.csv";
pub const DETECTOR: &str = "detector.csv";
pub const AGGREGATE: &str = "aggregate.csv";

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.12e}")
    }
}

fn filters(baseline: Baseline) -> Vec<(&'static str, Baseline)> {
    let mut out = Vec::new();
    if baseline.includes_care() {
        out.push(("care", Baseline::Care));
    }
    if baseline.includes_ise() {
        out.push(("ise", Baseline::Ise));
    }
    out
}

fn header(fixed: &[&str], per_filter: &[&str], baseline: Baseline) -> Vec<String> {
    let mut h: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    for (name, _) in filters(baseline) {
        h.extend(per_filter.iter().map(|c| format!("{name}_{c}")));
    }
    h
}

/// Columns: `k, x, y, psi, v, beta, accel, steering`, then per filter
/// `x, y, psi, v, beta, accel, steering`. Steering is recovered from the
/// slip angle.
pub fn trajectory_rows(
    records: &[StepRecord],
    params: &VehicleParams,
    baseline: Baseline,
) -> Vec<Vec<String>> {
    let cols = ["x", "y", "psi", "v", "beta", "accel", "steering"];
    let mut rows = vec![header(
        &["k", "x", "y", "psi", "v", "beta", "accel", "steering"],
        &cols,
        baseline,
    )];
    for r in records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.truth_x.iter().map(|&v| num(v)));
        row.extend(attack_cells(&r.truth_d, params));
        for (_, which) in filters(baseline) {
            let f = r.filter(which);
            row.extend(f.x.iter().map(|&v| num(v)));
            row.extend(attack_cells(&f.d, params));
        }
        rows.push(row);
    }
    rows
}

fn attack_cells(d: &[f64; 2], params: &VehicleParams) -> [String; 3] {
    [num(d[0]), num(d[1]), num(params.steering_angle(d[0]))]
}

/// Columns: `k, spectral_radius`, then per filter `state_error,
/// attack_error, trace_px, trace_pd, state_active, attack_active`.
pub fn metric_rows(records: &[StepRecord], baseline: Baseline) -> Vec<Vec<String>> {
    let cols = [
        "state_error",
        "attack_error",
        "trace_px",
        "trace_pd",
        "state_active",
        "attack_active",
    ];
    let mut rows = vec![header(&["k", "spectral_radius"], &cols, baseline)];
    for r in records {
        let mut row = vec![r.k.to_string(), num(r.spectral_radius)];
        for (_, which) in filters(baseline) {
            let f: &FilterStep = r.filter(which);
            row.extend([
                num(f.state_error(&r.truth_x)),
                num(f.attack_error(&r.truth_d)),
                num(f.trace_px),
                num(f.trace_pd),
                f.state_active.to_string(),
                f.attack_active.to_string(),
            ]);
        }
        rows.push(row);
    }
    rows
}

/// Columns: `k, attacked`, then per filter `statistic, cusum, alarm`.
pub fn detector_rows(records: &[StepRecord], baseline: Baseline) -> Vec<Vec<String>> {
    let mut rows = vec![header(
        &["k", "attacked"],
        &["statistic", "cusum", "alarm"],
        baseline,
    )];
    for r in records {
        let attacked = r.truth_d.iter().any(|&v| v != 0.0 && v.is_finite());
        let mut row = vec![r.k.to_string(), u8::from(attacked).to_string()];
        for (_, which) in filters(baseline) {
            let f = r.filter(which);
            row.extend([
                num(f.statistic),
                num(f.cusum),
                u8::from(f.alarm).to_string(),
            ]);
        }
        rows.push(row);
    }
    rows
}

pub fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = Writer::from_path(path)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trajectories.csv`, `metrics.csv` and `detector.csv` into `dir`,
/// one row per step `0..=K`.
pub fn write_simulation(
    dir: &Path,
    sim: &Simulation,
    params: &VehicleParams,
    baseline: Baseline,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join(TRAJECTORIES),
        &trajectory_rows(&sim.records, params, baseline),
    )?;
    write_rows(&dir.join(METRICS), &metric_rows(&sim.records, baseline))?;
    write_rows(&dir.join(DETECTOR), &detector_rows(&sim.records, baseline))?;
    Ok(())
}

const RUN_COLS: [&str; 6] = [
    "state_error",
    "attack_error",
    "trace_px",
    "trace_pd",
    "false_negative_rate",
    "alarm_steps",
];

/// One row per run plus a final `mean` row. Columns: `run, seed`, then per
/// filter `state_error, attack_error, trace_px, trace_pd,
/// false_negative_rate, alarm_steps`.
pub fn run_rows(
    runs: &[MonteCarloRun],
    summary: &MonteCarloSummary,
    baseline: Baseline,
) -> Vec<Vec<String>> {
    let mut rows = vec![header(&["run", "seed"], &RUN_COLS, baseline)];
    for r in runs {
        let mut row = vec![r.index.to_string(), r.seed.to_string()];
        for (_, which) in filters(baseline) {
            let m = if which == Baseline::Ise {
                &r.ise
            } else {
                &r.care
            };
            row.extend([
                num(m.state_error),
                num(m.attack_error),
                num(m.state_trace),
                num(m.attack_trace),
                num(m.false_negative_rate.unwrap_or(f64::NAN)),
                m.alarms.iter().filter(|&&a| a).count().to_string(),
            ]);
        }
        rows.push(row);
    }
    let mut mean = vec!["mean".to_string(), String::new()];
    for (_, which) in filters(baseline) {
        let m = moments(summary, which);
        let alarms = runs
            .iter()
            .map(|r| {
                let m = if which == Baseline::Ise {
                    &r.ise
                } else {
                    &r.care
                };
                m.alarms.iter().filter(|&&a| a).count() as f64
            })
            .sum::<f64>()
            / runs.len().max(1) as f64;
        mean.extend([
            num(m.state_error.mean),
            num(m.attack_error.mean),
            num(m.state_trace.mean),
            num(m.attack_trace.mean),
            num(m.false_negative_rate.mean),
            num(alarms),
        ]);
    }
    rows.push(mean);
    rows
}

fn moments(summary: &MonteCarloSummary, which: Baseline) -> &MetricMoments {
    if which == Baseline::Ise {
        &summary.ise
    } else {
        &summary.care
    }
}

/// Columns: `metric, mean, std, min, max, count`.
pub fn aggregate_rows(summary: &MonteCarloSummary, baseline: Baseline) -> Vec<Vec<String>> {
    let mut rows = vec![["metric", "mean", "std", "min", "max", "count"]
        .map(String::from)
        .to_vec()];
    for (name, which) in filters(baseline) {
        let m = moments(summary, which);
        for (col, mo) in [
            ("state_error", m.state_error),
            ("attack_error", m.attack_error),
            ("trace_px", m.state_trace),
            ("trace_pd", m.attack_trace),
            ("false_negative_rate", m.false_negative_rate),
        ] {
            rows.push(vec![
                format!("{name}_{col}"),
                num(mo.mean),
                num(mo.std),
                num(mo.min),
                num(mo.max),
                mo.count.to_string(),
            ]);
        }
    }
    rows
}

/// Writes `metrics.csv` (per run plus mean) and `aggregate.csv` into `dir`.
pub fn write_monte_carlo(
    dir: &Path,
    runs: &[MonteCarloRun],
    summary: &MonteCarloSummary,
    baseline: Baseline,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(&dir.join(METRICS), &run_rows(runs, summary, baseline))?;
    write_rows(&dir.join(AGGREGATE), &aggregate_rows(summary, baseline))?;
    Ok(())
}

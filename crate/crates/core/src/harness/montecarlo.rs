//! Seeded Monte-Carlo batches of the vehicle scenario.

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::scenario::ScenarioConfig;
use crate::harness::simulate::{simulate_with, RunMetrics, StabilityDiagnostics};

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub index: usize,
    pub seed: u64,
    pub care: RunMetrics,
    pub ise: RunMetrics,
    pub diagnostics: StabilityDiagnostics,
}

/// Seed of run `index`: `base + index`, wrapping.
pub fn run_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Runs `runs` independent copies of `config` in parallel, run `i` seeded
/// with [`run_seed`]. Results are ordered by run index.
pub fn monte_carlo(config: &ScenarioConfig, runs: usize) -> Result<Vec<MonteCarloRun>> {
    config.check()?;
    (0..runs)
        .into_par_iter()
        .map(|index| {
            let seed = run_seed(config.seed, index);
            let cfg = ScenarioConfig {
                seed,
                ..config.clone()
            };
            let summary = simulate_with(&cfg, &mut |_| {})?;
            Ok(MonteCarloRun {
                index,
                seed,
                care: summary.care,
                ise: summary.ise,
                diagnostics: summary.diagnostics,
            })
        })
        .collect()
}

/// Sample mean and standard deviation (`n - 1` denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Moments {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                count: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricMoments {
    pub state_error: Moments,
    pub attack_error: Moments,
    pub state_trace: Moments,
    pub attack_trace: Moments,
    /// Over runs where the rate is defined.
    pub false_negative_rate: Moments,
}

impl MetricMoments {
    fn of<'a>(metrics: impl Iterator<Item = &'a RunMetrics> + Clone) -> Self {
        Self {
            state_error: Moments::of(metrics.clone().map(|m| m.state_error)),
            attack_error: Moments::of(metrics.clone().map(|m| m.attack_error)),
            state_trace: Moments::of(metrics.clone().map(|m| m.state_trace)),
            attack_trace: Moments::of(metrics.clone().map(|m| m.attack_trace)),
            false_negative_rate: Moments::of(metrics.filter_map(|m| m.false_negative_rate)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub care: MetricMoments,
    pub ise: MetricMoments,
    /// Run average of `‖x̃ₖ‖²` for CARE, `k = 0..=K`.
    pub mean_squared_error: Vec<f64>,
    /// Running maximum of [`Self::mean_squared_error`].
    pub running_max: Vec<f64>,
}

pub fn summarize(runs: &[MonteCarloRun]) -> MonteCarloSummary {
    let len = runs
        .iter()
        .map(|r| r.diagnostics.squared_error.len())
        .min()
        .unwrap_or(0);
    let mut mean_squared_error = vec![0.0; len];
    for r in runs {
        for (acc, v) in mean_squared_error
            .iter_mut()
            .zip(&r.diagnostics.squared_error)
        {
            *acc += v;
        }
    }
    for v in &mut mean_squared_error {
        *v /= runs.len() as f64;
    }
    let running_max = mean_squared_error
        .iter()
        .scan(f64::NEG_INFINITY, |m, &v| {
            *m = f64::max(*m, v);
            Some(*m)
        })
        .collect();
    MonteCarloSummary {
        runs: runs.len(),
        care: MetricMoments::of(runs.iter().map(|r| &r.care)),
        ise: MetricMoments::of(runs.iter().map(|r| &r.ise)),
        mean_squared_error,
        running_max,
    }
}

/// Mean of `series` over decile `d` (1-based) of its index range.
pub fn decile_mean(series: &[f64], d: usize) -> f64 {
    assert!((1..=10).contains(&d), "decile must be in 1..=10");
    let n = series.len();
    let lo = (d - 1) * n / 10;
    let hi = (d * n / 10).max(lo + 1).min(n);
    series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}

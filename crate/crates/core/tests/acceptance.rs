//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the test target unless
//! `ACCEPTANCE_STRICT=1` is set.

use std::time::{Duration, Instant};

use care_core::harness::montecarlo::{decile_mean, run_seed};
use care_core::harness::{
    self, bicycle_matrices, simulate, ModelScenario, ScenarioConfig, Simulation,
};
use care_core::{
    estimate_attack, measurement_update, posterior_covariance, predict, project, qp_oracle,
    time_update, DMatrix, DVector, EstimatorState, FixedConstraints, LtiModel, Mode, NoiseSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = gaussian_matrix(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

/// Exhaustive KKT enumeration, independent of the library's solvers.
fn kkt_enumeration(
    e: &DVector<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let n = e.len();
    let q = a.nrows();
    let objective = |z: &DVector<f64>| ((z - e).transpose() * w * (z - e))[(0, 0)];
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << q) {
        let rows: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        let s = rows.len();
        let mut kkt = DMatrix::zeros(n + s, n + s);
        let mut rhs = DVector::zeros(n + s);
        kkt.view_mut((0, 0), (n, n)).copy_from(w);
        rhs.rows_mut(0, n).copy_from(&(w * e));
        for (j, &r) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(c, n + j)] = a[(r, c)];
                kkt[(n + j, c)] = a[(r, c)];
            }
            rhs[n + j] = b[r];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, n).into_owned();
        // W (z - e) + A' μ = 0 with μ >= 0 at a KKT point
        let mu = sol.rows(n, s).into_owned();
        if mu.iter().any(|&m| m < -1e-9) {
            continue;
        }
        let slack = a * &z - b;
        if slack.iter().any(|&v| v > 1e-9 * (1.0 + b.abs().max())) {
            continue;
        }
        let f = objective(&z);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z, f));
        }
    }
    best.expect("feasible instance has a solution")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_z = 0.0f64;
    let mut worst_f = 0.0f64;
    let mut active_instances = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let q = rng.random_range(1..=6);
        let a = gaussian_matrix(&mut rng, q, n);
        let z0 = gaussian_vector(&mut rng, n);
        let slack = DVector::from_fn(q, |_, _| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        let b = &a * &z0 + slack;
        let e = gaussian_vector(&mut rng, n) * 3.0;
        let w = random_spd(&mut rng, n, 0.1);
        let objective = |z: &DVector<f64>| ((z - &e).transpose() * &w * (z - &e))[(0, 0)];

        let res = match project(&e, &w, &a, &b) {
            Ok(r) => r,
            Err(err) => return outcome(false, format!("project failed: {err}")),
        };
        if res.is_active() {
            active_instances += 1;
        }
        let (z_kkt, f_kkt) = kkt_enumeration(&e, &w, &a, &b);
        let lib_oracle = match qp_oracle(&e, &w, &a, &b) {
            Ok(z) => z,
            Err(err) => return outcome(false, format!("qp_oracle failed: {err}")),
        };
        let f = objective(&res.estimate);
        worst_z = worst_z
            .max((&res.estimate - &z_kkt).abs().max())
            .max((&res.estimate - &lib_oracle).abs().max());
        worst_f = worst_f.max((f - f_kkt).abs() / f_kkt.abs().max(1.0));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_z <= 1e-8 && worst_f <= 1e-8 && elapsed < Duration::from_secs(10),
        format!(
            "200 instances ({active_instances} with active rows): max estimate gap {worst_z:.2e}, max objective gap {worst_f:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

struct Batch {
    sims: Vec<Simulation>,
    elapsed: Duration,
}

fn vehicle_batch() -> Batch {
    let config = ScenarioConfig::default();
    let start = Instant::now();
    let sims = (0..100)
        .into_par_iter()
        .map(|i| {
            let cfg = ScenarioConfig {
                seed: run_seed(config.seed, i),
                ..config.clone()
            };
            simulate(&cfg).expect("vehicle scenario runs")
        })
        .collect();
    Batch {
        sims,
        elapsed: start.elapsed(),
    }
}

fn criterion_2(batch: &Batch) -> Outcome {
    const TOL: f64 = 1e-10;
    let mut checked = [0usize; 4];
    let mut violations: Vec<String> = Vec::new();
    let mut worst = [0.0f64; 2];
    for (run, sim) in batch.sims.iter().enumerate() {
        for r in &sim.records {
            let f = &r.care;
            if r.k >= 1 {
                if r.truth_x_feasible {
                    checked[0] += 1;
                    let e = f.state_error(&r.truth_x);
                    let eu = dist(&f.x_unconstrained, &r.truth_x);
                    worst[0] = worst[0].max(e - eu);
                    if e > eu + TOL {
                        violations.push(format!(
                            "run {run} k {} state error {e:.6e} > {eu:.6e}",
                            r.k
                        ));
                    }
                }
                checked[2] += 1;
                let strict = f.state_active > 0;
                if f.trace_px > f.trace_px_unconstrained
                    || (strict && f.trace_px >= f.trace_px_unconstrained)
                {
                    violations.push(format!("run {run} k {} trace Px", r.k));
                }
            }
            if r.k < sim.records.len() - 1 {
                if r.truth_d_feasible {
                    checked[1] += 1;
                    let e = f.attack_error(&r.truth_d);
                    let eu = dist(&f.d_unconstrained, &r.truth_d);
                    worst[1] = worst[1].max(e - eu);
                    if e > eu + TOL {
                        violations.push(format!(
                            "run {run} k {} attack error {e:.6e} > {eu:.6e}",
                            r.k
                        ));
                    }
                }
                checked[3] += 1;
                let strict = f.attack_active > 0;
                if f.trace_pd > f.trace_pd_unconstrained
                    || (strict && f.trace_pd >= f.trace_pd_unconstrained)
                {
                    violations.push(format!("run {run} k {} trace Pd", r.k));
                }
            }
        }
    }
    let mut detail = format!(
        "{} violations over {} state / {} attack error checks and {} / {} trace checks; worst excess state {:.2e}, attack {:.2e}",
        violations.len(),
        checked[0],
        checked[1],
        checked[2],
        checked[3],
        worst[0],
        worst[1]
    );
    if let Some(first) = violations.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    outcome(violations.is_empty(), detail)
}

fn dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn criterion_3(batch: &Batch) -> Outcome {
    let reference = [0.72, 0.65, 0.74, 0.67];
    let pick =
        |m: &harness::RunMetrics| [m.state_error, m.attack_error, m.state_trace, m.attack_trace];
    let mut strict = [0usize; 4];
    let mut care_sum = [0.0; 4];
    let mut ise_sum = [0.0; 4];
    for sim in &batch.sims {
        let (c, i) = (pick(&sim.care), pick(&sim.ise));
        for j in 0..4 {
            if c[j] < i[j] {
                strict[j] += 1;
            }
            care_sum[j] += c[j];
            ise_sum[j] += i[j];
        }
    }
    let ratios: Vec<f64> = (0..4).map(|j| care_sum[j] / ise_sum[j]).collect();
    let in_band = (0..4).all(|j| (ratios[j] / reference[j] - 1.0).abs() <= 0.5);
    let ordered = strict.iter().all(|&s| s >= 95);
    let fast = batch.elapsed < Duration::from_secs(120);
    outcome(
        in_band && ordered && fast,
        format!(
            "strict orderings {strict:?}/100; mean ratios [{:.3}, {:.3}, {:.3}, {:.3}] vs [0.72, 0.65, 0.74, 0.67]; 100 runs in {:.1}s",
            ratios[0],
            ratios[1],
            ratios[2],
            ratios[3],
            batch.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4(batch: &Batch) -> Outcome {
    let mut dominated = 0;
    let mut strictly = 0;
    let mut ise_rates = Vec::new();
    let mut care_rates = Vec::new();
    let mut sustained = 0;
    for sim in &batch.sims {
        let (Some(c), Some(i)) = (sim.care.false_negative_rate, sim.ise.false_negative_rate) else {
            return outcome(false, "false negative rate undefined");
        };
        if c <= i {
            dominated += 1;
        }
        if c < i {
            strictly += 1;
        }
        care_rates.push(c);
        ise_rates.push(i);
        if sim.care.alarms[110..=600].iter().all(|&a| a) {
            sustained += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mc, mi) = (mean(&care_rates), mean(&ise_rates));
    outcome(
        dominated == batch.sims.len() && mi > 0.4 && sustained >= 95,
        format!(
            "F_neg(CARE) <= F_neg(ISE) in {dominated}/100 runs ({strictly} strict); mean F_neg CARE {mc:.4}, ISE {mi:.4}; sustained CUSUM alarm on [110, 600] in {sustained}/100 runs"
        ),
    )
}

struct UnbiasednessRun {
    d_err: Vec<DVector<f64>>,
    x_err: Vec<DVector<f64>>,
    pd: Vec<DMatrix<f64>>,
    residual: f64,
}

fn criterion_5() -> (Outcome, f64) {
    const RUNS: usize = 2000;
    const STEPS: usize = 50;
    let params = harness::VehicleParams::default();
    let (a, b, g, c) = bicycle_matrices(8.0, &params);
    let model = LtiModel {
        a,
        b,
        c,
        g,
        q: params.q(),
        r: params.r(),
    };
    let constraints = FixedConstraints::unconstrained(care_core::harness::vehicle::DIMS);
    let x_hat0 = DVector::from_vec(vec![5.0, 2.5, 0.0, 8.0]);
    let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.1, 0.5]));
    let control = |k: usize| DVector::from_vec(vec![0.02 * (0.1 * k as f64).cos(), 0.5]);
    let attack = |k: usize| {
        DVector::from_vec(vec![
            0.3 * (0.2 * k as f64).sin(),
            if k < 25 { 2.0 } else { -1.0 },
        ])
    };

    let runs: Vec<UnbiasednessRun> = (0..RUNS)
        .into_par_iter()
        .map(|i| {
            let mut noise = NoiseSpec::new(10_000 + i as u64);
            let x0 = &x_hat0 + noise.gaussian(&p0);
            let scenario = ModelScenario {
                model: &model,
                constraints: &constraints,
                initial_state: x0,
                initial_estimate: x_hat0.clone(),
                initial_covariance: p0.clone(),
                control: &control,
                attack: &attack,
                horizon: STEPS,
                mode: Mode::Unconstrained,
            };
            let run = harness::simulate_model(&scenario, &mut noise).expect("model run");
            UnbiasednessRun {
                d_err: run
                    .steps
                    .iter()
                    .zip(&run.truth_d)
                    .map(|(s, d)| &s.attack.d - d)
                    .collect(),
                x_err: run
                    .steps
                    .iter()
                    .zip(&run.truth_x[1..])
                    .map(|(s, x)| &s.update.x - x)
                    .collect(),
                pd: run.steps.iter().map(|s| s.attack.p.clone()).collect(),
                residual: run
                    .steps
                    .iter()
                    .map(|s| s.attack.unbiasedness_residual)
                    .fold(0.0, f64::max),
            }
        })
        .collect();

    let mut worst_z = 0.0f64;
    let mut worst_cov = 0.0f64;
    for k in 0..STEPS {
        for (errs, dim) in [(0, 2usize), (1, 4usize)] {
            for j in 0..dim {
                let v: Vec<f64> = runs
                    .iter()
                    .map(|r| {
                        if errs == 0 {
                            r.d_err[k][j]
                        } else {
                            r.x_err[k][j]
                        }
                    })
                    .collect();
                let mean = v.iter().sum::<f64>() / RUNS as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (RUNS - 1) as f64;
                worst_z = worst_z.max(mean.abs() / (var / RUNS as f64).sqrt());
            }
        }
        let mean = runs
            .iter()
            .fold(DVector::zeros(2), |acc, r| acc + &r.d_err[k])
            / RUNS as f64;
        let cov = runs.iter().fold(DMatrix::zeros(2, 2), |acc, r| {
            let e = &r.d_err[k] - &mean;
            acc + &e * e.transpose()
        }) / (RUNS - 1) as f64;
        let reported = &runs[0].pd[k];
        worst_cov = worst_cov.max((cov - reported).norm() / reported.norm());
    }
    let residual = runs.iter().map(|r| r.residual).fold(0.0, f64::max);
    (
        outcome(
            worst_z <= 4.0 && worst_cov <= 0.1,
            format!(
                "{RUNS} runs x {STEPS} steps: max |mean| / standard error {worst_z:.2}, max relative Frobenius error of cov(d error) vs P^d,u {worst_cov:.4}"
            ),
        ),
        residual,
    )
}

fn criterion_6() -> (Outcome, f64) {
    const RUNS: usize = 200;
    let config = ScenarioConfig {
        horizon: 10_000,
        ..ScenarioConfig::default()
    };
    let start = Instant::now();
    let results = harness::monte_carlo(&config, RUNS).expect("long runs");
    let elapsed = start.elapsed();
    let summary = harness::summarize(&results);
    let fifth = decile_mean(&summary.mean_squared_error, 5);
    let last = decile_mean(&summary.mean_squared_error, 10);
    let max_eig = results
        .iter()
        .map(|r| r.diagnostics.max_cov_eig_late)
        .fold(0.0, f64::max);
    let rho_finite = results
        .iter()
        .all(|r| r.diagnostics.spectral_radius.iter().all(|v| v.is_finite()));
    let pxu_bounds = results.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
        (
            lo.min(r.diagnostics.min_eig_pxu),
            hi.max(r.diagnostics.max_eig_pxu),
        )
    });
    let residual = results
        .iter()
        .map(|r| {
            r.care
                .max_unbiasedness_residual
                .max(r.ise.max_unbiasedness_residual)
        })
        .fold(0.0, f64::max);
    (
        outcome(
            last <= 1.5 * fifth && max_eig <= 1e6 && rho_finite && elapsed < Duration::from_secs(300),
            format!(
                "{RUNS} runs x 10000 steps: mean |x error|^2 last decile {last:.4e}, fifth decile {fifth:.4e} (ratio {:.3}); max covariance eigenvalue after k = 100 {max_eig:.3e}; P^x,u eigenvalues in [{:.3e}, {:.3e}]; spectral radii finite: {rho_finite}; {:.1}s",
                last / fifth,
                pxu_bounds.0,
                pxu_bounds.1,
                elapsed.as_secs_f64()
            ),
        ),
        residual,
    )
}

fn criterion_7() -> Outcome {
    let alphas = [0.001, 0.01, 0.05, 0.1, 0.5];
    let mut worst_round_trip = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for df in 1..=10u32 {
        let dist = ChiSquared::new(df as f64).unwrap();
        for &alpha in &alphas {
            let q = match care_core::chi2_quantile(df, alpha) {
                Ok(q) => q,
                Err(e) => return outcome(false, format!("df {df} alpha {alpha}: {e}")),
            };
            worst_round_trip = worst_round_trip.max((dist.cdf(q) - (1.0 - alpha)).abs());
            let oracle = dist.inverse_cdf(1.0 - alpha);
            worst_oracle = worst_oracle.max((q - oracle).abs() / oracle.max(1.0));
        }
    }
    let q = care_core::chi2_quantile(2, 0.01).unwrap();
    let oracle = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
    outcome(
        worst_round_trip <= 1e-8 && (q - 9.21034).abs() <= 1e-4 && (q - oracle).abs() <= 1e-4,
        format!(
            "max |CDF(q) - (1 - alpha)| {worst_round_trip:.2e} over df 1..10 x 5 alphas; max gap to gamma-inversion oracle {worst_oracle:.2e}; df 2, alpha 0.01 -> {q:.6} (oracle {oracle:.6})"
        ),
    )
}

fn gain_probe() -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_decrease = f64::NEG_INFINITY;
    let mut instances = 0;
    while instances < 50 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(1..n);
        let l = rng.random_range(p..=n);
        let model = LtiModel {
            a: gaussian_matrix(&mut rng, n, n) * 0.5,
            b: gaussian_matrix(&mut rng, n, 1),
            c: gaussian_matrix(&mut rng, l, n),
            g: gaussian_matrix(&mut rng, n, p),
            q: random_spd(&mut rng, n, 0.01) * 0.1,
            r: random_spd(&mut rng, l, 0.05) * 0.1,
        };
        let state = EstimatorState::new(gaussian_vector(&mut rng, n), random_spd(&mut rng, n, 0.1));
        let y = gaussian_vector(&mut rng, l);
        let u = gaussian_vector(&mut rng, 1);
        let Ok(pred) = predict(&state, &model, &u) else {
            continue;
        };
        let Ok(atk) = estimate_attack(&pred, &model, &state.p, &y) else {
            continue;
        };
        let tu = time_update(&pred, &atk, &model, &state).expect("time update");
        let upd = measurement_update(&tu, &atk, &model, &y).expect("measurement update");
        let base = upd.p.trace();
        for _ in 0..20 {
            let dir = gaussian_matrix(&mut rng, n, l);
            for eps in [1e-2, 1e-4, 1e-6, -1e-3] {
                let perturbed = &upd.gain + &dir * eps;
                let t = posterior_covariance(&tu, &atk, &model, &perturbed).trace();
                worst_decrease = worst_decrease.max(base - t);
            }
        }
        instances += 1;
    }
    (instances, worst_decrease)
}

fn criterion_8(vehicle_residual: f64, model_residual: f64, long_residual: f64) -> Outcome {
    let worst = vehicle_residual.max(model_residual).max(long_residual);
    let (instances, decrease) = gain_probe();
    outcome(
        worst <= 1e-8 && decrease <= 1e-10,
        format!(
            "max |MCG - I| over all acceptance runs {worst:.2e}; largest trace decrease from perturbing L on {instances} instances {decrease:.2e}"
        ),
    )
}

fn main() {
    let mut lines = Vec::new();
    lines.push((1, criterion_1()));
    let batch = vehicle_batch();
    lines.push((2, criterion_2(&batch)));
    lines.push((3, criterion_3(&batch)));
    lines.push((4, criterion_4(&batch)));
    let vehicle_residual = batch
        .sims
        .iter()
        .map(|s| {
            s.care
                .max_unbiasedness_residual
                .max(s.ise.max_unbiasedness_residual)
        })
        .fold(0.0, f64::max);
    drop(batch);
    let (c5, model_residual) = criterion_5();
    lines.push((5, c5));
    let (c6, long_residual) = criterion_6();
    lines.push((6, c6));
    lines.push((7, criterion_7()));
    lines.push((
        8,
        criterion_8(vehicle_residual, model_residual, long_residual),
    ));

    let mut failed = 0;
    for (id, o) in &lines {
        println!(
            "criterion {id}: {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}

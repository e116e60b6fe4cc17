//! Closed simulation loop: plant, CARE and the unconstrained baseline (ISE)
//! on identical noise, metrics and stability diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::detector::{self, DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::estimator::{care_step, EstimatorState, Mode, StepOutput};
use crate::harness::scenario::{AttackKind, ScenarioConfig, Windows};
use crate::harness::vehicle::{self, VehicleModel, VehicleParams};
use crate::linalg::{self, COND_LIMIT};
use crate::model::{ConstraintSet, FixedConstraints, NoiseSpec, SystemModel};

/// Which filters a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    Care,
    Ise,
    #[default]
    Both,
}

impl Baseline {
    pub fn includes_care(self) -> bool {
        matches!(self, Baseline::Care | Baseline::Both)
    }
    pub fn includes_ise(self) -> bool {
        matches!(self, Baseline::Ise | Baseline::Both)
    }
}

/// One filter's quantities at step `k`.
///
/// State fields belong to `x̂ₖ`. Attack fields belong to the estimate of `dₖ`,
/// which is only produced at step `k + 1`; they are NaN at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    pub x: [f64; 4],
    pub x_unconstrained: [f64; 4],
    pub trace_px: f64,
    pub trace_px_unconstrained: f64,
    pub state_active: usize,
    pub d: [f64; 2],
    pub d_unconstrained: [f64; 2],
    pub trace_pd: f64,
    pub trace_pd_unconstrained: f64,
    pub attack_active: usize,
    /// `max |M C G - I|` of the step that produced the attack estimate.
    pub unbiasedness_residual: f64,
    pub statistic: f64,
    pub cusum: f64,
    pub alarm: bool,
}

impl FilterStep {
    fn initial(x: &DVector<f64>, p: &DMatrix<f64>) -> Self {
        let x = to4(x);
        Self {
            x,
            x_unconstrained: x,
            trace_px: p.trace(),
            trace_px_unconstrained: p.trace(),
            state_active: 0,
            d: [f64::NAN; 2],
            d_unconstrained: [f64::NAN; 2],
            trace_pd: f64::NAN,
            trace_pd_unconstrained: f64::NAN,
            attack_active: 0,
            unbiasedness_residual: f64::NAN,
            statistic: f64::NAN,
            cusum: f64::NAN,
            alarm: false,
        }
    }

    fn from_state(out: &StepOutput) -> Self {
        Self {
            x: to4(&out.state.x),
            x_unconstrained: to4(&out.update.x),
            trace_px: out.state.p.trace(),
            trace_px_unconstrained: out.update.p.trace(),
            state_active: out.state_projection.active.len(),
            ..Self::initial(&out.state.x, &out.state.p)
        }
    }

    pub fn state_error(&self, truth: &[f64; 4]) -> f64 {
        dist(&self.x, truth)
    }

    pub fn attack_error(&self, truth: &[f64; 2]) -> f64 {
        dist(&self.d, truth)
    }
}

/// Truth and both filters at step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub truth_x: [f64; 4],
    /// `[β, a]` applied between `k` and `k + 1`; NaN at the last step.
    pub truth_d: [f64; 2],
    pub truth_x_feasible: bool,
    pub truth_d_feasible: bool,
    pub care: FilterStep,
    pub ise: FilterStep,
    /// Spectral radius of the transformed CARE error dynamics entering step
    /// `k`; NaN at `k = 0`.
    pub spectral_radius: f64,
}

impl StepRecord {
    pub fn filter(&self, which: Baseline) -> &FilterStep {
        match which {
            Baseline::Ise => &self.ise,
            _ => &self.care,
        }
    }
}

/// Table-style sums and detector outcome for one filter over one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub state_error: f64,
    pub attack_error: f64,
    pub state_trace: f64,
    pub attack_trace: f64,
    /// Per-step χ² false negative rate; `None` when no step is attacked.
    pub false_negative_rate: Option<f64>,
    /// CUSUM alarm per attack step `0..K`.
    pub alarms: Vec<bool>,
    /// Steps with `d ≠ 0` and `‖d̂ᵘ - d‖ >= ‖d‖ / 2`.
    pub assumption_violations: usize,
    pub max_unbiasedness_residual: f64,
}

/// Stability monitors for the CARE filter.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityDiagnostics {
    /// Spectral radius of `Ã` entering steps `1..=K`.
    pub spectral_radius: Vec<f64>,
    /// Steps where `C G M` was singular and `Ã` used its pseudoinverse.
    pub pseudo_inverse_steps: usize,
    /// `‖x̃ₖ‖²` for `k = 0..=K`.
    pub squared_error: Vec<f64>,
    pub min_eig_pxu: f64,
    pub max_eig_pxu: f64,
    /// Largest eigenvalue of any of `Pˣ`, `Pˣ'ᵘ`, `Pᵈ`, `Pᵈ'ᵘ` after step 100.
    pub max_cov_eig_late: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub care: RunMetrics,
    pub ise: RunMetrics,
    pub diagnostics: StabilityDiagnostics,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: Vec<StepRecord>,
    pub care: RunMetrics,
    pub ise: RunMetrics,
    pub diagnostics: StabilityDiagnostics,
}

/// `Ã = (I - G M (C G M)⁻¹ C) Ā Γ̄` with `Ā = (I - G M C) A`.
#[derive(Debug, Clone)]
pub struct TransformedDynamics {
    pub matrix: DMatrix<f64>,
    /// False when `C G M` was singular and its pseudoinverse was used.
    pub exact: bool,
}

pub fn transformed_dynamics(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    m: &DMatrix<f64>,
    c: &DMatrix<f64>,
    gamma_bar: &DMatrix<f64>,
) -> TransformedDynamics {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let gm = g * m;
    let a_bar = (&i - &gm * c) * a;
    let cgm = c * &gm;
    let exact_inv = (cgm.is_square() && linalg::condition_number(&cgm) < COND_LIMIT)
        .then(|| cgm.clone().try_inverse())
        .flatten();
    let exact = exact_inv.is_some();
    let inv = exact_inv.unwrap_or_else(|| linalg::pinv(&cgm));
    TransformedDynamics {
        matrix: (&i - &gm * inv * c) * a_bar * gamma_bar,
        exact,
    }
}

/// Runs the configured scenario and keeps every step.
pub fn simulate(config: &ScenarioConfig) -> Result<Simulation> {
    let mut records = Vec::with_capacity(config.horizon + 1);
    let summary = simulate_with(config, &mut |r| records.push(*r))?;
    Ok(Simulation {
        records,
        care: summary.care,
        ise: summary.ise,
        diagnostics: summary.diagnostics,
    })
}

/// Runs the configured scenario with its constant control, streaming every
/// step to `observer`.
pub fn simulate_with(
    config: &ScenarioConfig,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<RunSummary> {
    let u = config.control;
    simulate_with_policy(config, &|_| u, observer)
}

/// Runs the configured scenario with an open-loop control policy
/// `k -> [β, a]`.
pub fn simulate_with_policy(
    config: &ScenarioConfig,
    policy: &dyn Fn(usize) -> [f64; 2],
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<RunSummary> {
    config.check()?;
    let params = config.vehicle_params();
    let horizon = config.horizon;
    let windows = config.windows();
    let det = DetectorConfig::new(config.alpha, 2, config.forgetting)?;

    let q_factor = linalg::sqrt_factor(&params.q()) * config.process_noise_scale;
    let r_factor = linalg::sqrt_factor(&params.r()) * config.measurement_noise_scale;
    let mut noise = NoiseSpec::new(config.seed);

    let attack = |k: usize| match config.attack {
        AttackKind::Vehicle => vehicle::attack_vector(k, &params),
        AttackKind::None => DVector::zeros(2),
    };

    let mut x_true = config.initial_state();
    let x0 = config.initial_estimate();
    let p0 = config.initial_covariance();
    let mut care = EstimatorState::new(x0.clone(), p0.clone());
    let mut ise = EstimatorState::new(x0.clone(), p0.clone());
    let mut gamma_prev = DMatrix::<f64>::identity(4, 4);

    let mut acc = Accumulator::new(windows, horizon);
    let mut pending = StepRecord {
        k: 0,
        truth_x: to4(&x_true),
        truth_d: [f64::NAN; 2],
        truth_x_feasible: state_feasible(&x_true, &params),
        truth_d_feasible: true,
        care: FilterStep::initial(&x0, &p0),
        ise: FilterStep::initial(&x0, &p0),
        spectral_radius: f64::NAN,
    };
    acc.state_step(&pending);
    let mut care_det = DetectorState::default();
    let mut ise_det = DetectorState::default();

    for k in 1..=horizon {
        let u = DVector::from_column_slice(&policy(k - 1));
        let d = attack(k - 1);

        let (a, b, g, _) = vehicle::bicycle_matrices(x_true[3], &params);
        let w = noise.gaussian_with_factor(&q_factor);
        x_true = &a * &x_true + &b * &u + &g * &d + w;
        if config.plant_saturation {
            for (i, lo, hi) in params.state_box() {
                x_true[i] = x_true[i].clamp(lo, hi);
            }
        }
        let y = &x_true + noise.gaussian_with_factor(&r_factor);

        let (attack_rows, state_rows) = vehicle::build_constraints(&u, &params);
        let constraints = FixedConstraints {
            attack: attack_rows,
            state: state_rows,
        };
        let care_model = VehicleModel::at_velocity(care.x[3], &params);
        let care_out = care_step(&care, &care_model, &constraints, &u, &y, Mode::Care)
            .map_err(|e| e.at_step(k))?;
        let ise_model = VehicleModel::at_velocity(ise.x[3], &params);
        let ise_out = care_step(&ise, &ise_model, &constraints, &u, &y, Mode::Unconstrained)
            .map_err(|e| e.at_step(k))?;

        pending.truth_d = to2(&d);
        pending.truth_d_feasible = constraints.attack.contains(&d, 1e-12);
        let care_stat = fill_attack(&mut pending.care, &care_out, &det, &mut care_det, config);
        let ise_stat = fill_attack(&mut pending.ise, &ise_out, &det, &mut ise_det, config);
        acc.attack_step(k - 1, &d, &pending, care_stat, ise_stat);
        observer(&pending);

        let td = transformed_dynamics(
            &care_model.a(k - 1),
            &care_model.g(k - 1),
            &care_out.attack.gain,
            &care_model.c(k),
            &gamma_prev,
        );
        let rho = linalg::spectral_radius(&td.matrix);
        acc.dynamics(rho, td.exact);
        acc.covariances(k, &care_out);
        gamma_prev = care_out.state_projection.complement.clone();

        pending = StepRecord {
            k,
            truth_x: to4(&x_true),
            truth_d: [f64::NAN; 2],
            truth_x_feasible: state_feasible(&x_true, &params),
            truth_d_feasible: true,
            care: FilterStep::from_state(&care_out),
            ise: FilterStep::from_state(&ise_out),
            spectral_radius: rho,
        };
        acc.state_step(&pending);

        care = care_out.state;
        ise = ise_out.state;
    }
    observer(&pending);

    Ok(acc.finish(det.quantile))
}

fn fill_attack(
    rec: &mut FilterStep,
    out: &StepOutput,
    det: &DetectorConfig,
    state: &mut DetectorState,
    config: &ScenarioConfig,
) -> f64 {
    let stat = detector::chi2_statistic(&out.d, &out.pd, config.statistic);
    let (next, alarm) = detector::cusum_update(*state, stat, det);
    *state = next;
    rec.d = to2(&out.d);
    rec.d_unconstrained = to2(&out.attack.d);
    rec.trace_pd = out.pd.trace();
    rec.trace_pd_unconstrained = out.attack.p.trace();
    rec.attack_active = out.attack_projection.active.len();
    rec.unbiasedness_residual = out.attack.unbiasedness_residual;
    rec.statistic = stat;
    rec.cusum = next.s;
    rec.alarm = alarm;
    stat
}

struct FilterSums {
    state_error: f64,
    attack_error: f64,
    state_trace: f64,
    attack_trace: f64,
    stats: Vec<f64>,
    alarms: Vec<bool>,
    assumption_violations: usize,
    max_residual: f64,
}

impl FilterSums {
    fn new(horizon: usize) -> Self {
        Self {
            state_error: 0.0,
            attack_error: 0.0,
            state_trace: 0.0,
            attack_trace: 0.0,
            stats: Vec::with_capacity(horizon),
            alarms: Vec::with_capacity(horizon),
            assumption_violations: 0,
            max_residual: 0.0,
        }
    }

    fn finish(self, truth: &[DVector<f64>], quantile: f64) -> RunMetrics {
        RunMetrics {
            state_error: self.state_error,
            attack_error: self.attack_error,
            state_trace: self.state_trace,
            attack_trace: self.attack_trace,
            false_negative_rate: detector::false_negative_rate(&self.stats, quantile, truth).ok(),
            alarms: self.alarms,
            assumption_violations: self.assumption_violations,
            max_unbiasedness_residual: self.max_residual,
        }
    }
}

struct Accumulator {
    windows: Windows,
    care: FilterSums,
    ise: FilterSums,
    truth_d: Vec<DVector<f64>>,
    spectral_radius: Vec<f64>,
    pseudo_inverse_steps: usize,
    squared_error: Vec<f64>,
    min_eig_pxu: f64,
    max_eig_pxu: f64,
    max_cov_eig_late: f64,
}

impl Accumulator {
    fn new(windows: Windows, horizon: usize) -> Self {
        Self {
            windows,
            care: FilterSums::new(horizon),
            ise: FilterSums::new(horizon),
            truth_d: Vec::with_capacity(horizon),
            spectral_radius: Vec::with_capacity(horizon),
            pseudo_inverse_steps: 0,
            squared_error: Vec::with_capacity(horizon + 1),
            min_eig_pxu: f64::INFINITY,
            max_eig_pxu: f64::NEG_INFINITY,
            max_cov_eig_late: 0.0,
        }
    }

    fn attack_step(
        &mut self,
        k: usize,
        d: &DVector<f64>,
        rec: &StepRecord,
        care_stat: f64,
        ise_stat: f64,
    ) {
        let w = self.windows;
        let attacked = d.iter().any(|&v| v != 0.0);
        for (sums, f, stat) in [
            (&mut self.care, &rec.care, care_stat),
            (&mut self.ise, &rec.ise, ise_stat),
        ] {
            if w.attack_error.contains(k) {
                sums.attack_error += f.attack_error(&rec.truth_d);
            }
            if w.attack_trace.contains(k) {
                sums.attack_trace += f.trace_pd;
            }
            sums.stats.push(stat);
            sums.alarms.push(f.alarm);
            sums.max_residual = sums.max_residual.max(f.unbiasedness_residual);
            if attacked && dist(&f.d_unconstrained, &rec.truth_d) >= 0.5 * d.norm() {
                sums.assumption_violations += 1;
            }
        }
        self.truth_d.push(d.clone());
    }

    fn state_step(&mut self, rec: &StepRecord) {
        let w = self.windows;
        for (sums, f) in [(&mut self.care, &rec.care), (&mut self.ise, &rec.ise)] {
            if w.state_error.contains(rec.k) {
                sums.state_error += f.state_error(&rec.truth_x);
            }
            if w.state_trace.contains(rec.k) {
                sums.state_trace += f.trace_px;
            }
        }
        self.squared_error
            .push(rec.care.state_error(&rec.truth_x).powi(2));
    }

    fn dynamics(&mut self, rho: f64, exact: bool) {
        self.spectral_radius.push(rho);
        if !exact {
            self.pseudo_inverse_steps += 1;
        }
    }

    fn covariances(&mut self, k: usize, out: &StepOutput) {
        let lo = linalg::min_eigenvalue(&out.update.p);
        let hi = linalg::max_eigenvalue(&out.update.p);
        self.min_eig_pxu = self.min_eig_pxu.min(lo);
        self.max_eig_pxu = self.max_eig_pxu.max(hi);
        if k > 100 {
            let late = [&out.state.p, &out.pd, &out.attack.p]
                .into_iter()
                .map(linalg::max_eigenvalue)
                .fold(hi, f64::max);
            self.max_cov_eig_late = self.max_cov_eig_late.max(late);
        }
    }

    fn finish(self, quantile: f64) -> RunSummary {
        RunSummary {
            care: self.care.finish(&self.truth_d, quantile),
            ise: self.ise.finish(&self.truth_d, quantile),
            diagnostics: StabilityDiagnostics {
                spectral_radius: self.spectral_radius,
                pseudo_inverse_steps: self.pseudo_inverse_steps,
                squared_error: self.squared_error,
                min_eig_pxu: self.min_eig_pxu,
                max_eig_pxu: self.max_eig_pxu,
                max_cov_eig_late: self.max_cov_eig_late,
            },
        }
    }
}

fn state_feasible(x: &DVector<f64>, params: &VehicleParams) -> bool {
    params
        .state_box()
        .iter()
        .all(|&(i, lo, hi)| x[i] >= lo && x[i] <= hi)
}

fn to4(v: &DVector<f64>) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

fn to2(v: &DVector<f64>) -> [f64; 2] {
    [v[0], v[1]]
}

fn dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Truth and filter outputs of [`simulate_model`].
#[derive(Debug, Clone)]
pub struct ModelRun {
    /// `x₀ ..= x_K`.
    pub truth_x: Vec<DVector<f64>>,
    /// `d₀ .. d_{K-1}`.
    pub truth_d: Vec<DVector<f64>>,
    /// Filter outputs for steps `1 ..= K`.
    pub steps: Vec<StepOutput>,
}

/// Inputs of [`simulate_model`] for an arbitrary model.
pub struct ModelScenario<'a> {
    pub model: &'a dyn SystemModel,
    pub constraints: &'a dyn ConstraintSet,
    pub initial_state: DVector<f64>,
    pub initial_estimate: DVector<f64>,
    pub initial_covariance: DMatrix<f64>,
    pub control: &'a dyn Fn(usize) -> DVector<f64>,
    pub attack: &'a dyn Fn(usize) -> DVector<f64>,
    pub horizon: usize,
    pub mode: Mode,
}

/// Simulates `x[k+1] = A x + B u + G d + w`, `y = C x + v` for any model
/// whose plant and filter matrices coincide, and filters it.
pub fn simulate_model(scenario: &ModelScenario<'_>, noise: &mut NoiseSpec) -> Result<ModelRun> {
    let model = scenario.model;
    let dims = model.dims();
    if scenario.initial_state.len() != dims.state || scenario.initial_estimate.len() != dims.state {
        return Err(Error::Dimension(format!(
            "initial state and estimate must have length {}",
            dims.state
        )));
    }
    let mut x = scenario.initial_state.clone();
    let mut state = EstimatorState::new(
        scenario.initial_estimate.clone(),
        scenario.initial_covariance.clone(),
    );
    let mut run = ModelRun {
        truth_x: vec![x.clone()],
        truth_d: Vec::with_capacity(scenario.horizon),
        steps: Vec::with_capacity(scenario.horizon),
    };
    for k in 1..=scenario.horizon {
        let u = (scenario.control)(k - 1);
        let d = (scenario.attack)(k - 1);
        let w = noise.gaussian(&model.q(k - 1));
        x = model.a(k - 1) * &x + model.b(k - 1) * &u + model.g(k - 1) * &d + w;
        let y = model.c(k) * &x + noise.gaussian(&model.r(k));
        let out = care_step(&state, model, scenario.constraints, &u, &y, scenario.mode)
            .map_err(|e| e.at_step(k))?;
        state = out.state.clone();
        run.truth_x.push(x.clone());
        run.truth_d.push(d);
        run.steps.push(out);
    }
    Ok(run)
}

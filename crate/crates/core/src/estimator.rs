//! Simultaneous attack and state estimation with constraint projection.
//!
//! One call to [`care_step`] advances the filter from `k-1` to `k`:
//! prediction, minimum-variance unbiased attack estimation, time update,
//! measurement update and finally the projection of `d̂ᵘ[k-1]` and `x̂ᵘ[k]`
//! onto their feasible sets. With [`Mode::Unconstrained`] the projections
//! are skipped, which is the unconstrained input and state estimator used
//! as the baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, check_len, check_shape};
use crate::model::{ConstraintSet, SystemModel};
use crate::projection::{self, ProjectionResult};

/// Filter state carried between steps: `x̂[k]`, `Pˣ[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: usize,
}

impl EstimatorState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { x, p, k: 0 }
    }
}

/// `x̂⁻[k]` and `Pˣ'⁻[k]`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub k: usize,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

/// Unconstrained attack estimate `d̂ᵘ[k-1]` and the quantities it was built from.
#[derive(Debug, Clone)]
pub struct AttackEstimate {
    pub k: usize,
    pub d: DVector<f64>,
    /// `Pᵈ'ᵘ[k-1]`
    pub p: DMatrix<f64>,
    /// `Pˣᵈ[k-1]`
    pub pxd: DMatrix<f64>,
    /// `M[k]`
    pub gain: DMatrix<f64>,
    /// `R̃[k] = (C P⁻ C' + R)⁻¹`
    pub r_tilde: DMatrix<f64>,
    /// Max-abs deviation of `M C G` from the identity.
    pub unbiasedness_residual: f64,
}

/// `x̂*[k]`, `Pˣ*[k]` and `R̃*[k]`.
#[derive(Debug, Clone)]
pub struct TimeUpdated {
    pub k: usize,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
}

/// `x̂ᵘ[k]`, `Pˣ'ᵘ[k]` and the gain `L[k]`.
#[derive(Debug, Clone)]
pub struct UnconstrainedUpdate {
    pub k: usize,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Whether the projection update runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Full constrained filter.
    #[default]
    Care,
    /// Baseline: both projections skipped.
    Unconstrained,
}

/// Everything one step produces. Attack quantities refer to `k-1`, state
/// quantities to `k`.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub k: usize,
    pub prediction: Prediction,
    pub attack: AttackEstimate,
    pub time_update: TimeUpdated,
    pub update: UnconstrainedUpdate,
    /// Constrained `d̂[k-1]`.
    pub d: DVector<f64>,
    /// `Pᵈ[k-1]`.
    pub pd: DMatrix<f64>,
    pub attack_projection: ProjectionResult,
    pub state_projection: ProjectionResult,
    /// `x̂[k]`, `Pˣ[k]`.
    pub state: EstimatorState,
}

/// `x̂⁻ = A x̂ + B u`, `Pˣ'⁻ = A Pˣ A' + Q`.
pub fn predict(
    state: &EstimatorState,
    model: &dyn SystemModel,
    u: &DVector<f64>,
) -> Result<Prediction> {
    let dims = model.dims();
    let k = state.k;
    check_len("state estimate", &state.x, dims.state)?;
    check_shape("state covariance", &state.p, dims.state, dims.state)?;
    check_len("control input", u, dims.input)?;
    let a = model.a(k);
    let b = model.b(k);
    let q = model.q(k);
    check_shape("A", &a, dims.state, dims.state)?;
    check_shape("B", &b, dims.state, dims.input)?;
    check_shape("Q", &q, dims.state, dims.state)?;

    let x = &a * &state.x + &b * u;
    let p = linalg::symmetrize(&(&a * &state.p * a.transpose() + q));
    Ok(Prediction { k: k + 1, x, p })
}

/// Least-squares attack estimate from the innovation of the prediction.
pub fn estimate_attack(
    pred: &Prediction,
    model: &dyn SystemModel,
    prev_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<AttackEstimate> {
    let dims = model.dims();
    let k = pred.k;
    check_len("measurement", y, dims.output)?;
    let a = model.a(k - 1);
    let g = model.g(k - 1);
    let c = model.c(k);
    let r = model.r(k);
    check_shape("G", &g, dims.state, dims.attack)?;
    check_shape("C", &c, dims.output, dims.state)?;
    check_shape("R", &r, dims.output, dims.output)?;

    let innovation_cov = linalg::symmetrize(&(&c * &pred.p * c.transpose() + &r));
    let r_tilde = innovation_cov
        .cholesky()
        .map(|ch| linalg::symmetrize(&ch.inverse()))
        .ok_or_else(|| Error::InvalidArgument("C P⁻ C' + R is not positive definite".into()))?;

    let cg = &c * &g;
    let info = linalg::symmetrize(&(cg.transpose() * &r_tilde * &cg));
    let cond = linalg::condition_number(&info);
    let (p_du, _) = linalg::spd_inverse(&info).ok_or(Error::AttackUnidentifiable { cond })?;
    let gain = &p_du * cg.transpose() * &r_tilde;
    let d = &gain * (y - &c * &pred.x);
    let pxd = -(prev_cov * a.transpose() * c.transpose() * gain.transpose());
    let unbiasedness_residual = (&gain * &cg - DMatrix::identity(dims.attack, dims.attack))
        .abs()
        .max();

    Ok(AttackEstimate {
        k,
        d,
        p: p_du,
        pxd,
        gain,
        r_tilde,
        unbiasedness_residual,
    })
}

/// Folds `d̂ᵘ` into the prediction and propagates the covariance with all
/// attack and noise cross terms.
pub fn time_update(
    pred: &Prediction,
    atk: &AttackEstimate,
    model: &dyn SystemModel,
    prev: &EstimatorState,
) -> Result<TimeUpdated> {
    let dims = model.dims();
    let k = pred.k;
    if atk.k != k || prev.k + 1 != k {
        return Err(Error::InvalidArgument(format!(
            "time update mixes steps: prediction {k}, attack {}, previous state {}",
            atk.k, prev.k
        )));
    }
    let a = model.a(k - 1);
    let g = model.g(k - 1);
    let q = model.q(k - 1);
    let c = model.c(k);
    let r = model.r(k);
    check_len("attack estimate", &atk.d, dims.attack)?;
    check_shape("M", &atk.gain, dims.attack, dims.output)?;

    let x = &pred.x + &g * &atk.d;

    let gmc = &g * &atk.gain * &c;
    let p = &a * &prev.p * a.transpose()
        + &a * &atk.pxd * g.transpose()
        + &g * atk.pxd.transpose() * a.transpose()
        + &g * &atk.p * g.transpose()
        - &gmc * &q
        - &q * gmc.transpose()
        + &q;
    let p = linalg::symmetrize(&p);

    let cgmr = &c * &g * &atk.gain * &r;
    let r_tilde = linalg::symmetrize(&(&c * &p * c.transpose() - &cgmr - cgmr.transpose() + &r));

    Ok(TimeUpdated { k, x, p, r_tilde })
}

/// `Pˣ'ᵘ` for an arbitrary gain `L`; the measurement update evaluates it at
/// the trace-minimizing gain.
pub fn posterior_covariance(
    tu: &TimeUpdated,
    atk: &AttackEstimate,
    model: &dyn SystemModel,
    gain: &DMatrix<f64>,
) -> DMatrix<f64> {
    let k = tu.k;
    let g = model.g(k - 1);
    let c = model.c(k);
    let r = model.r(k);
    let n = tu.x.len();
    let i_lc = DMatrix::identity(n, n) - gain * &c;
    let gmr_lt = &g * &atk.gain * &r * gain.transpose();
    let p = &i_lc * &gmr_lt
        + gmr_lt.transpose() * i_lc.transpose()
        + &i_lc * &tu.p * i_lc.transpose()
        + gain * &r * gain.transpose();
    linalg::symmetrize(&p)
}

/// Trace-minimizing correction `L = (Pˣ* C' - G M R) R̃*⁺`.
pub fn measurement_update(
    tu: &TimeUpdated,
    atk: &AttackEstimate,
    model: &dyn SystemModel,
    y: &DVector<f64>,
) -> Result<UnconstrainedUpdate> {
    let dims = model.dims();
    let k = tu.k;
    check_len("measurement", y, dims.output)?;
    let g = model.g(k - 1);
    let c = model.c(k);
    let r = model.r(k);

    let scale = (&c * &tu.p * c.transpose()).norm() + r.norm();
    let gain = (&tu.p * c.transpose() - &g * &atk.gain * &r)
        * linalg::pinv_relative_to(&tu.r_tilde, scale);
    let x = &tu.x + &gain * (y - &c * &tu.x);
    let p = posterior_covariance(tu, atk, model, &gain);
    Ok(UnconstrainedUpdate { k, x, p, gain })
}

/// One full filter step from `state` (time `k-1`) given `u[k-1]` and `y[k]`.
pub fn care_step(
    state: &EstimatorState,
    model: &dyn SystemModel,
    constraints: &dyn ConstraintSet,
    u: &DVector<f64>,
    y: &DVector<f64>,
    mode: Mode,
) -> Result<StepOutput> {
    let pred = predict(state, model, u)?;
    let k = pred.k;
    let attack = estimate_attack(&pred, model, &state.p, y)?;
    let tu = time_update(&pred, &attack, model, state)?;
    let update = measurement_update(&tu, &attack, model, y)?;

    let (attack_rows, state_rows) = match mode {
        Mode::Care => (constraints.attack(k - 1), constraints.state(k)),
        Mode::Unconstrained => (
            crate::model::Halfspaces::none(attack.d.len()),
            crate::model::Halfspaces::none(update.x.len()),
        ),
    };
    let (d, pd, attack_projection) =
        projection::project_attack(&attack.d, &attack.p, &attack_rows)?;
    let (x, px, state_projection) = projection::project_state(&update.x, &update.p, &state_rows)?;

    Ok(StepOutput {
        k,
        prediction: pred,
        attack,
        time_update: tu,
        update,
        d,
        pd,
        attack_projection,
        state_projection,
        state: EstimatorState { x, p: px, k },
    })
}

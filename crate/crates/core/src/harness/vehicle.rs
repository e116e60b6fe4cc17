//! Linearized, discretized kinematic bicycle model and the attack scenario
//! driven through it.
//!
//! State `x = [x, y, ψ, v]`, input and attack `[β, a]` where the slip angle
//! `β = atan(l_r / (l_f + l_r) · tan δ)` is derived from the steering angle.

use nalgebra::{DMatrix, DVector};

use crate::model::{Dims, Halfspaces, SystemModel};

pub const STATE_DIM: usize = 4;
pub const INPUT_DIM: usize = 2;

pub const DIMS: Dims = Dims {
    state: STATE_DIM,
    input: INPUT_DIM,
    attack: INPUT_DIM,
    output: STATE_DIM,
};

/// Vehicle geometry, sampling time, operating bounds and noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// Center of mass to front axle, m.
    pub l_f: f64,
    /// Center of mass to rear axle, m.
    pub l_r: f64,
    /// Sampling time, s.
    pub sample_time: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub v_max: f64,
    /// Steering bound |δ|, rad.
    pub steering_max: f64,
    /// Acceleration bound |a|, m/s².
    pub accel_max: f64,
    pub q_diag: [f64; STATE_DIM],
    pub r_diag: [f64; STATE_DIM],
}

/// Default steering bound in radians, as stated (not π/3).
#[allow(clippy::approx_constant)]
pub const STEERING_LIMIT: f64 = 1.0472;

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            l_f: 1.25,
            l_r: 1.25,
            sample_time: 0.01,
            x_max: 20.0,
            y_max: 5.0,
            v_max: 22.0,
            steering_max: STEERING_LIMIT,
            accel_max: 3.5,
            q_diag: [0.1, 0.1, 0.001, 0.0001],
            r_diag: [0.01, 0.01, 0.001, 0.00001],
        }
    }
}

impl VehicleParams {
    /// Rejects nonpositive lengths, sampling time, bounds or noise levels.
    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("sample_time", self.sample_time),
            ("x_max", self.x_max),
            ("y_max", self.y_max),
            ("v_max", self.v_max),
            ("steering_max", self.steering_max),
            ("accel_max", self.accel_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.q_diag.iter().any(|&q| q.is_nan() || q < 0.0) {
            return Err("q_diag entries must be nonnegative".into());
        }
        if self.r_diag.iter().any(|&r| r.is_nan() || r <= 0.0) {
            return Err("r_diag entries must be positive".into());
        }
        Ok(())
    }

    pub fn q(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_diag))
    }

    pub fn r(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_diag))
    }

    /// Slip angle for a steering angle.
    pub fn slip_angle(&self, steering: f64) -> f64 {
        (self.l_r / (self.l_f + self.l_r) * steering.tan()).atan()
    }

    /// Steering angle for a slip angle (inverse of [`Self::slip_angle`]).
    pub fn steering_angle(&self, slip: f64) -> f64 {
        ((self.l_f + self.l_r) / self.l_r * slip.tan()).atan()
    }

    /// Box `0 <= x <= x_max`, `0 <= y <= y_max`, `0 <= v <= v_max`.
    pub fn state_box(&self) -> [(usize, f64, f64); 3] {
        [
            (0, 0.0, self.x_max),
            (1, 0.0, self.y_max),
            (3, 0.0, self.v_max),
        ]
    }
}

/// Discrete `(A, B, G, C)` at velocity `v`. `G = B` because the attack
/// enters through the actuators, `C = I`.
pub fn bicycle_matrices(
    v: f64,
    params: &VehicleParams,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let ts = params.sample_time;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.0, 0.0,    ts,
        0.0, 1.0, v * ts, 0.0,
        0.0, 0.0, 1.0,    0.0,
        0.0, 0.0, 0.0,    1.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0,               0.0,
        v * ts,            0.0,
        v * ts / params.l_r, 0.0,
        0.0,               ts,
    ]);
    (a, b.clone(), b, DMatrix::identity(4, 4))
}

/// Attack waveform `(δᵈ, aᵈ)` at step `k`.
///
/// Steering: `1.1 sin(0.05 k)` from `k = 100` on. Acceleration: `±3.5`
/// alternating on the 100-step blocks `[100, 200), ..., [600, 700)`, positive
/// on odd blocks, zero elsewhere.
pub fn attack_signal(k: usize) -> (f64, f64) {
    if k < 100 {
        return (0.0, 0.0);
    }
    let steering = 1.1 * (0.05 * k as f64).sin();
    let block = k / 100;
    let accel = match block {
        1..=6 if block % 2 == 1 => 3.5,
        1..=6 => -3.5,
        _ => 0.0,
    };
    (steering, accel)
}

/// Attack input vector `[βᵈ, aᵈ]` at step `k`.
pub fn attack_vector(k: usize, params: &VehicleParams) -> DVector<f64> {
    let (steering, accel) = attack_signal(k);
    DVector::from_vec(vec![params.slip_angle(steering), accel])
}

/// Attack constraints at `k-1` given the nominal input `u[k-1] = [βᵘ, aᵘ]`,
/// and the state box.
///
/// ```text
/// [ 1  0]        [steering_max - u0]
/// [-1  0] d  <=  [steering_max + u0]
/// [ 0  1]        [accel_max    - u1]
/// [ 0 -1]        [accel_max    + u1]
/// ```
pub fn build_constraints(u: &DVector<f64>, params: &VehicleParams) -> (Halfspaces, Halfspaces) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 2, &[
         1.0,  0.0,
        -1.0,  0.0,
         0.0,  1.0,
         0.0, -1.0,
    ]);
    let b = DVector::from_vec(vec![
        params.steering_max - u[0],
        params.steering_max + u[0],
        params.accel_max - u[1],
        params.accel_max + u[1],
    ]);
    let state = Halfspaces::boxed(STATE_DIM, &params.state_box());
    (Halfspaces::new(a, b), state)
}

/// Vehicle model frozen at one velocity. The filters rebuild it every step
/// from their own previous velocity estimate.
#[derive(Debug, Clone)]
pub struct VehicleModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl VehicleModel {
    pub fn at_velocity(v: f64, params: &VehicleParams) -> Self {
        let (a, b, _, c) = bicycle_matrices(v, params);
        Self {
            a,
            b,
            c,
            q: params.q(),
            r: params.r(),
        }
    }
}

impl SystemModel for VehicleModel {
    fn dims(&self) -> Dims {
        DIMS
    }
    fn a(&self, _k: usize) -> DMatrix<f64> {
        self.a.clone()
    }
    fn b(&self, _k: usize) -> DMatrix<f64> {
        self.b.clone()
    }
    fn c(&self, _k: usize) -> DMatrix<f64> {
        self.c.clone()
    }
    fn g(&self, _k: usize) -> DMatrix<f64> {
        self.b.clone()
    }
    fn q(&self, _k: usize) -> DMatrix<f64> {
        self.q.clone()
    }
    fn r(&self, _k: usize) -> DMatrix<f64> {
        self.r.clone()
    }
}

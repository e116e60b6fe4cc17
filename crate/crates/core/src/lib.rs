//! Constrained attack-resilient estimation.
//!
//! A recursive filter estimates an unknown additive attack on the actuators
//! together with the system state, then projects both estimates onto known
//! inequality constraints using covariance-weighted projection. A χ² test and
//! a CUSUM detector with forgetting run on the attack estimate.
//!
//! * [`model`]: system description, constraint sets, noise source, validation.
//! * [`estimator`]: one filter step, decomposed into its stages.
//! * [`projection`]: active-set projection onto `{z : A z <= b}`.
//! * [`detector`]: χ² quantile, statistic, CUSUM.
//! * [`harness`]: the vehicle scenario, simulation, Monte-Carlo and CSV output.

pub mod detector;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod projection;

pub use detector::{
    chi2_quantile, chi2_statistic, cusum_update, false_negative_rate, DetectorConfig,
    DetectorState, StatisticMode,
};
pub use error::{Error, Result};
pub use estimator::{
    care_step, estimate_attack, measurement_update, posterior_covariance, predict, time_update,
    AttackEstimate, EstimatorState, Mode, Prediction, StepOutput, TimeUpdated, UnconstrainedUpdate,
};
pub use model::{
    validate, ConstraintSet, Dims, FixedConstraints, Halfspaces, LtiModel, NoiseSpec, SystemModel,
    ValidationReport, Violation,
};
pub use projection::{project, project_attack, project_state, qp_oracle, ProjectionResult};

pub use nalgebra::{DMatrix, DVector};

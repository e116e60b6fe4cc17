//! Vehicle scenario, simulation loop, Monte-Carlo batches and CSV output.

pub mod montecarlo;
pub mod output;
pub mod scenario;
pub mod simulate;
pub mod vehicle;

pub use montecarlo::{monte_carlo, summarize, Moments, MonteCarloRun, MonteCarloSummary};
pub use scenario::{AttackKind, ScenarioConfig, Window, Windows};
pub use simulate::{
    simulate, simulate_model, simulate_with, simulate_with_policy, transformed_dynamics, Baseline,
    FilterStep, ModelRun, ModelScenario, RunMetrics, RunSummary, Simulation, StabilityDiagnostics,
    StepRecord, TransformedDynamics,
};
pub use vehicle::{
    attack_signal, bicycle_matrices, build_constraints, VehicleModel, VehicleParams,
};

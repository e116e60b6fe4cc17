use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use care_core::harness::{self, output, Baseline, ScenarioConfig, VehicleModel};
use care_core::{validate, DVector, Error, FixedConstraints};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "care",
    version,
    about = "Constrained attack-resilient estimation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectories.csv, metrics.csv and detector.csv.
    Simulate(RunArgs),
    /// Run seeded copies of a scenario and write metrics.csv and aggregate.csv.
    Montecarlo(RunArgs),
    /// Check the configured model and constraints.
    Validate(ScenarioArgs),
    /// Print the upper-alpha quantile of the chi-squared distribution.
    Quantile {
        #[arg(long)]
        df: u32,
        #[arg(long)]
        alpha: f64,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML key = value); defaults to the built-in vehicle scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Overrides the run count from the config.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = BaselineArg::Both)]
    baseline: BaselineArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Care,
    Ise,
    Both,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Care => Baseline::Care,
            BaselineArg::Ise => Baseline::Ise,
            BaselineArg::Both => Baseline::Both,
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(msg)) => Failure::Validation(format!("invalid config: {msg}")),
            _ => Failure::Runtime(e),
        }
    }
}

fn load(args: &ScenarioArgs) -> anyhow::Result<ScenarioConfig> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::load(path)
            .map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                e => e,
            })
            .with_context(|| format!("reading {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let config = load(&args.scenario)?;
    let sim = harness::simulate(&config).map_err(anyhow::Error::from)?;
    let baseline = args.baseline.into();
    output::write_simulation(&args.out, &sim, &config.vehicle_params(), baseline)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("writing to {}", args.out.display()))?;
    println!("{:<22}{:>18}{:>18}", "metric", "care", "ise");
    let rows = [
        ("sum |x error|", sim.care.state_error, sim.ise.state_error),
        ("sum |d error|", sim.care.attack_error, sim.ise.attack_error),
        ("sum trace Px", sim.care.state_trace, sim.ise.state_trace),
        ("sum trace Pd", sim.care.attack_trace, sim.ise.attack_trace),
        (
            "false negative rate",
            sim.care.false_negative_rate.unwrap_or(f64::NAN),
            sim.ise.false_negative_rate.unwrap_or(f64::NAN),
        ),
    ];
    for (name, care, ise) in rows {
        println!("{name:<22}{care:>18.9}{ise:>18.9}");
    }
    Ok(())
}

fn montecarlo(args: &RunArgs) -> Result<(), Failure> {
    let config = load(&args.scenario)?;
    let runs = args.runs.unwrap_or(config.runs);
    if runs == 0 {
        return Err(Failure::Validation("--runs must be positive".into()));
    }
    let results = harness::monte_carlo(&config, runs).map_err(anyhow::Error::from)?;
    let summary = harness::summarize(&results);
    output::write_monte_carlo(&args.out, &results, &summary, args.baseline.into())
        .map_err(anyhow::Error::from)
        .with_context(|| format!("writing to {}", args.out.display()))?;
    println!(
        "{:<22}{:>18}{:>18}{:>18}{:>18}",
        "metric", "care mean", "care std", "ise mean", "ise std"
    );
    let (c, i) = (&summary.care, &summary.ise);
    for (name, cm, im) in [
        ("sum |x error|", c.state_error, i.state_error),
        ("sum |d error|", c.attack_error, i.attack_error),
        ("sum trace Px", c.state_trace, i.state_trace),
        ("sum trace Pd", c.attack_trace, i.attack_trace),
        (
            "false negative rate",
            c.false_negative_rate,
            i.false_negative_rate,
        ),
    ] {
        println!(
            "{name:<22}{:>18.9}{:>18.9}{:>18.9}{:>18.9}",
            cm.mean, cm.std, im.mean, im.std
        );
    }
    Ok(())
}

fn validate_scenario(args: &ScenarioArgs) -> Result<(), Failure> {
    let config = load(args)?;
    config.check().map_err(anyhow::Error::from)?;
    let params = config.vehicle_params();
    let model = VehicleModel::at_velocity(config.initial_estimate()[3], &params);
    let (attack, state) =
        harness::build_constraints(&DVector::from_column_slice(&config.control), &params);
    let constraints = FixedConstraints { attack, state };
    let report = validate(&model, &constraints, 2);
    let mut problems: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
    if !constraints.state.contains(&config.initial_state(), 0.0) {
        problems.push("initial state violates the state constraints".into());
    }
    if problems.is_empty() {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::Validation(problems.join("; ")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Montecarlo(args) => montecarlo(&args),
        Command::Validate(args) => validate_scenario(&args),
        Command::Quantile { df, alpha } => {
            let q = care_core::chi2_quantile(df, alpha)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            println!("{q:.9}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docking_core::constraints_cost::ThrustBoundMode;
use docking_core::dynamics::ControlVector6;
use docking_core::pipeline::{run_propagate, run_solve, PropagationMode};
use docking_core::scenario::{ScenarioConfig, ScenarioFile};
use docking_core::solver::SolverOptions;
use docking_core::trajectory::{self, read_outputs, write_atomic, write_outputs};
use docking_core::verify;
use docking_core::DockingError;

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
/// `verify` found a failing check.
const EXIT_CHECK_FAILED: u8 = 1;

/// Optimal docking of a servicer with a spinning target.
#[derive(Parser)]
#[command(name = "docking", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the docking problem and write the trajectory, report and plot data.
    Solve(SolveArgs),
    /// Propagate the initial state open loop with zero controls.
    Propagate(PropagateArgs),
    /// Run the oracle and invariant checks.
    Verify(VerifyArgs),
    /// Rebuild the report and plot data from a written trajectory.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,

    /// Number of trapezoidal intervals (overrides the scenario).
    #[arg(long)]
    steps: Option<usize>,

    /// Drop the keep-out constraint.
    #[arg(long)]
    no_collision_constraint: bool,

    /// How the thrust bound is read: `literal` or `squared`.
    #[arg(long)]
    thrust_bound_mode: Option<ThrustBoundMode>,

    /// Initial guess for the final time in seconds.
    #[arg(long)]
    tf_guess: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, DockingError> {
        let mut file = ScenarioFile::load(&self.scenario)?;
        if let Some(n) = self.steps {
            file.discretization.steps = n;
        }
        if self.no_collision_constraint {
            file.options.collision_constraint = false;
        }
        if let Some(mode) = self.thrust_bound_mode {
            file.options.thrust_bound_mode = mode;
        }
        if let Some(t) = self.tf_guess {
            file.discretization.tf_guess_s = t;
        }
        ScenarioConfig::from_file(&file)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Tolerance on the scaled stationarity and complementarity residuals.
    #[arg(long, default_value_t = 1e-6)]
    kkt_tol: f64,

    /// Seed for the starting point perturbation.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Magnitude of uniform noise added to the starting point.
    #[arg(long, default_value_t = 0.0)]
    perturbation: f64,

    #[arg(long, default_value_t = 3000)]
    max_iterations: usize,

    /// Compare analytic and finite-difference derivatives at the start.
    #[arg(long)]
    derivative_check: bool,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// `analytic-cw`, `reference-rk` or `trapezoidal`.
    #[arg(long, default_value = "reference-rk")]
    mode: String,

    /// Propagation horizon in seconds.
    #[arg(long, default_value_t = 400.0)]
    t_end: f64,

    /// Output spacing in seconds; also the trapezoidal step.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Seed of the random oracle samples.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Scenario the trajectory was solved for.
    #[arg(long)]
    scenario: PathBuf,

    /// Directory written by `solve`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Propagate(a) => propagate(a),
        Command::Verify(a) => verify(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                DockingError::Io(_) => EXIT_IO,
                DockingError::Config(_) | DockingError::Parse { .. } | DockingError::Domain(_) => {
                    EXIT_CONFIG
                }
            })
        }
    }
}

fn solve(args: &SolveArgs) -> Result<u8, DockingError> {
    let scenario = args.scenario.load()?;
    let options = SolverOptions {
        kkt_tol: args.kkt_tol,
        seed: args.seed,
        perturbation: args.perturbation,
        max_iterations: args.max_iterations,
        derivative_check: args.derivative_check,
        verbose: log::log_enabled!(log::Level::Debug),
        ..SolverOptions::default()
    };
    let outcome = run_solve(&scenario, &options)?;
    if let Some(check) = &outcome.report.derivative_check {
        eprintln!(
            "derivative check: max relative error {:.3e} at {:?}",
            check.max_rel_error, check.location
        );
    }
    write_outputs(&outcome.trajectory, &args.out)?;
    print!("{}", outcome.trajectory.report());
    println!("outputs written to {}", args.out.display());
    if outcome.report.status.is_converged() {
        Ok(0)
    } else {
        eprintln!("solver did not converge: {}", outcome.report.status);
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn propagate(args: &PropagateArgs) -> Result<u8, DockingError> {
    let scenario = args.scenario.load()?;
    let mode: PropagationMode = args.mode.parse()?;
    let run = run_propagate(
        &scenario,
        args.t_end,
        args.dt,
        mode,
        &ControlVector6::zero(),
    )?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("propagation_{}.csv", args.mode));
    write_atomic(&path, &run.to_csv())?;
    println!("{} samples written to {}", run.times.len(), path.display());
    Ok(0)
}

fn verify(args: &VerifyArgs) -> Result<u8, DockingError> {
    let scenario = args.scenario.load()?;
    let checks = verify::run_all(&scenario, scenario.steps, args.seed)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { 0 } else { EXIT_CHECK_FAILED })
}

fn report(args: &ReportArgs) -> Result<u8, DockingError> {
    let scenario = ScenarioConfig::load(&args.scenario)?;
    let traj = read_outputs(&scenario, &args.out)?;
    refresh(&traj, &args.out)?;
    print!("{}", traj.report());
    Ok(0)
}

/// Rewrites everything derived from the trajectory, leaving the trajectory
/// and the solver summary untouched.
fn refresh(traj: &trajectory::SolutionTrajectory, dir: &Path) -> Result<(), DockingError> {
    trajectory::export_report(traj, &dir.join(trajectory::REPORT_FILE))?;
    write_atomic(
        &dir.join(trajectory::FIG1_FILE),
        &traj.position_thrust_series(),
    )?;
    write_atomic(&dir.join(trajectory::FIG2_FILE), &traj.attitude_series())?;
    write_atomic(&dir.join(trajectory::FIG3_FILE), &traj.path_series())?;
    Ok(())
}

//! End-to-end runs: solving a scenario and open-loop propagation.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::flat::{self, kinematic_jacobian, state_jacobian, NX};
use crate::dynamics::{cw_analytic, full_derivative, ControlVector6, StateVector20};
use crate::error::{domain, DockingError, Result};
use crate::reference::{self, Tolerances};
use crate::scenario::ScenarioConfig;
use crate::solver::{InteriorPoint, NlpSolver, SolveReport, SolverOptions};
use crate::trajectory::{SolutionTrajectory, SolveSummary};
use crate::transcription::{initial_guess, transcribe, trapezoidal_defect, unpack, TranscribedNlp};

pub struct SolveOutcome {
    pub trajectory: SolutionTrajectory,
    pub report: SolveReport,
    pub nlp: TranscribedNlp,
}

/// Transcribes the scenario on `scenario.steps` intervals, solves it from
/// the default starting point and post-processes the result. A report that
/// did not converge is returned as well; check `report.status`. The exported
/// first node is the scenario's initial condition itself.
pub fn run_solve(scenario: &ScenarioConfig, options: &SolverOptions) -> Result<SolveOutcome> {
    run_solve_with(&InteriorPoint, scenario, options)
}

pub fn run_solve_with(
    solver: &dyn NlpSolver,
    scenario: &ScenarioConfig,
    options: &SolverOptions,
) -> Result<SolveOutcome> {
    options.validate()?;
    let steps = scenario.steps;
    let nlp = transcribe(scenario, steps)?;
    let z0 = initial_guess(scenario, steps)?;
    log::info!(
        "solving with {}: {} variables, {} equalities, {} inequalities",
        solver.name(),
        z0.len(),
        nlp.layout.num_eq(),
        crate::solver::NlpProblem::num_ineq(&nlp)
    );
    let report = solver.solve(&nlp, &z0, options);
    log::info!(
        "{} after {} iterations ({:.1} s)",
        report.status,
        report.iterations,
        report.wall_time.as_secs_f64()
    );
    let (mut states, controls, t_f) = unpack(&report.x)?;
    // node 0 is data; the solver's copy only meets it to the feasibility
    // tolerance
    states[0] = scenario.initial;
    let mut trajectory = SolutionTrajectory::new(scenario, states, controls, t_f)?;
    trajectory.summary = Some(SolveSummary::new(&report, steps, scenario.hash));
    Ok(SolveOutcome {
        trajectory,
        report,
        nlp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    /// Closed-form CW solution; translational block only.
    AnalyticCw,
    /// Adaptive Dormand-Prince reference integration.
    ReferenceRk,
    /// Fixed-step implicit trapezoidal rule, the scheme of the transcription.
    Trapezoidal,
}

impl FromStr for PropagationMode {
    type Err = DockingError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic-cw" => Ok(Self::AnalyticCw),
            "reference-rk" => Ok(Self::ReferenceRk),
            "trapezoidal" => Ok(Self::Trapezoidal),
            other => domain(format!(
                "unknown propagation mode {other:?} (expected analytic-cw, reference-rk or trapezoidal)"
            )),
        }
    }
}

/// States on a uniform output grid. Rows hold 6 translational components in
/// analytic mode and the full 20-component state otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub mode: PropagationMode,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

const STATE_NAMES: [&str; NX] = [
    "x", "y", "z", "vx", "vy", "vz", "wSx", "wSy", "wSz", "wTx", "wTy", "wTz", "qS1", "qS2", "qS3",
    "qS4", "qT1", "qT2", "qT3", "qT4",
];

impl Propagation {
    pub fn to_csv(&self) -> String {
        let width = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for name in &STATE_NAMES[..width] {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            let _ = write!(out, "{t:.16e}");
            for v in s {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Largest absolute componentwise difference over the common grid.
    pub fn max_difference(&self, other: &Propagation) -> Result<f64> {
        if self.times != other.times {
            return domain("propagations use different time grids");
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.states.iter().zip(&other.states) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }
}

/// Open-loop propagation of the scenario's initial state under a constant
/// `control`, sampled every `step` seconds up to `t_end`. The trapezoidal
/// mode also integrates with this step.
pub fn run_propagate(
    scenario: &ScenarioConfig,
    t_end: f64,
    step: f64,
    mode: PropagationMode,
    control: &ControlVector6,
) -> Result<Propagation> {
    propagate_state(scenario, &scenario.initial, t_end, step, mode, control)
}

pub fn propagate_state(
    scenario: &ScenarioConfig,
    initial: &StateVector20,
    t_end: f64,
    step: f64,
    mode: PropagationMode,
    control: &ControlVector6,
) -> Result<Propagation> {
    if !(t_end > 0.0 && step > 0.0 && t_end.is_finite()) {
        return domain(format!(
            "propagation needs a positive end time and step, got {t_end} and {step}"
        ));
    }
    let count = (t_end / step).round();
    if (count * step - t_end).abs() > 1e-9 * t_end || count < 1.0 {
        return domain(format!(
            "end time {t_end} is not a multiple of the step {step}"
        ));
    }
    let count = count as usize;
    let times: Vec<f64> = (0..=count)
        .map(|k| t_end * k as f64 / count as f64)
        .collect();
    let p = scenario.params;
    let states = match mode {
        PropagationMode::AnalyticCw => {
            if control.to_array().iter().any(|&c| c != 0.0) {
                return domain("the analytic CW solution only covers zero controls");
            }
            times
                .iter()
                .map(|&t| {
                    cw_analytic(&initial.trans, p.mean_motion, t)
                        .to_array()
                        .to_vec()
                })
                .collect()
        }
        PropagationMode::ReferenceRk => {
            let c = *control;
            let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
                flat::derivative(y, &c.to_array(), &p, dy);
            };
            reference::integrate(rhs, 0.0, &initial.to_array(), &times, Tolerances::default())?
        }
        PropagationMode::Trapezoidal => {
            let mut x = *initial;
            let mut out = vec![x.to_array().to_vec()];
            let dt = t_end / count as f64;
            for _ in 0..count {
                x = trapezoidal_step(&x, control, dt, scenario)?;
                out.push(x.to_array().to_vec());
            }
            out
        }
    };
    Ok(Propagation {
        mode,
        times,
        states,
    })
}

/// Solves the trapezoidal defect for the next state with Newton's method,
/// starting from an explicit Euler step.
fn trapezoidal_step(
    x: &StateVector20,
    control: &ControlVector6,
    dt: f64,
    scenario: &ScenarioConfig,
) -> Result<StateVector20> {
    let p = &scenario.params;
    let a = x.to_array();
    let f = full_derivative(x, control, p);
    let mut b: [f64; NX] = std::array::from_fn(|i| a[i] + dt * f[i]);
    for _ in 0..50 {
        let next = StateVector20::from_slice(&b);
        let r = trapezoidal_defect(x, &next, control, control, dt, p)?;
        let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm <= 1e-15 * (1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Ok(next);
        }
        // d/db of b - a - dt/2 (f(a) + f(b)) + dt/4 g(a - b)
        let d: [f64; NX] = std::array::from_fn(|i| a[i] - b[i]);
        let jf = state_jacobian(&b, p);
        let jg = kinematic_jacobian(&d);
        let m = SMatrix::<f64, NX, NX>::from_fn(|i, j| {
            (i == j) as u8 as f64 - 0.5 * dt * jf[i][j] - 0.25 * dt * jg[i][j]
        });
        let Some(delta) = m.lu().solve(&SVector::<f64, NX>::from_row_slice(&r)) else {
            return domain("singular Newton matrix in the trapezoidal step");
        };
        for i in 0..NX {
            b[i] -= delta[i];
        }
        if b.iter().any(|v| !v.is_finite()) {
            return domain("trapezoidal step diverged");
        }
    }
    // the residual can stall a few ulps above the target; accept if small
    let next = StateVector20::from_slice(&b);
    let r = trapezoidal_defect(x, &next, control, control, dt, p)?;
    if r.iter().all(|v| v.abs() <= 1e-12) {
        Ok(next)
    } else {
        domain("trapezoidal step did not converge")
    }
}

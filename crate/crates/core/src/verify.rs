//! Oracle and invariant checks of the dynamics, the transcription and the
//! solver, run by the `verify` command.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::flat::{self, NU, NX, Q_T, W_T};
use crate::dynamics::{
    cw_analytic, AngularVelocity, ControlVector6, InertiaTensor, Quaternion, StateVector20,
    TranslationalState,
};
use crate::error::Result;
use crate::pipeline::{propagate_state, run_propagate, PropagationMode};
use crate::reference::{self, Tolerances};
use crate::scenario::ScenarioConfig;
use crate::solver::toy::{ProjectOntoLine, SquareAboveOne};
use crate::solver::{
    derivative_check, kkt_residual, InteriorPoint, NlpProblem, NlpSolver, SolverOptions,
};
use crate::transcription::{initial_guess, transcribe};

/// Horizon of the propagation oracles [s].
pub const HORIZON: f64 = 400.0;
pub const ORACLE_TOL: f64 = 1e-8;
pub const DERIVATIVE_TOL: f64 = 1e-5;
pub const DERIVATIVE_STEP: f64 = 1e-6;
pub const TOY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Accepted range for `value`.
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, f64::NEG_INFINITY, upper)
    }

    pub fn within(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            passed: value >= lower && value <= upper,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        if self.lower == f64::NEG_INFINITY {
            write!(
                f,
                "{verdict} {}: {:.3e} <= {:.1e}",
                self.name, self.value, self.upper
            )
        } else {
            write!(
                f,
                "{verdict} {}: {:.6} in [{:.6}, {:.6}]",
                self.name, self.value, self.lower, self.upper
            )
        }
    }
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

/// Zero-thrust CW propagation by the reference integrator against the closed
/// form, over `samples` random initial states. Returns the worst relative
/// error at the horizon.
pub fn cw_oracle(scenario: &ScenarioConfig, samples: usize, seed: u64) -> Result<f64> {
    let n = scenario.mean_motion();
    let mass = scenario.params.mass;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let s0 = TranslationalState::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let d = crate::dynamics::cw_derivative(
                &TranslationalState::from_slice(y),
                &nalgebra::Vector3::zeros(),
                n,
                mass,
            );
            dy.copy_from_slice(&d.to_array());
        };
        let y = reference::integrate(rhs, 0.0, &s0.to_array(), &[HORIZON], Tolerances::default())?;
        let exact = cw_analytic(&s0, n, HORIZON).to_array();
        worst = worst.max(relative_error(&y[0], &exact));
    }
    Ok(worst)
}

/// Relative drift of rotational energy and angular momentum magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Conservation {
    pub energy: f64,
    pub momentum: f64,
}

/// Torque-free tumbling of a body with the target's inertia from `samples`
/// random rates and attitudes, propagated by the reference integrator.
pub fn torque_free_conservation(
    scenario: &ScenarioConfig,
    samples: usize,
    seed: u64,
) -> Result<Conservation> {
    let inertia = scenario.params.inertia_t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Conservation {
        energy: 0.0,
        momentum: 0.0,
    };
    for _ in 0..samples {
        let w = AngularVelocity::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        );
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.1..1.0),
        )
        .normalized()?;
        let mut x0 = [0.0; NX];
        x0[W_T..W_T + 3].copy_from_slice(&[w.wx, w.wy, w.wz]);
        x0[Q_T..Q_T + 4].copy_from_slice(&q.to_array());
        let p = scenario.params;
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| flat::derivative(y, &[0.0; NU], &p, dy);
        let times: Vec<f64> = (1..=8).map(|k| HORIZON * k as f64 / 8.0).collect();
        let ys = reference::integrate(rhs, 0.0, &x0, &times, Tolerances::default())?;
        let (e0, h0) = energy_momentum(&x0[W_T..W_T + 3], &inertia);
        for y in &ys {
            let (e, h) = energy_momentum(&y[W_T..W_T + 3], &inertia);
            worst.energy = worst.energy.max(((e - e0) / e0).abs());
            worst.momentum = worst.momentum.max(((h - h0) / h0).abs());
        }
    }
    Ok(worst)
}

fn energy_momentum(w: &[f64], j: &InertiaTensor) -> (f64, f64) {
    let d = j.diagonal();
    let energy = 0.5 * (d.x * w[0] * w[0] + d.y * w[1] * w[1] + d.z * w[2] * w[2]);
    let momentum = ((d.x * w[0]).powi(2) + (d.y * w[1]).powi(2) + (d.z * w[2]).powi(2)).sqrt();
    (energy, momentum)
}

/// Global errors of the zero-control trapezoidal propagation at the horizon
/// for the steps `dt, dt/2, dt/4`, measured against the reference
/// integrator as the largest componentwise difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
}

impl ConvergenceStudy {
    /// Error ratios of successive halvings.
    pub fn ratios(&self) -> Vec<f64> {
        self.errors.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

pub fn trapezoidal_convergence(
    scenario: &ScenarioConfig,
    initial: &StateVector20,
    dt: f64,
) -> Result<ConvergenceStudy> {
    let zero = ControlVector6::zero();
    let reference = propagate_state(
        scenario,
        initial,
        HORIZON,
        HORIZON,
        PropagationMode::ReferenceRk,
        &zero,
    )?;
    let exact = &reference.states[1];
    let mut study = ConvergenceStudy {
        steps: Vec::new(),
        errors: Vec::new(),
    };
    for h in [dt, dt / 2.0, dt / 4.0] {
        let run = propagate_state(
            scenario,
            initial,
            HORIZON,
            h,
            PropagationMode::Trapezoidal,
            &zero,
        )?;
        let last = run.states.last().expect("at least one step");
        let err = last
            .iter()
            .zip(exact)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        study.steps.push(h);
        study.errors.push(err);
    }
    Ok(study)
}

/// A tumbling variant of the scenario's initial state, so that every block
/// of the dynamics contributes to the truncation error.
pub fn tumbling_state(scenario: &ScenarioConfig) -> StateVector20 {
    let mut x = scenario.initial;
    x.trans.vx = 0.01;
    x.trans.vz = -0.005;
    x.w_s = AngularVelocity::new(0.02, -0.03, 0.04);
    x.w_t = AngularVelocity::new(0.01, 0.05, -0.02);
    x
}

/// Worst derivative check error of the transcribed scenario at its initial
/// guess.
pub fn transcription_derivatives(scenario: &ScenarioConfig, steps: usize) -> Result<f64> {
    let nlp = transcribe(scenario, steps)?;
    let z = initial_guess(scenario, steps)?;
    Ok(derivative_check(&nlp, &z, DERIVATIVE_STEP).max_rel_error)
}

/// Result of one hand-solved toy problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyResult {
    pub name: &'static str,
    pub converged: bool,
    /// Largest distance to the analytic minimizer.
    pub x_error: f64,
    pub objective_error: f64,
    /// The returned point replayed through the independent KKT evaluation.
    pub kkt_ok: bool,
}

impl ToyResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.converged && self.kkt_ok && self.x_error <= tol && self.objective_error <= tol
    }
}

/// Solves `min z^2 s.t. z >= 1` and `min (z1-1)^2 + (z2-2)^2 s.t. z1 + z2 = 1`.
pub fn toy_problems(solver: &dyn NlpSolver) -> Vec<ToyResult> {
    let options = SolverOptions {
        kkt_tol: 1e-10,
        feasibility_tol: 1e-10,
        ..SolverOptions::default()
    };
    let cases: [(&'static str, &dyn NlpProblem, Vec<f64>, Vec<f64>, f64); 2] = [
        (
            "square above one",
            &SquareAboveOne,
            vec![3.0],
            vec![1.0],
            1.0,
        ),
        (
            "projection onto a line",
            &ProjectOntoLine,
            vec![5.0, -3.0],
            vec![0.0, 1.0],
            2.0,
        ),
    ];
    cases
        .into_iter()
        .map(|(name, p, z0, x_star, f_star)| {
            let r = solver.solve(p, &z0, &options);
            let kkt = kkt_residual(p, &r.x, &r.multipliers);
            ToyResult {
                name,
                converged: r.status.is_converged(),
                x_error: r
                    .x
                    .iter()
                    .zip(&x_star)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
                objective_error: (r.objective - f_star).abs(),
                kkt_ok: r.status.is_converged()
                    && kkt.satisfies(options.kkt_tol, options.feasibility_tol),
            }
        })
        .collect()
}

/// Runs every check. `derivative_steps` sets the grid of the transcription
/// whose derivatives are checked.
pub fn run_all(
    scenario: &ScenarioConfig,
    derivative_steps: usize,
    seed: u64,
) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    checks.push(Check::at_most(
        "CW reference vs closed form, 100 random states, 400 s (relative)",
        cw_oracle(scenario, 100, seed)?,
        ORACLE_TOL,
    ));
    let analytic = run_propagate(
        scenario,
        HORIZON,
        1.0,
        PropagationMode::AnalyticCw,
        &ControlVector6::zero(),
    )?;
    let rk = run_propagate(
        scenario,
        HORIZON,
        1.0,
        PropagationMode::ReferenceRk,
        &ControlVector6::zero(),
    )?;
    let worst_rel = analytic
        .states
        .iter()
        .zip(&rk.states)
        .map(|(a, b)| relative_error(&b[..6], a))
        .fold(0.0f64, f64::max);
    checks.push(Check::at_most(
        "scenario CW propagation, reference vs closed form (relative)",
        worst_rel,
        ORACLE_TOL,
    ));
    let spin = rk
        .states
        .iter()
        .map(|s| {
            let w = &scenario.initial.w_t;
            (s[W_T] - w.wx)
                .abs()
                .max((s[W_T + 1] - w.wy).abs())
                .max((s[W_T + 2] - w.wz).abs())
        })
        .fold(0.0f64, f64::max);
    checks.push(Check::at_most(
        "target spin rate is constant",
        spin,
        ORACLE_TOL,
    ));
    let cons = torque_free_conservation(scenario, 20, seed)?;
    checks.push(Check::at_most(
        "torque-free energy drift (relative)",
        cons.energy,
        ORACLE_TOL,
    ));
    checks.push(Check::at_most(
        "torque-free angular momentum drift (relative)",
        cons.momentum,
        ORACLE_TOL,
    ));
    for (label, x0) in [
        ("scenario", scenario.initial),
        ("tumbling", tumbling_state(scenario)),
    ] {
        let study = trapezoidal_convergence(scenario, &x0, 1.0)?;
        for (i, ratio) in study.ratios().into_iter().enumerate() {
            checks.push(Check::within(
                format!(
                    "trapezoidal error ratio, {label}, dt {} -> {}",
                    study.steps[i],
                    study.steps[i + 1]
                ),
                ratio,
                3.5,
                4.5,
            ));
        }
    }
    checks.push(Check::at_most(
        format!("transcription derivative check at the initial guess, N = {derivative_steps}"),
        transcription_derivatives(scenario, derivative_steps)?,
        DERIVATIVE_TOL,
    ));
    for toy in toy_problems(&InteriorPoint) {
        checks.push(Check::at_most(
            format!("toy NLP {}: distance to the optimum", toy.name),
            toy.x_error.max(toy.objective_error),
            TOY_TOL,
        ));
        checks.push(Check::at_most(
            format!("toy NLP {}: KKT replay", toy.name),
            if toy.kkt_ok && toy.converged {
                0.0
            } else {
                1.0
            },
            0.0,
        ));
    }
    Ok(checks)
}

//! Generic smooth nonlinear programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    f(z)
//! subject to  c_E(z)  = 0
//!             c_I(z) >= 0
//!             lb <= z <= ub
//! ```
//!
//! and are handed to any [`NlpSolver`]. The built-in [`InteriorPoint`] is a
//! primal-dual barrier method with exact second derivatives, inertia
//! correction and an augmented Lagrangian merit line search.

mod check;
mod ipm;
mod kkt;
pub mod staged;
pub mod toy;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use check::{derivative_check, DerivativeCheck, DerivativeLocation};
pub use ipm::InteriorPoint;
pub use kkt::{kkt_residual, KktResidual};

/// A smooth NLP with sparse first and second derivatives.
///
/// Constraint rows are numbered with the equalities first, followed by the
/// inequalities. The Hessian is the lower triangle (`row >= col`) of
/// `obj_factor * d2f + sum_i lambda_i * d2c_i`.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Lower and upper variable bounds; infinite entries mean unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn objective(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], grad: &mut [f64]);

    /// Writes `[c_E(z); c_I(z)]`.
    fn constraints(&self, z: &[f64], out: &mut [f64]);

    fn jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn jacobian_values(&self, z: &[f64], values: &mut [f64]);

    fn hessian_structure(&self) -> Vec<(usize, usize)>;
    fn hessian_values(&self, z: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]);

    /// Optional elimination hint for the linear algebra: a stage index for
    /// every variable and every constraint row. Derivative couplings may only
    /// connect equal or adjacent stages, except that the highest stage is a
    /// border that may couple to all others. Without a hint the KKT system is
    /// factored as one dense block.
    fn elimination_stages(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        None
    }

    /// Optional typical magnitude of every variable. The solver then
    /// iterates on `z / scale`, which balances the inertia correction across
    /// variables of very different size; results are reported unscaled.
    fn variable_scaling(&self) -> Option<Vec<f64>> {
        None
    }

    fn num_cons(&self) -> usize {
        self.num_eq() + self.num_ineq()
    }
}

/// Interface implemented by NLP backends, so that an external solver can be
/// swapped in for cross-checks.
pub trait NlpSolver {
    fn name(&self) -> &str;
    fn solve(&self, problem: &dyn NlpProblem, z0: &[f64], options: &SolverOptions) -> SolveReport;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub feasibility_tol: f64,
    pub max_iterations: usize,
    /// Run [`derivative_check`] at the starting point before iterating.
    pub derivative_check: bool,
    pub mu_init: f64,
    pub mu_reduction: f64,
    /// Seed for any randomized perturbation of the starting point.
    pub seed: u64,
    /// Uniform noise magnitude added to the starting point (0 disables).
    pub perturbation: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            feasibility_tol: 1e-8,
            max_iterations: 3000,
            derivative_check: false,
            mu_init: 0.1,
            mu_reduction: 0.2,
            seed: 0,
            perturbation: 0.0,
            verbose: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.kkt_tol > 0.0 && self.feasibility_tol > 0.0 && self.mu_init > 0.0) {
            return crate::error::domain(
                "solver tolerances and the initial barrier parameter must be positive",
            );
        }
        if !(self.mu_reduction > 0.0 && self.mu_reduction < 1.0) {
            return crate::error::domain("barrier reduction factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
    NumericalFailure {
        /// Constraint row whose evaluation was not finite, if any.
        constraint: Option<usize>,
    },
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Converged => write!(f, "Converged"),
            SolveStatus::MaxIterations => write!(f, "MaxIterations"),
            SolveStatus::Infeasible => write!(f, "Infeasible"),
            SolveStatus::NumericalFailure {
                constraint: Some(i),
            } => write!(f, "NumericalFailure(constraint {i})"),
            SolveStatus::NumericalFailure { constraint: None } => write!(f, "NumericalFailure"),
        }
    }
}

/// Lagrange multipliers in the sign convention
/// `grad f - J_E^T eq - J_I^T ineq - lower + upper = 0`, with
/// `ineq, lower, upper >= 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m_eq: usize, m_ineq: usize) -> Self {
        Self {
            eq: vec![0.0; m_eq],
            ineq: vec![0.0; m_ineq],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.eq
            .iter()
            .chain(&self.ineq)
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    pub objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub regularization: f64,
    pub penalty: f64,
    /// Merit value at the start of the step and at the accepted point, both
    /// under the barrier and penalty parameters used for that step.
    pub merit_before: f64,
    pub merit_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    pub max_eq_violation: f64,
    /// Smallest inequality value `min c_I(x)` (positive means strictly feasible).
    pub min_ineq_margin: f64,
    pub kkt: KktResidual,
    pub iterations: usize,
    pub wall_time: Duration,
    /// The starting point had to be moved into the bounds.
    pub start_clipped: bool,
    pub derivative_check: Option<DerivativeCheck>,
    pub trace: Vec<IterationRecord>,
}

//! Primal-dual interior point method.
//!
//! Inequalities are turned into equalities with nonnegative slacks, bounds
//! and slacks are handled by a logarithmic barrier, and each Newton system
//! is solved by a block LDL^T factorization of the condensed KKT matrix
//!
//! ```text
//! [ W + Sigma_x + dw I        J^T       ]
//! [        J            -D - dc I      ]
//! ```
//!
//! with `dw` chosen so that the inertia is `(n, m, 0)`. Steps are globalized
//! by a backtracking line search on an augmented Lagrangian of the barrier
//! problem, built from the Newton multiplier estimate, with one second-order
//! correction for the first trial. Unlike an l1 penalty, this merit does not
//! reject full steps over curved constraints near a feasible point.

use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::staged::{Slot, StagedFactor, StagedMatrix};
use super::{
    derivative_check, kkt_residual, IterationRecord, Multipliers, NlpProblem, NlpSolver,
    SolveReport, SolveStatus, SolverOptions,
};

const KAPPA_EPS: f64 = 10.0;
const MU_SUPERLINEAR: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const ARMIJO: f64 = 1e-8;
const RHO_MIN: f64 = 1.0;
const KAPPA_SIGMA: f64 = 1e10;
const PUSH: f64 = 1e-2;
const PIVOT_TOL: f64 = 1e-14;
const ALPHA_MIN: f64 = 1e-13;
const MAX_LS_FAILURES: usize = 12;
const LS_REGULARIZATION: f64 = 1e-8;
const LS_PIN: f64 = 1e12;
const MULT_INIT_MAX: f64 = 1e3;
const S_MAX: f64 = 100.0;
/// Penalty above which an iteration counts towards declaring infeasibility.
const RHO_INFEASIBLE: f64 = 1e14;
/// Consecutive such iterations before the problem is declared infeasible.
const INFEASIBLE_STREAK: usize = 20;
/// Relative size of the violation gradient at a local minimizer of the
/// constraint violation.
const INFEASIBLE_STATIONARITY: f64 = 1e-4;

/// Multiplier estimate and quadratic weight of the merit function.
struct Weights {
    y: Vec<f64>,
    rho: f64,
}

/// Built-in primal-dual interior point backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

impl NlpSolver for InteriorPoint {
    fn name(&self) -> &str {
        "interior-point"
    }

    fn solve(&self, problem: &dyn NlpProblem, z0: &[f64], options: &SolverOptions) -> SolveReport {
        match problem.variable_scaling() {
            Some(d) => {
                assert_eq!(d.len(), problem.num_vars());
                assert!(
                    d.iter().all(|v| *v > 0.0 && v.is_finite()),
                    "variable scales must be positive"
                );
                let scaled = Scaled { p: problem, d };
                Solver::new(&scaled, problem, &scaled.d, options).run(z0)
            }
            None => {
                let ones = vec![1.0; problem.num_vars()];
                Solver::new(problem, problem, &ones, options).run(z0)
            }
        }
    }
}

/// The problem in the variables `z / d`.
struct Scaled<'a> {
    p: &'a dyn NlpProblem,
    d: Vec<f64>,
}

impl Scaled<'_> {
    fn physical(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.d).map(|(a, b)| a * b).collect()
    }
}

impl NlpProblem for Scaled<'_> {
    fn num_vars(&self) -> usize {
        self.p.num_vars()
    }

    fn num_eq(&self) -> usize {
        self.p.num_eq()
    }

    fn num_ineq(&self) -> usize {
        self.p.num_ineq()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut lb, mut ub) = self.p.bounds();
        for i in 0..lb.len() {
            lb[i] /= self.d[i];
            ub[i] /= self.d[i];
        }
        (lb, ub)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.p.objective(&self.physical(z))
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        self.p.gradient(&self.physical(z), grad);
        for (g, d) in grad.iter_mut().zip(&self.d) {
            *g *= d;
        }
    }

    fn constraints(&self, z: &[f64], out: &mut [f64]) {
        self.p.constraints(&self.physical(z), out)
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.p.jacobian_structure()
    }

    fn jacobian_values(&self, z: &[f64], values: &mut [f64]) {
        self.p.jacobian_values(&self.physical(z), values);
        for ((_, c), v) in self.p.jacobian_structure().iter().zip(values.iter_mut()) {
            *v *= self.d[*c];
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.p.hessian_structure()
    }

    fn hessian_values(&self, z: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        self.p
            .hessian_values(&self.physical(z), obj_factor, lambda, values);
        for ((r, c), v) in self.p.hessian_structure().iter().zip(values.iter_mut()) {
            *v *= self.d[*r] * self.d[*c];
        }
    }

    fn elimination_stages(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        self.p.elimination_stages()
    }
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    /// `[c_E; c_I]`
    c: Vec<f64>,
    jac: Vec<f64>,
}

#[derive(Clone)]
struct Point {
    z: Vec<f64>,
    s: Vec<f64>,
    /// multipliers of `[c_E; c_I - s] = 0`
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    v: Vec<f64>,
}

struct Direction {
    dz: Vec<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dv: Vec<f64>,
}

enum Failure {
    Numerical(Option<usize>),
}

struct Solver<'a> {
    /// The problem as iterated on (possibly scaled).
    p: &'a dyn NlpProblem,
    /// The problem as posed, used for convergence tests and the report.
    orig: &'a dyn NlpProblem,
    /// Variable scales: `z_orig = d * z`.
    d: &'a [f64],
    opt: SolverOptions,
    n: usize,
    me: usize,
    mi: usize,
    lb: Vec<f64>,
    ub: Vec<f64>,
    lower: Vec<usize>,
    upper: Vec<usize>,
    jac_structure: Vec<(usize, usize)>,
    hess_len: usize,
    kkt: StagedMatrix,
    factor: StagedFactor,
    hess_slots: Vec<Slot>,
    jac_slots: Vec<Slot>,
    diag_slots: Vec<Slot>,
}

impl<'a> Solver<'a> {
    fn new(
        p: &'a dyn NlpProblem,
        orig: &'a dyn NlpProblem,
        d: &'a [f64],
        opt: &SolverOptions,
    ) -> Self {
        let n = p.num_vars();
        let (me, mi) = (p.num_eq(), p.num_ineq());
        let m = me + mi;
        let (lb, ub) = p.bounds();
        assert_eq!(lb.len(), n);
        assert_eq!(ub.len(), n);
        assert!(
            lb.iter().zip(&ub).all(|(l, u)| l <= u),
            "variable bounds must satisfy lb <= ub"
        );
        let lower = (0..n).filter(|&i| lb[i].is_finite()).collect();
        let upper = (0..n).filter(|&i| ub[i].is_finite()).collect();

        let jac_structure = p.jacobian_structure();
        let hess_structure = p.hessian_structure();
        let dim = n + m;
        let mut entries: Vec<(usize, usize)> =
            Vec::with_capacity(hess_structure.len() + jac_structure.len() + dim);
        entries.extend(hess_structure.iter().copied());
        entries.extend(jac_structure.iter().map(|&(r, c)| (n + r, c)));
        entries.extend((0..dim).map(|k| (k, k)));

        let stages = kkt_stages(p, n, m);
        let (kkt, slots) = StagedMatrix::new(dim, &stages, &entries);
        let hess_len = hess_structure.len();
        let hess_slots = slots[..hess_len].to_vec();
        let jac_slots = slots[hess_len..hess_len + jac_structure.len()].to_vec();
        let diag_slots = slots[hess_len + jac_structure.len()..].to_vec();
        debug!(
            "KKT dimension {dim}, {} stored block entries",
            kkt.stored_values()
        );
        Self {
            p,
            orig,
            d,
            opt: *opt,
            n,
            me,
            mi,
            lb,
            ub,
            lower,
            upper,
            jac_structure,
            hess_len,
            kkt,
            factor: StagedFactor::default(),
            hess_slots,
            jac_slots,
            diag_slots,
        }
    }

    fn m(&self) -> usize {
        self.me + self.mi
    }

    fn evaluate(&self, z: &[f64]) -> Result<Eval, Failure> {
        let f = self.p.objective(z);
        let mut c = vec![0.0; self.m()];
        self.p.constraints(z, &mut c);
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Failure::Numerical(Some(i)));
        }
        if !f.is_finite() {
            return Err(Failure::Numerical(None));
        }
        let mut grad = vec![0.0; self.n];
        self.p.gradient(z, &mut grad);
        let mut jac = vec![0.0; self.jac_structure.len()];
        self.p.jacobian_values(z, &mut jac);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Failure::Numerical(None));
        }
        if let Some(k) = jac.iter().position(|v| !v.is_finite()) {
            return Err(Failure::Numerical(Some(self.jac_structure[k].0)));
        }
        Ok(Eval { f, grad, c, jac })
    }

    /// Objective and constraints only, for line-search trials.
    fn evaluate_values(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let f = self.p.objective(z);
        let mut c = vec![0.0; self.m()];
        self.p.constraints(z, &mut c);
        (f.is_finite() && c.iter().all(|v| v.is_finite())).then_some((f, c))
    }

    /// Whether `z` is a stationary point of `|c_E|^2 + |min(c_I, 0)|^2`
    /// with a nonzero violation, so no step can restore feasibility.
    fn locally_infeasible(&self, eval: &Eval) -> bool {
        let mut r = eval.c.clone();
        for v in &mut r[self.me..] {
            *v = v.min(0.0);
        }
        let violation = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if violation <= self.opt.feasibility_tol {
            return false;
        }
        let mut g = vec![0.0; self.n];
        self.jacobian_transpose_times(&eval.jac, &r, &mut g);
        let slope = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        slope <= INFEASIBLE_STATIONARITY * violation
    }

    fn residual(&self, c: &[f64], s: &[f64]) -> Vec<f64> {
        let mut r = c.to_vec();
        for (k, si) in s.iter().enumerate() {
            r[self.me + k] -= si;
        }
        r
    }

    fn barrier(&self, z: &[f64], s: &[f64], mu: f64) -> f64 {
        let mut b = 0.0;
        for &i in &self.lower {
            b += (z[i] - self.lb[i]).ln();
        }
        for &i in &self.upper {
            b += (self.ub[i] - z[i]).ln();
        }
        for si in s {
            b += si.ln();
        }
        -mu * b
    }

    /// Augmented Lagrangian of the barrier problem,
    /// `phi_mu - y^T r + rho/2 |r|^2` with `r = c - (0, s)`.
    fn merit(&self, f: f64, c: &[f64], z: &[f64], s: &[f64], mu: f64, w: &Weights) -> f64 {
        let r = self.residual(c, s);
        let lin: f64 = r.iter().zip(&w.y).map(|(a, b)| a * b).sum();
        let sq: f64 = r.iter().map(|v| v * v).sum();
        f + self.barrier(z, s, mu) - lin + 0.5 * w.rho * sq
    }

    fn jacobian_times(&self, jac: &[f64], dz: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&(r, c), v) in self.jac_structure.iter().zip(jac) {
            out[r] += v * dz[c];
        }
    }

    fn jacobian_transpose_times(&self, jac: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&(r, c), v) in self.jac_structure.iter().zip(jac) {
            out[c] += v * y[r];
        }
    }

    /// Perturbs the physical starting point if requested, scales it and
    /// moves it strictly inside the bounds.
    fn initial_point(&self, z0: &[f64]) -> (Vec<f64>, bool) {
        let mut z = z0.to_vec();
        if self.opt.perturbation > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.opt.seed);
            for zi in z.iter_mut() {
                *zi += rng.gen_range(-self.opt.perturbation..=self.opt.perturbation);
            }
        }
        for (zi, d) in z.iter_mut().zip(self.d) {
            *zi /= d;
        }
        let mut clipped = false;
        for i in 0..self.n {
            let (l, u) = (self.lb[i], self.ub[i]);
            if z[i] < l || z[i] > u {
                clipped = true;
                z[i] = z[i].clamp(l, u);
            }
            // move strictly inside
            let width = u - l;
            if l.is_finite() {
                let push = (PUSH * l.abs().max(1.0)).min(if width.is_finite() {
                    PUSH * width
                } else {
                    f64::INFINITY
                });
                z[i] = z[i].max(l + push);
            }
            if u.is_finite() {
                let push = (PUSH * u.abs().max(1.0)).min(if width.is_finite() {
                    PUSH * width
                } else {
                    f64::INFINITY
                });
                z[i] = z[i].min(u - push);
            }
        }
        (z, clipped)
    }

    fn run(mut self, z0: &[f64]) -> SolveReport {
        let start = Instant::now();
        assert_eq!(z0.len(), self.n, "starting point has wrong dimension");
        let (z, clipped) = self.initial_point(z0);
        if clipped {
            warn!("starting point violated the variable bounds and was clipped");
        }
        let check = self
            .opt
            .derivative_check
            .then(|| derivative_check(self.orig, &self.physical(&z), 1e-6));
        if let Some(c) = &check {
            info!(
                "derivative check: max relative error {:.3e} at {:?}",
                c.max_rel_error, c.location
            );
        }

        let mut mu = self.opt.mu_init;
        let mu_min = self.opt.kkt_tol.min(self.opt.feasibility_tol) / 10.0;
        let mut eval = match self.evaluate(&z) {
            Ok(e) => e,
            Err(Failure::Numerical(i)) => {
                return self.report(
                    SolveStatus::NumericalFailure { constraint: i },
                    &self.dummy_point(z),
                    0,
                    start,
                    clipped,
                    check,
                    Vec::new(),
                );
            }
        };
        let s: Vec<f64> = eval.c[self.me..]
            .iter()
            .map(|&ci| ci.max(PUSH * ci.abs().max(1.0)))
            .collect();
        let mut pt = Point {
            zl: (0..self.n)
                .map(|i| {
                    if self.lb[i].is_finite() {
                        mu / (z[i] - self.lb[i])
                    } else {
                        0.0
                    }
                })
                .collect(),
            zu: (0..self.n)
                .map(|i| {
                    if self.ub[i].is_finite() {
                        mu / (self.ub[i] - z[i])
                    } else {
                        0.0
                    }
                })
                .collect(),
            v: s.iter().map(|si| mu / si).collect(),
            y: vec![0.0; self.m()],
            z,
            s,
        };

        if let Some(y_e) = self.least_squares_multipliers(&eval, &pt) {
            if y_e.iter().all(|v| v.abs() <= MULT_INIT_MAX) {
                pt.y[..self.me].copy_from_slice(&y_e);
            }
        }

        let mut dw_last: f64 = 0.0;
        let mut forced_dw = 0.0;
        let mut ls_failures = 0usize;
        let mut infeasible_streak = 0usize;
        let mut trace = Vec::new();
        let mut status = SolveStatus::MaxIterations;
        let mut iteration = 0;

        while iteration < self.opt.max_iterations {
            let mult = self.multipliers(&pt);
            let kkt = kkt_residual(self.orig, &self.physical(&pt.z), &mult);
            if kkt.satisfies(self.opt.kkt_tol, self.opt.feasibility_tol) {
                status = SolveStatus::Converged;
                break;
            }
            while mu > mu_min && self.barrier_error(&eval, &pt, mu) <= KAPPA_EPS * mu {
                mu = (self.opt.mu_reduction * mu)
                    .min(mu.powf(MU_SUPERLINEAR))
                    .max(mu_min);
                debug!("barrier parameter reduced to {mu:.3e}");
            }

            // Newton system with inertia correction
            let neg_y: Vec<f64> = pt.y.iter().map(|v| -v).collect();
            let mut hess = vec![0.0; self.hess_len];
            self.p.hessian_values(&pt.z, 1.0, &neg_y, &mut hess);
            let sigma_x = self.sigma_x(&pt);
            let sigma_s: Vec<f64> = pt.v.iter().zip(&pt.s).map(|(v, s)| v / s).collect();

            let mut dw: f64 = forced_dw;
            let mut dc = 0.0;
            let mut attempts = 0;
            loop {
                attempts += 1;
                self.assemble(&hess, &eval.jac, &sigma_x, &sigma_s, dw, dc);
                let inertia = self.factor.factor(&self.kkt, PIVOT_TOL);
                debug!("inertia {inertia:?} with dw = {dw:.1e}, dc = {dc:.1e}");
                if inertia.zero == 0 && inertia.positive == self.n && inertia.negative == self.m() {
                    break;
                }
                if dc == 0.0 && self.me > 0 && (inertia.zero > 0 || inertia.negative > self.m()) {
                    dc = 1e-8 * mu.powf(0.25);
                    continue;
                }
                dw = if dw == 0.0 {
                    if dw_last == 0.0 {
                        1e-4
                    } else {
                        (dw_last / 3.0).max(1e-20)
                    }
                } else if dw_last == 0.0 {
                    dw * 100.0
                } else {
                    dw * 8.0
                };
                if dw > 1e40 || attempts > 200 {
                    status = SolveStatus::NumericalFailure { constraint: None };
                    break;
                }
            }
            if matches!(status, SolveStatus::NumericalFailure { .. }) {
                break;
            }
            if dw > 0.0 {
                dw_last = dw;
            }
            forced_dw = 0.0;

            let dir = self.direction(&eval, &pt, &sigma_s, mu, dw);

            // fraction to boundary
            let tau = TAU_MIN.max(1.0 - mu);
            let alpha_max = self.max_primal_step(&pt, &dir, tau);
            let alpha_dual = self.max_dual_step(&pt, &dir, tau);

            // merit parameters
            let r = self.residual(&eval.c, &pt.s);
            let mut jd = vec![0.0; self.m()];
            self.jacobian_times(&eval.jac, &dir.dz, &mut jd);
            for k in 0..self.mi {
                jd[self.me + k] -= dir.ds[k];
            }
            let g_dot_d = self.barrier_gradient_dot(&eval, &pt, &dir, mu);
            // the merit uses the Newton multiplier estimate; the quadratic
            // weight is raised until the direction is one of descent
            let y: Vec<f64> = pt.y.iter().zip(&dir.dy).map(|(a, b)| a + b).collect();
            let lin = g_dot_d - y.iter().zip(&jd).map(|(a, b)| a * b).sum::<f64>();
            let quad: f64 = r.iter().zip(&jd).map(|(a, b)| a * b).sum();
            let mut rho = RHO_MIN;
            if lin > 0.0 && quad < 0.0 {
                rho = rho.max(2.0 * lin / -quad);
            }
            let slope = (lin + rho * quad).min(0.0);
            let weights = Weights { y, rho };
            let merit0 = self.merit(eval.f, &eval.c, &pt.z, &pt.s, mu, &weights);

            // backtracking
            let mut alpha = alpha_max;
            let mut accepted: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
            let mut first = true;
            while alpha >= ALPHA_MIN {
                let zt: Vec<f64> =
                    pt.z.iter()
                        .zip(&dir.dz)
                        .map(|(a, b)| a + alpha * b)
                        .collect();
                let st: Vec<f64> =
                    pt.s.iter()
                        .zip(&dir.ds)
                        .map(|(a, b)| a + alpha * b)
                        .collect();
                if let Some((ft, ct)) = self.evaluate_values(&zt) {
                    let mt = self.merit(ft, &ct, &zt, &st, mu, &weights);
                    if mt <= merit0 + ARMIJO * alpha * slope {
                        accepted = Some((zt, st, alpha, mt));
                        break;
                    }
                    if first && alpha == alpha_max {
                        if let Some(soc) = self.second_order_correction(
                            &pt, &dir, &ct, &st, tau, mu, &weights, merit0, slope, alpha, dw,
                        ) {
                            accepted = Some(soc);
                            break;
                        }
                    }
                }
                first = false;
                alpha *= 0.5;
            }

            let Some((zt, st, alpha_p, merit1)) = accepted else {
                ls_failures += 1;
                forced_dw = (dw.max(dw_last) * 100.0).max(1e-2);
                debug!("line search failed (failure {ls_failures}); retrying with regularization {forced_dw:.1e}");
                if ls_failures > MAX_LS_FAILURES || forced_dw > 1e30 {
                    status = if self.locally_infeasible(&eval) {
                        SolveStatus::Infeasible
                    } else {
                        SolveStatus::NumericalFailure { constraint: None }
                    };
                    break;
                }
                continue;
            };
            ls_failures = 0;

            for (y, dy) in pt.y.iter_mut().zip(&dir.dy) {
                *y += alpha_p * dy;
            }
            for i in 0..self.n {
                pt.zl[i] += alpha_dual * dir.dzl[i];
                pt.zu[i] += alpha_dual * dir.dzu[i];
            }
            for k in 0..self.mi {
                pt.v[k] += alpha_dual * dir.dv[k];
            }
            pt.z = zt;
            pt.s = st;
            self.safeguard_duals(&mut pt, mu);

            eval = match self.evaluate(&pt.z) {
                Ok(e) => e,
                Err(Failure::Numerical(i)) => {
                    status = SolveStatus::NumericalFailure { constraint: i };
                    break;
                }
            };
            // multipliers only move by the primal step length, and dependent
            // rows let them drift along the null space of J^T; a least-squares
            // estimate is taken whenever it is the better one
            if let Some(y_e) = self.least_squares_multipliers(&eval, &pt) {
                let mut y = pt.y.clone();
                y[..self.me].copy_from_slice(&y_e);
                if self.stationarity(&eval, &pt, &y) <= self.stationarity(&eval, &pt, &pt.y) {
                    pt.y = y;
                }
            }
            iteration += 1;
            let inf_pr = self
                .residual(&eval.c, &pt.s)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let record = IterationRecord {
                iteration,
                mu,
                objective: eval.f,
                primal_infeasibility: inf_pr,
                dual_infeasibility: kkt.stationarity,
                alpha_primal: alpha_p,
                alpha_dual,
                regularization: dw,
                penalty: rho,
                merit_before: merit0,
                merit_after: merit1,
            };
            if self.opt.verbose {
                info!(
                    "{:4} f={:+.8e} inf_pr={:.2e} inf_du={:.2e} mu={:.1e} dw={:.1e} a_p={:.2e} a_d={:.2e} rho={:.1e}",
                    iteration, eval.f, inf_pr, kkt.stationarity, mu, dw, alpha_p, alpha_dual, rho
                );
            }
            trace.push(record);
            // the Newton step has stopped reducing the constraint residual;
            // a single huge penalty also occurs near a feasible point when
            // the step has negative curvature, so a streak is required
            if rho > RHO_INFEASIBLE && inf_pr > self.opt.feasibility_tol {
                infeasible_streak += 1;
                if infeasible_streak >= INFEASIBLE_STREAK {
                    status = SolveStatus::Infeasible;
                    break;
                }
            } else {
                infeasible_streak = 0;
            }
        }
        self.report(status, &pt, iteration, start, clipped, check, trace)
    }

    fn dummy_point(&self, z: Vec<f64>) -> Point {
        Point {
            z,
            s: vec![0.0; self.mi],
            y: vec![0.0; self.m()],
            zl: vec![0.0; self.n],
            zu: vec![0.0; self.n],
            v: vec![0.0; self.mi],
        }
    }

    fn physical(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.d).map(|(a, b)| a * b).collect()
    }

    /// Multipliers of the problem as posed.
    fn multipliers(&self, pt: &Point) -> Multipliers {
        Multipliers {
            eq: pt.y[..self.me].to_vec(),
            ineq: pt.y[self.me..].to_vec(),
            lower: pt.zl.iter().zip(self.d).map(|(a, b)| a / b).collect(),
            upper: pt.zu.iter().zip(self.d).map(|(a, b)| a / b).collect(),
        }
    }

    fn sigma_x(&self, pt: &Point) -> Vec<f64> {
        let mut sigma = vec![0.0; self.n];
        for &i in &self.lower {
            sigma[i] += pt.zl[i] / (pt.z[i] - self.lb[i]);
        }
        for &i in &self.upper {
            sigma[i] += pt.zu[i] / (self.ub[i] - pt.z[i]);
        }
        sigma
    }

    fn assemble(
        &mut self,
        hess: &[f64],
        jac: &[f64],
        sigma_x: &[f64],
        sigma_s: &[f64],
        dw: f64,
        dc: f64,
    ) {
        self.kkt.clear();
        for (slot, v) in self.hess_slots.iter().zip(hess) {
            self.kkt.add(*slot, *v);
        }
        for (slot, v) in self.jac_slots.iter().zip(jac) {
            self.kkt.add(*slot, *v);
        }
        for i in 0..self.n {
            self.kkt.add(self.diag_slots[i], sigma_x[i] + dw);
        }
        for j in 0..self.me {
            self.kkt.add(self.diag_slots[self.n + j], -dc);
        }
        for k in 0..self.mi {
            self.kkt.add(
                self.diag_slots[self.n + self.me + k],
                -(1.0 / (sigma_s[k] + dw) + dc),
            );
        }
    }

    /// Solves the condensed system and recovers the full primal-dual step.
    fn direction(
        &mut self,
        eval: &Eval,
        pt: &Point,
        sigma_s: &[f64],
        mu: f64,
        dw: f64,
    ) -> Direction {
        let (n, me, mi) = (self.n, self.me, self.mi);
        let mut jty = vec![0.0; n];
        self.jacobian_transpose_times(&eval.jac, &pt.y, &mut jty);
        let mut rhs = vec![0.0; n + me + mi];
        for i in 0..n {
            rhs[i] = -(eval.grad[i] - jty[i]);
        }
        for &i in &self.lower {
            rhs[i] += mu / (pt.z[i] - self.lb[i]);
        }
        for &i in &self.upper {
            rhs[i] -= mu / (self.ub[i] - pt.z[i]);
        }
        for j in 0..me {
            rhs[n + j] = -eval.c[j];
        }
        for k in 0..mi {
            let yi = pt.y[me + k];
            rhs[n + me + k] = -(eval.c[me + k] - pt.s[k]) + (mu / pt.s[k] - yi) / (sigma_s[k] + dw);
        }
        let sol = self.solve_refined(&rhs);

        let dz = sol[..n].to_vec();
        let dy: Vec<f64> = sol[n..].iter().map(|v| -v).collect();
        let ds: Vec<f64> = (0..mi)
            .map(|k| (mu / pt.s[k] - pt.y[me + k] - dy[me + k]) / (sigma_s[k] + dw))
            .collect();
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for &i in &self.lower {
            let gap = pt.z[i] - self.lb[i];
            dzl[i] = mu / gap - pt.zl[i] - pt.zl[i] / gap * dz[i];
        }
        for &i in &self.upper {
            let gap = self.ub[i] - pt.z[i];
            dzu[i] = mu / gap - pt.zu[i] + pt.zu[i] / gap * dz[i];
        }
        let dv: Vec<f64> = (0..mi)
            .map(|k| mu / pt.s[k] - pt.v[k] - sigma_s[k] * ds[k])
            .collect();
        Direction {
            dz,
            ds,
            dy,
            dzl,
            dzu,
            dv,
        }
    }

    /// Minimum-norm least-squares estimate of the equality multipliers,
    /// holding the inequality and bound multipliers fixed. It has no
    /// component along dependent constraint rows.
    fn least_squares_multipliers(&mut self, eval: &Eval, pt: &Point) -> Option<Vec<f64>> {
        let (n, me, mi) = (self.n, self.me, self.mi);
        if me == 0 {
            return None;
        }
        let hess = vec![0.0; self.hess_len];
        let zeros = vec![0.0; n];
        let sigma_s = vec![0.0; mi];
        self.assemble(&hess, &eval.jac, &zeros, &sigma_s, 1.0, LS_REGULARIZATION);
        for k in 0..mi {
            // pins the inequality rows to a zero update
            self.kkt.add(self.diag_slots[n + me + k], -LS_PIN);
        }
        self.factor.factor(&self.kkt, PIVOT_TOL);
        let mut jty = vec![0.0; n];
        let mut y_i = vec![0.0; me + mi];
        y_i[me..].copy_from_slice(&pt.y[me..]);
        self.jacobian_transpose_times(&eval.jac, &y_i, &mut jty);
        let mut rhs = vec![0.0; n + me + mi];
        for i in 0..n {
            rhs[i] = eval.grad[i] - jty[i] - pt.zl[i] + pt.zu[i];
        }
        let sol = self.solve_refined(&rhs);
        let y = sol[n..n + me].to_vec();
        y.iter().all(|v| v.is_finite()).then_some(y)
    }

    /// Largest stationarity violation for the given multipliers.
    fn stationarity(&self, eval: &Eval, pt: &Point, y: &[f64]) -> f64 {
        let mut jty = vec![0.0; self.n];
        self.jacobian_transpose_times(&eval.jac, y, &mut jty);
        (0..self.n)
            .map(|i| (eval.grad[i] - jty[i] - pt.zl[i] + pt.zu[i]).abs())
            .fold(0.0, f64::max)
    }

    fn solve_refined(&mut self, rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.factor.solve(&self.kkt, &mut sol);
        let norm_b = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut resid = vec![0.0; rhs.len()];
        for _ in 0..3 {
            self.kkt.multiply(&sol, &mut resid);
            let mut worst = 0.0f64;
            for (r, b) in resid.iter_mut().zip(rhs) {
                *r = b - *r;
                worst = worst.max(r.abs());
            }
            if worst <= 1e-12 * norm_b {
                break;
            }
            self.factor.solve(&self.kkt, &mut resid);
            for (s, d) in sol.iter_mut().zip(&resid) {
                *s += d;
            }
        }
        sol
    }

    /// Minimum-norm correction towards the linearized constraints at the
    /// rejected trial point, reusing the current factorization.
    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &mut self,
        pt: &Point,
        dir: &Direction,
        c_trial: &[f64],
        s_trial: &[f64],
        tau: f64,
        mu: f64,
        weights: &Weights,
        merit0: f64,
        slope: f64,
        alpha: f64,
        dw: f64,
    ) -> Option<(Vec<f64>, Vec<f64>, f64, f64)> {
        if self.m() == 0 {
            return None;
        }
        let (n, me, mi) = (self.n, self.me, self.mi);
        let r_trial = self.residual(c_trial, s_trial);
        let mut rhs = vec![0.0; n + me + mi];
        for (k, r) in r_trial.iter().enumerate() {
            rhs[n + k] = -r;
        }
        let sol = self.solve_refined(&rhs);
        let step = Direction {
            dz: (0..n).map(|i| alpha * dir.dz[i] + sol[i]).collect(),
            ds: (0..mi)
                .map(|k| alpha * dir.ds[k] + sol[n + me + k] / (pt.v[k] / pt.s[k] + dw))
                .collect(),
            dy: Vec::new(),
            dzl: Vec::new(),
            dzu: Vec::new(),
            dv: Vec::new(),
        };
        if self.max_primal_step(pt, &step, tau) < 1.0 {
            return None;
        }
        let zt: Vec<f64> = pt.z.iter().zip(&step.dz).map(|(a, b)| a + b).collect();
        let st: Vec<f64> = pt.s.iter().zip(&step.ds).map(|(a, b)| a + b).collect();
        let (ft, ct) = self.evaluate_values(&zt)?;
        let mt = self.merit(ft, &ct, &zt, &st, mu, weights);
        (mt <= merit0 + ARMIJO * alpha * slope).then_some((zt, st, alpha, mt))
    }

    fn barrier_gradient_dot(&self, eval: &Eval, pt: &Point, dir: &Direction, mu: f64) -> f64 {
        let mut g: f64 = eval.grad.iter().zip(&dir.dz).map(|(a, b)| a * b).sum();
        for &i in &self.lower {
            g -= mu / (pt.z[i] - self.lb[i]) * dir.dz[i];
        }
        for &i in &self.upper {
            g += mu / (self.ub[i] - pt.z[i]) * dir.dz[i];
        }
        for k in 0..self.mi {
            g -= mu / pt.s[k] * dir.ds[k];
        }
        g
    }

    fn max_primal_step(&self, pt: &Point, dir: &Direction, tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for &i in &self.lower {
            if dir.dz[i] < 0.0 {
                alpha = alpha.min(-tau * (pt.z[i] - self.lb[i]) / dir.dz[i]);
            }
        }
        for &i in &self.upper {
            if dir.dz[i] > 0.0 {
                alpha = alpha.min(tau * (self.ub[i] - pt.z[i]) / dir.dz[i]);
            }
        }
        for k in 0..self.mi {
            if dir.ds[k] < 0.0 {
                alpha = alpha.min(-tau * pt.s[k] / dir.ds[k]);
            }
        }
        alpha
    }

    fn max_dual_step(&self, pt: &Point, dir: &Direction, tau: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for &i in &self.lower {
            if dir.dzl[i] < 0.0 {
                alpha = alpha.min(-tau * pt.zl[i] / dir.dzl[i]);
            }
        }
        for &i in &self.upper {
            if dir.dzu[i] < 0.0 {
                alpha = alpha.min(-tau * pt.zu[i] / dir.dzu[i]);
            }
        }
        for k in 0..self.mi {
            if dir.dv[k] < 0.0 {
                alpha = alpha.min(-tau * pt.v[k] / dir.dv[k]);
            }
        }
        alpha
    }

    fn safeguard_duals(&self, pt: &mut Point, mu: f64) {
        for &i in &self.lower {
            let gap = pt.z[i] - self.lb[i];
            pt.zl[i] = pt.zl[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
        }
        for &i in &self.upper {
            let gap = self.ub[i] - pt.z[i];
            pt.zu[i] = pt.zu[i].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
        }
        for k in 0..self.mi {
            pt.v[k] = pt.v[k].clamp(mu / (KAPPA_SIGMA * pt.s[k]), KAPPA_SIGMA * mu / pt.s[k]);
        }
    }

    /// Optimality error of the barrier subproblem.
    fn barrier_error(&self, eval: &Eval, pt: &Point, mu: f64) -> f64 {
        let mut jty = vec![0.0; self.n];
        self.jacobian_transpose_times(&eval.jac, &pt.y, &mut jty);
        // average multiplier size, ignored below S_MAX
        let count = (self.m() + 2 * self.n + self.mi).max(1) as f64;
        let total: f64 =
            pt.y.iter()
                .chain(&pt.zl)
                .chain(&pt.zu)
                .chain(&pt.v)
                .map(|v| v.abs())
                .sum();
        let scale = (total / count).max(S_MAX) / S_MAX;
        let mut stat = 0.0f64;
        for i in 0..self.n {
            stat = stat.max((eval.grad[i] - jty[i] - pt.zl[i] + pt.zu[i]).abs());
        }
        for k in 0..self.mi {
            stat = stat.max((pt.y[self.me + k] - pt.v[k]).abs());
        }
        let feas = self
            .residual(&eval.c, &pt.s)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut compl = 0.0f64;
        for &i in &self.lower {
            compl = compl.max(((pt.z[i] - self.lb[i]) * pt.zl[i] - mu).abs());
        }
        for &i in &self.upper {
            compl = compl.max(((self.ub[i] - pt.z[i]) * pt.zu[i] - mu).abs());
        }
        for k in 0..self.mi {
            compl = compl.max((pt.s[k] * pt.v[k] - mu).abs());
        }
        (stat / scale).max(feas).max(compl)
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        status: SolveStatus,
        pt: &Point,
        iterations: usize,
        start: Instant,
        start_clipped: bool,
        derivative_check: Option<super::DerivativeCheck>,
        trace: Vec<IterationRecord>,
    ) -> SolveReport {
        let multipliers = self.multipliers(pt);
        let x = self.physical(&pt.z);
        let kkt = kkt_residual(self.orig, &x, &multipliers);
        let mut c = vec![0.0; self.m()];
        self.orig.constraints(&x, &mut c);
        let max_eq_violation = c[..self.me].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_ineq_margin = c[self.me..].iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let report = SolveReport {
            status,
            objective: self.orig.objective(&x),
            x,
            multipliers,
            max_eq_violation,
            min_ineq_margin,
            kkt,
            iterations,
            wall_time: start.elapsed(),
            start_clipped,
            derivative_check,
            trace,
        };
        info!(
            "{} after {} iterations: f = {:.10e}, kkt = {:?}",
            report.status, report.iterations, report.objective, report.kkt
        );
        report
    }
}

/// Stage of every KKT unknown (variables, then constraint rows). Without a
/// hint from the problem everything is one dense block.
fn kkt_stages(p: &dyn NlpProblem, n: usize, m: usize) -> Vec<usize> {
    match p.elimination_stages() {
        Some((var_stage, con_stage)) => {
            assert_eq!(var_stage.len(), n);
            assert_eq!(con_stage.len(), m);
            var_stage.into_iter().chain(con_stage).collect()
        }
        None => vec![0; n + m],
    }
}

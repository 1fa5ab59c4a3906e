//! Full discretization of the free-final-time docking problem with the
//! implicit trapezoidal rule on a uniform grid.
//!
//! Decision vector layout: `[x_0 .. x_N | u_0 .. u_N | t_f / TF_SCALE]` with
//! 20 states and 6 controls per node. Constraint rows are the initial
//! condition, the `N` interval defects and the 13 docking conditions
//! (equalities), followed by the collision and thrust margins at every node
//! (inequalities).

use nalgebra::{Matrix3, Vector3};

use crate::constraints_cost::{ControlBounds, CostWeights, DockingGeometry};
use crate::dynamics::flat::{
    self, control_jacobian, kinematic_jacobian, kinematic_term, rotation_partials, state_jacobian,
    state_jacobian_pattern, weighted_hessian, weighted_hessian_pattern, NU, NX, POS, Q_S, Q_T,
    THRUST, TORQUE, VEL, W_S, W_T,
};
use crate::dynamics::{
    quaternion_derivative, rotation_matrix_unchecked, AngularVelocity, BodyParams, ControlVector6,
    Quaternion, StateVector20, TranslationalState,
};
use crate::error::{domain, Result};
use crate::reference::{self, Tolerances};
use crate::scenario::ScenarioConfig;
use crate::solver::NlpProblem;

/// `t_f` is stored as `t_f / TF_SCALE`. A power of two keeps packing exact.
pub const TF_SCALE: f64 = 128.0;

/// Typical velocity [m/s], rate [rad/s] and `t_f` step [s] the solver
/// iterates in.
const VEL_SCALE: f64 = 0.05;
const RATE_SCALE: f64 = 0.05;
const TF_UNIT: f64 = 1.0;

/// Relative shrink of the keep-out radius at the docking node. The docking
/// conditions put the centers exactly `r_S + r_T` apart, so the unshrunk row
/// would be active with a gradient spanned by the docking rows.
pub const DOCKING_SLACK: f64 = 1e-3;

/// Number of terminal equalities: quaternion, rate, position, velocity.
pub const TERMINAL_ROWS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub steps: usize,
}

impl Layout {
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 {
            return domain(format!("need at least 2 steps, got {steps}"));
        }
        Ok(Self { steps })
    }

    /// Recovers the layout from a decision-vector length.
    pub fn from_len(len: usize) -> Result<Self> {
        let per_node = NX + NU;
        if len < 1 || (len - 1) % per_node != 0 || (len - 1) / per_node < 3 {
            return domain(format!("length {len} is not 26 (N + 1) + 1 for any N >= 2"));
        }
        Self::new((len - 1) / per_node - 1)
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn num_vars(&self) -> usize {
        (NX + NU) * self.nodes() + 1
    }

    pub fn state(&self, k: usize) -> usize {
        NX * k
    }

    pub fn control(&self, k: usize) -> usize {
        NX * self.nodes() + NU * k
    }

    pub fn tf(&self) -> usize {
        (NX + NU) * self.nodes()
    }

    pub fn num_eq(&self) -> usize {
        NX + NX * self.steps + TERMINAL_ROWS
    }

    pub fn defect_row(&self, k: usize) -> usize {
        NX + NX * k
    }

    pub fn terminal_row(&self) -> usize {
        NX + NX * self.steps
    }
}

/// Builds a decision vector from node states, node controls and `t_f` [s].
pub fn pack(states: &[StateVector20], controls: &[ControlVector6], t_f: f64) -> Result<Vec<f64>> {
    if states.len() != controls.len() {
        return domain(format!(
            "{} state nodes but {} control nodes",
            states.len(),
            controls.len()
        ));
    }
    let layout = Layout::new(states.len().saturating_sub(1))?;
    let mut z = vec![0.0; layout.num_vars()];
    for (k, (s, c)) in states.iter().zip(controls).enumerate() {
        z[layout.state(k)..layout.state(k) + NX].copy_from_slice(&s.to_array());
        z[layout.control(k)..layout.control(k) + NU].copy_from_slice(&c.to_array());
    }
    z[layout.tf()] = t_f / TF_SCALE;
    Ok(z)
}

/// Inverse of [`pack`].
pub fn unpack(z: &[f64]) -> Result<(Vec<StateVector20>, Vec<ControlVector6>, f64)> {
    let layout = Layout::from_len(z.len())?;
    let states = (0..layout.nodes())
        .map(|k| StateVector20::from_slice(&z[layout.state(k)..layout.state(k) + NX]))
        .collect();
    let controls = (0..layout.nodes())
        .map(|k| ControlVector6::from_slice(&z[layout.control(k)..layout.control(k) + NU]))
        .collect();
    Ok((states, controls, z[layout.tf()] * TF_SCALE))
}

/// `x_k1 - x_k - dt/2 (f(x_k, u_k) + f(x_k1, u_k1)) + dt/4 g(x_k - x_k1)`,
/// where `g` is the quaternion kinematics applied to the differences of the
/// rates and quaternions. The correction turns the bilinear kinematics into
/// a midpoint (Cayley) step, which keeps `|q|` exactly; the plain trapezoid
/// conserves `|q|^2 (1 + (dt/4)^2 |w|^2)` instead, and that makes the
/// attitude match with a spinning target infeasible when the servicer starts
/// at rest. The step stays second order.
pub fn trapezoidal_defect(
    x_k: &StateVector20,
    x_k1: &StateVector20,
    u_k: &ControlVector6,
    u_k1: &ControlVector6,
    dt: f64,
    p: &BodyParams,
) -> Result<[f64; NX]> {
    if !(dt > 0.0) {
        return domain(format!("step must be positive, got {dt}"));
    }
    let (a, b) = (x_k.to_array(), x_k1.to_array());
    let mut fa = [0.0; NX];
    let mut fb = [0.0; NX];
    flat::derivative(&a, &u_k.to_array(), p, &mut fa);
    flat::derivative(&b, &u_k1.to_array(), p, &mut fb);
    let d: [f64; NX] = std::array::from_fn(|i| a[i] - b[i]);
    let g = kinematic_term(&d);
    Ok(std::array::from_fn(|i| {
        b[i] - a[i] - 0.5 * dt * (fa[i] + fb[i]) + 0.25 * dt * g[i]
    }))
}

/// The transcribed problem; implements [`NlpProblem`].
#[derive(Debug, Clone)]
pub struct TranscribedNlp {
    pub layout: Layout,
    pub params: BodyParams,
    pub geometry: DockingGeometry,
    pub bounds: ControlBounds,
    pub weights: CostWeights,
    pub initial: StateVector20,
    pub tf_min: f64,
    pub tf_max: f64,
    pub collision_constraint: bool,
    /// Keep-out radius applied at nodes `0..N` (including the safety margin).
    pub keep_out_path: f64,
    /// Keep-out radius at the docking node.
    pub keep_out_final: f64,
    pub scenario_hash: u64,
    jac_structure: Vec<(usize, usize)>,
    hess_structure: Vec<(usize, usize)>,
}

/// Transcribes `scenario` on a grid of `steps` intervals.
pub fn transcribe(scenario: &ScenarioConfig, steps: usize) -> Result<TranscribedNlp> {
    let layout = Layout::new(steps)?;
    let geometry = scenario.geometry;
    let mut nlp = TranscribedNlp {
        layout,
        params: scenario.params,
        geometry,
        bounds: scenario.bounds,
        weights: scenario.weights,
        initial: scenario.initial,
        tf_min: scenario.tf_min,
        tf_max: scenario.tf_max,
        collision_constraint: scenario.collision_constraint,
        keep_out_path: geometry.keep_out_radius() + scenario.safety_margin,
        keep_out_final: geometry.keep_out_radius() * (1.0 - DOCKING_SLACK),
        scenario_hash: scenario.hash,
        jac_structure: Vec::new(),
        hess_structure: Vec::new(),
    };
    let z = vec![0.5; layout.num_vars()];
    let mut entries = Vec::new();
    nlp.jacobian_entries(&z, &mut entries);
    nlp.jac_structure = entries.iter().map(|&(r, c, _)| (r, c)).collect();
    entries.clear();
    nlp.hessian_entries(&z, 1.0, &vec![1.0; nlp.num_cons()], &mut entries);
    nlp.hess_structure = entries.iter().map(|&(r, c, _)| (r, c)).collect();
    Ok(nlp)
}

impl TranscribedNlp {
    pub fn steps(&self) -> usize {
        self.layout.steps
    }

    pub fn num_collision_rows(&self) -> usize {
        if self.collision_constraint {
            self.layout.nodes()
        } else {
            0
        }
    }

    /// `t_f` [s] of a decision vector.
    pub fn final_time(&self, z: &[f64]) -> f64 {
        z[self.layout.tf()] * TF_SCALE
    }

    /// Grid spacing `t_f / N` [s].
    pub fn dt(&self, z: &[f64]) -> f64 {
        self.final_time(z) / self.layout.steps as f64
    }

    fn state<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[self.layout.state(k)..self.layout.state(k) + NX]
    }

    /// `x_k - x_{k+1}`.
    fn difference(&self, z: &[f64], k: usize) -> [f64; NX] {
        let (a, b) = (self.state(z, k), self.state(z, k + 1));
        std::array::from_fn(|i| a[i] - b[i])
    }

    fn control<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[self.layout.control(k)..self.layout.control(k) + NU]
    }

    fn keep_out(&self, k: usize) -> f64 {
        if k == self.layout.steps {
            self.keep_out_final
        } else {
            self.keep_out_path
        }
    }

    fn running_sum(&self, z: &[f64]) -> f64 {
        let w = &self.weights;
        (0..self.layout.steps)
            .map(|k| {
                let u = self.control(z, k);
                w.l_u * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
                    + w.l_m * (u[3] * u[3] + u[4] * u[4] + u[5] * u[5])
            })
            .sum()
    }

    fn jacobian_entries(&self, z: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        let l = &self.layout;
        let n_steps = l.steps as f64;
        let h = self.dt(z);
        let tf = l.tf();
        for i in 0..NX {
            out.push((i, l.state(0) + i, 1.0));
        }
        let mut pattern = state_jacobian_pattern();
        pattern.extend((0..NX).map(|i| (i, i)));
        pattern.sort_unstable();
        let b = control_jacobian(&self.params);
        let mut f = vec![[0.0; NX]; l.nodes()];
        let mut a = Vec::with_capacity(l.nodes());
        for k in 0..l.nodes() {
            flat::derivative(
                self.state(z, k),
                self.control(z, k),
                &self.params,
                &mut f[k],
            );
            a.push(state_jacobian(self.state(z, k), &self.params));
        }
        for k in 0..l.steps {
            let row = l.defect_row(k);
            let d = self.difference(z, k);
            let kj = kinematic_jacobian(&d);
            let g = kinematic_term(&d);
            for &(i, j) in &pattern {
                let eye = if i == j { 1.0 } else { 0.0 };
                out.push((
                    row + i,
                    l.state(k) + j,
                    -eye - 0.5 * h * a[k][i][j] + 0.25 * h * kj[i][j],
                ));
            }
            for &(i, j) in &pattern {
                let eye = if i == j { 1.0 } else { 0.0 };
                out.push((
                    row + i,
                    l.state(k + 1) + j,
                    eye - 0.5 * h * a[k + 1][i][j] - 0.25 * h * kj[i][j],
                ));
            }
            for node in [k, k + 1] {
                for &(i, j, v) in &b {
                    out.push((row + i, l.control(node) + j, -0.5 * h * v));
                }
            }
            for i in 0..NX {
                out.push((
                    row + i,
                    tf,
                    TF_SCALE / n_steps * (-0.5 * (f[k][i] + f[k + 1][i]) + 0.25 * g[i]),
                ));
            }
        }
        let row = l.terminal_row();
        for (r, c, v) in terminal_jacobian(
            self.state(z, l.steps),
            &self.geometry,
            self.params.mean_motion,
        ) {
            out.push((row + r, l.state(l.steps) + c, v));
        }
        let me = l.num_eq();
        let nc = self.num_collision_rows();
        for k in 0..nc {
            let x = self.state(z, k);
            for i in 0..3 {
                out.push((me + k, l.state(k) + POS + i, 2.0 * x[POS + i]));
            }
        }
        for k in 0..l.nodes() {
            let u = self.control(z, k);
            for i in 0..3 {
                out.push((me + nc + k, l.control(k) + THRUST + i, -2.0 * u[THRUST + i]));
            }
        }
    }

    fn hessian_entries(
        &self,
        z: &[f64],
        obj_factor: f64,
        lambda: &[f64],
        out: &mut Vec<(usize, usize, f64)>,
    ) {
        let l = &self.layout;
        let n_steps = l.steps as f64;
        let h = self.dt(z);
        let tf = l.tf();
        let w = &self.weights;

        // objective
        for k in 0..l.steps {
            let u = self.control(z, k);
            for i in 0..NU {
                let weight = if i < 3 { w.l_u } else { w.l_m };
                out.push((
                    l.control(k) + i,
                    l.control(k) + i,
                    obj_factor * 2.0 * h * weight,
                ));
                out.push((
                    tf,
                    l.control(k) + i,
                    obj_factor * 2.0 * TF_SCALE / n_steps * weight * u[i],
                ));
            }
        }

        // defects: node j collects the multipliers of both adjacent intervals
        let hess_pattern = weighted_hessian_pattern();
        let b = control_jacobian(&self.params);
        let scale = -0.5 * TF_SCALE / n_steps;
        // t_f column of the kinematic term, per node
        let mut kin_tf = vec![[0.0; NX]; l.nodes()];
        for k in 0..l.steps {
            let row = l.defect_row(k);
            let lam = &lambda[row..row + NX];
            let kj = kinematic_jacobian(&self.difference(z, k));
            for c in 0..NX {
                let v: f64 = (0..NX).map(|r| kj[r][c] * lam[r]).sum();
                kin_tf[k][c] += v;
                kin_tf[k + 1][c] -= v;
            }
        }
        for j in 0..l.nodes() {
            let mut big = [0.0; NX];
            for k in [j.wrapping_sub(1), j] {
                if k < l.steps {
                    let row = l.defect_row(k);
                    for i in 0..NX {
                        big[i] += lambda[row + i];
                    }
                }
            }
            let entries = weighted_hessian(&big, &self.params);
            debug_assert_eq!(entries.len(), hess_pattern.len());
            for (r, c, v) in entries {
                // the kinematic term cancels half of the bilinear curvature
                let factor = if r >= Q_S { -0.25 } else { -0.5 };
                out.push((l.state(j) + r, l.state(j) + c, factor * h * v));
            }
            let a = state_jacobian(self.state(z, j), &self.params);
            for c in 0..NX {
                let atl: f64 = (0..NX).map(|r| a[r][c] * big[r]).sum();
                out.push((
                    tf,
                    l.state(j) + c,
                    scale * atl + 0.25 * TF_SCALE / n_steps * kin_tf[j][c],
                ));
            }
            let mut btl = [0.0; NU];
            for &(r, c, v) in &b {
                btl[c] += v * big[r];
            }
            for (c, v) in btl.iter().enumerate() {
                out.push((tf, l.control(j) + c, scale * v));
            }
        }

        // kinematic term: couples the rates of one node to the quaternions of
        // the next
        for k in 0..l.steps {
            let row = l.defect_row(k);
            let entries = weighted_hessian(&lambda[row..row + NX], &self.params);
            for (r, c, v) in entries.into_iter().filter(|e| e.0 >= Q_S) {
                out.push((l.state(k + 1) + r, l.state(k) + c, -0.25 * h * v));
                out.push((l.state(k + 1) + c, l.state(k) + r, -0.25 * h * v));
            }
        }

        // docking conditions: second derivatives in (w_S, q_S) only
        let row = l.terminal_row();
        let base = l.state(l.steps);
        let lam_t = &lambda[row..row + TERMINAL_ROWS];
        let block = terminal_hessian(
            self.state(z, l.steps),
            &self.geometry,
            self.params.mean_motion,
            lam_t,
        );
        for (a, &va) in TERMINAL_HESS_VARS.iter().enumerate() {
            for (bb, &vb) in TERMINAL_HESS_VARS.iter().enumerate().take(a + 1) {
                out.push((base + va, base + vb, block[a][bb]));
            }
        }

        let me = l.num_eq();
        let nc = self.num_collision_rows();
        for k in 0..nc {
            for i in 0..3 {
                out.push((
                    l.state(k) + POS + i,
                    l.state(k) + POS + i,
                    2.0 * lambda[me + k],
                ));
            }
        }
        for k in 0..l.nodes() {
            for i in 0..3 {
                out.push((
                    l.control(k) + THRUST + i,
                    l.control(k) + THRUST + i,
                    -2.0 * lambda[me + nc + k],
                ));
            }
        }
    }
}

/// State offsets of the variables entering the terminal second derivatives,
/// in increasing order.
const TERMINAL_HESS_VARS: [usize; 7] = [W_S, W_S + 1, W_S + 2, Q_S, Q_S + 1, Q_S + 2, Q_S + 3];

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Terminal residual `[qT - qS, wT - wS, R^T L - r, w_E x R^T L - v]` without
/// any unit-norm check, so that it stays smooth away from the unit sphere.
pub fn terminal_residual(x: &[f64], g: &DockingGeometry, n: f64) -> [f64; TERMINAL_ROWS] {
    let mut out = [0.0; TERMINAL_ROWS];
    for i in 0..4 {
        out[i] = x[Q_T + i] - x[Q_S + i];
    }
    for i in 0..3 {
        out[4 + i] = x[W_T + i] - x[W_S + i];
    }
    let q = Quaternion::from_slice(&x[Q_S..Q_S + 4]);
    let rt = rotation_matrix_unchecked(&q).transpose();
    let a = rt * g.lever();
    let w_e = rt * flat::vec3(&x[W_S..W_S + 3]) - Vector3::new(0.0, 0.0, n);
    let pos = a - flat::vec3(&x[POS..POS + 3]);
    let vel = w_e.cross(&a) - flat::vec3(&x[VEL..VEL + 3]);
    out[7..10].copy_from_slice(pos.as_slice());
    out[10..13].copy_from_slice(vel.as_slice());
    out
}

/// Nonzeros `(row, state offset, value)` of the terminal Jacobian.
fn terminal_jacobian(x: &[f64], g: &DockingGeometry, n: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(70);
    for i in 0..4 {
        out.push((i, Q_S + i, -1.0));
        out.push((i, Q_T + i, 1.0));
    }
    for i in 0..3 {
        out.push((4 + i, W_S + i, -1.0));
        out.push((4 + i, W_T + i, 1.0));
    }
    let q = Quaternion::from_slice(&x[Q_S..Q_S + 4]);
    let rt = rotation_matrix_unchecked(&q).transpose();
    let dr = rotation_partials(&q);
    let lever = g.lever();
    let w = flat::vec3(&x[W_S..W_S + 3]);
    let a = rt * lever;
    let w_e = rt * w - Vector3::new(0.0, 0.0, n);
    for i in 0..3 {
        out.push((7 + i, POS + i, -1.0));
    }
    for (j, p) in dr.iter().enumerate() {
        let da = p.transpose() * lever;
        for i in 0..3 {
            out.push((7 + i, Q_S + j, da[i]));
        }
    }
    let dw = -skew(&a) * rt;
    for i in 0..3 {
        for j in 0..3 {
            out.push((10 + i, W_S + j, dw[(i, j)]));
        }
    }
    for (j, p) in dr.iter().enumerate() {
        let pt = p.transpose();
        let dv = (pt * w).cross(&a) + w_e.cross(&(pt * lever));
        for i in 0..3 {
            out.push((10 + i, Q_S + j, dv[i]));
        }
    }
    for i in 0..3 {
        out.push((10 + i, VEL + i, -1.0));
    }
    out
}

/// Hessian of `lambda . terminal_residual` over [`TERMINAL_HESS_VARS`], by
/// central differences of the analytic gradient. The residual is a low-degree
/// polynomial, so the truncation error is tiny.
fn terminal_hessian(x: &[f64], g: &DockingGeometry, n: f64, lambda: &[f64]) -> [[f64; 7]; 7] {
    let grad = |y: &[f64]| {
        let mut out = [0.0; 7];
        for (r, c, v) in terminal_jacobian(y, g, n) {
            if let Some(k) = TERMINAL_HESS_VARS.iter().position(|&t| t == c) {
                out[k] += lambda[r] * v;
            }
        }
        out
    };
    let mut y = x.to_vec();
    let mut hess = [[0.0; 7]; 7];
    for (b, &var) in TERMINAL_HESS_VARS.iter().enumerate() {
        let step = 1e-5 * x[var].abs().max(1.0);
        y[var] = x[var] + step;
        let gp = grad(&y);
        y[var] = x[var] - step;
        let gm = grad(&y);
        y[var] = x[var];
        for a in 0..7 {
            hess[a][b] = (gp[a] - gm[a]) / (2.0 * step);
        }
    }
    for a in 0..7 {
        for b in 0..a {
            let v = 0.5 * (hess[a][b] + hess[b][a]);
            hess[a][b] = v;
            hess[b][a] = v;
        }
    }
    hess
}

impl NlpProblem for TranscribedNlp {
    fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    fn num_eq(&self) -> usize {
        self.layout.num_eq()
    }

    fn num_ineq(&self) -> usize {
        self.num_collision_rows() + self.layout.nodes()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let mut lb = vec![f64::NEG_INFINITY; l.num_vars()];
        let mut ub = vec![f64::INFINITY; l.num_vars()];
        for k in 0..l.nodes() {
            for i in 0..3 {
                lb[l.control(k) + TORQUE + i] = -self.bounds.m_max;
                ub[l.control(k) + TORQUE + i] = self.bounds.m_max;
            }
        }
        lb[l.tf()] = self.tf_min / TF_SCALE;
        ub[l.tf()] = self.tf_max / TF_SCALE;
        (lb, ub)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.weights.l_tf * self.final_time(z) + self.dt(z) * self.running_sum(z)
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let h = self.dt(z);
        for k in 0..l.steps {
            let u = self.control(z, k);
            for i in 0..NU {
                let weight = if i < 3 {
                    self.weights.l_u
                } else {
                    self.weights.l_m
                };
                grad[l.control(k) + i] = 2.0 * h * weight * u[i];
            }
        }
        grad[l.tf()] =
            self.weights.l_tf * TF_SCALE + TF_SCALE / l.steps as f64 * self.running_sum(z);
    }

    fn constraints(&self, z: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        let x0 = self.initial.to_array();
        for i in 0..NX {
            out[i] = z[l.state(0) + i] - x0[i];
        }
        let h = self.dt(z);
        let mut fa = [0.0; NX];
        let mut fb = [0.0; NX];
        flat::derivative(self.state(z, 0), self.control(z, 0), &self.params, &mut fa);
        for k in 0..l.steps {
            flat::derivative(
                self.state(z, k + 1),
                self.control(z, k + 1),
                &self.params,
                &mut fb,
            );
            let (a, b) = (self.state(z, k), self.state(z, k + 1));
            let g = kinematic_term(&self.difference(z, k));
            let row = l.defect_row(k);
            for i in 0..NX {
                out[row + i] = b[i] - a[i] - 0.5 * h * (fa[i] + fb[i]) + 0.25 * h * g[i];
            }
            std::mem::swap(&mut fa, &mut fb);
        }
        let row = l.terminal_row();
        out[row..row + TERMINAL_ROWS].copy_from_slice(&terminal_residual(
            self.state(z, l.steps),
            &self.geometry,
            self.params.mean_motion,
        ));
        let me = l.num_eq();
        let nc = self.num_collision_rows();
        for k in 0..nc {
            let x = self.state(z, k);
            out[me + k] = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - self.keep_out(k).powi(2);
        }
        let rhs = self.bounds.thrust_rhs();
        for k in 0..l.nodes() {
            let u = self.control(z, k);
            out[me + nc + k] = rhs - (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.jac_structure.clone()
    }

    fn jacobian_values(&self, z: &[f64], values: &mut [f64]) {
        let mut entries = Vec::with_capacity(self.jac_structure.len());
        self.jacobian_entries(z, &mut entries);
        for (v, e) in values.iter_mut().zip(&entries) {
            *v = e.2;
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.hess_structure.clone()
    }

    fn hessian_values(&self, z: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        let mut entries = Vec::with_capacity(self.hess_structure.len());
        self.hessian_entries(z, obj_factor, lambda, &mut entries);
        for (v, e) in values.iter_mut().zip(&entries) {
            *v = e.2;
        }
    }

    fn variable_scaling(&self) -> Option<Vec<f64>> {
        let l = &self.layout;
        let mut d = vec![1.0; l.num_vars()];
        for k in 0..l.nodes() {
            let x = l.state(k);
            d[x + VEL..x + VEL + 3].fill(VEL_SCALE);
            d[x + W_S..x + W_S + 3].fill(RATE_SCALE);
            d[x + W_T..x + W_T + 3].fill(RATE_SCALE);
        }
        d[l.tf()] = TF_UNIT / TF_SCALE;
        Some(d)
    }

    /// Node `k` forms stage `k` together with the multipliers of its path
    /// constraints and of the defect that ends at it; `t_f` is the border.
    fn elimination_stages(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let l = &self.layout;
        let mut var = vec![0; l.num_vars()];
        for k in 0..l.nodes() {
            var[l.state(k)..l.state(k) + NX]
                .iter_mut()
                .for_each(|s| *s = k);
            var[l.control(k)..l.control(k) + NU]
                .iter_mut()
                .for_each(|s| *s = k);
        }
        var[l.tf()] = l.nodes();
        let mut con = vec![0; self.num_cons()];
        for k in 0..l.steps {
            let row = l.defect_row(k);
            con[row..row + NX].iter_mut().for_each(|s| *s = k + 1);
        }
        let row = l.terminal_row();
        con[row..row + TERMINAL_ROWS]
            .iter_mut()
            .for_each(|s| *s = l.steps);
        let me = l.num_eq();
        let nc = self.num_collision_rows();
        for k in 0..nc {
            con[me + k] = k;
        }
        for k in 0..l.nodes() {
            con[me + nc + k] = k;
        }
        Some((var, con))
    }
}

/// Torque-free attitude history of the target at `times`, as
/// `(q_T, w_T)` pairs.
pub fn propagate_target(
    q0: &Quaternion,
    w0: &AngularVelocity,
    params: &BodyParams,
    times: &[f64],
) -> Result<Vec<(Quaternion, AngularVelocity)>> {
    let mut y0 = [0.0; 7];
    y0[..4].copy_from_slice(&q0.to_array());
    y0[4..].copy_from_slice(&[w0.wx, w0.wy, w0.wz]);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let mut x = [0.0; NX];
        x[Q_T..Q_T + 4].copy_from_slice(&y[..4]);
        x[W_T..W_T + 3].copy_from_slice(&y[4..]);
        let mut f = [0.0; NX];
        flat::derivative(&x, &[0.0; NU], params, &mut f);
        dy[..4].copy_from_slice(&f[Q_T..Q_T + 4]);
        dy[4..].copy_from_slice(&f[W_T..W_T + 3]);
    };
    let ys = reference::integrate(rhs, 0.0, &y0, times, Tolerances::default())?;
    Ok(ys
        .iter()
        .map(|y| {
            (
                Quaternion::from_slice(&y[..4]),
                AngularVelocity::new(y[4], y[5], y[6]),
            )
        })
        .collect())
}

/// Starting point for the solver.
///
/// The target block follows its torque-free motion. The servicer block goes
/// from the initial state to a docking-consistent terminal state: attitude
/// and rate copied from the target at `t_f = tf_guess`, relative position
/// `R^T (dT - dS)` and the matching relative velocity. On the way it sweeps
/// around the target instead of crossing it and turns about a fixed axis,
/// both with smoothstep timing. Quaternions are renormalized, controls are
/// zero.
pub fn initial_guess(scenario: &ScenarioConfig, steps: usize) -> Result<Vec<f64>> {
    let layout = Layout::new(steps)?;
    let t_f = scenario.tf_guess;
    let times: Vec<f64> = (0..layout.nodes())
        .map(|k| t_f * k as f64 / steps as f64)
        .collect();
    let x0 = scenario.initial;
    let target = propagate_target(&x0.q_t, &x0.w_t, &scenario.params, &times)?;

    let (q_end, w_end) = target[steps];
    let mut end = x0;
    end.q_s = q_end.normalized()?;
    end.w_s = w_end;
    let mut x_end = end.to_array();
    let tr = terminal_residual(&x_end, &scenario.geometry, scenario.params.mean_motion);
    // zero the docking residuals by moving r and v onto their targets
    for i in 0..3 {
        x_end[POS + i] += tr[7 + i];
        x_end[VEL + i] += tr[10 + i];
    }

    let arc = Arc::new(x0.trans.position(), flat::vec3(&x_end[POS..POS + 3]));
    let turn = Turn::new(&x0.q_s, &end.q_s);
    let w0 = x0.w_s.as_vector();
    let w1 = end.w_s.as_vector();

    let mut states = Vec::with_capacity(layout.nodes());
    for (k, (q_t, w_t)) in target.iter().enumerate() {
        if k == 0 {
            states.push(x0);
            continue;
        }
        let s = k as f64 / steps as f64;
        let (sig, dsig) = smoothstep(s);
        let mut state = x0;
        if k == steps {
            state = StateVector20::from_slice(&x_end);
            state.q_t = end.q_s;
            state.w_t = end.w_s;
        } else {
            let (p, v) = arc.at(sig, dsig / t_f);
            state.trans = TranslationalState::new(p.x, p.y, p.z, v.x, v.y, v.z);
            let (q, w) = turn.at(sig, dsig / t_f);
            state.q_s = q.normalized()?;
            state.w_s = AngularVelocity::from_vector(&(w + w0 + s * (w1 - w0)));
            state.q_t = q_t.normalized()?;
            state.w_t = *w_t;
        }
        states.push(state);
    }
    pack(&states, &vec![ControlVector6::zero(); layout.nodes()], t_f)
}

/// `3 s^2 - 2 s^3` and its derivative.
fn smoothstep(s: f64) -> (f64, f64) {
    (s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s))
}

/// Path that sweeps the direction and interpolates the distance between two
/// positions, so it stays clear of the origin.
struct Arc {
    a: Vector3<f64>,
    c: Vector3<f64>,
    angle: f64,
    r0: f64,
    r1: f64,
}

impl Arc {
    fn new(p0: Vector3<f64>, p1: Vector3<f64>) -> Self {
        let (r0, r1) = (p0.norm(), p1.norm());
        let a = if r0 > 0.0 { p0 / r0 } else { Vector3::x() };
        let b = if r1 > 0.0 { p1 / r1 } else { a };
        let mut c = b - a * a.dot(&b);
        if c.norm() < 1e-6 {
            // antipodal ends: go around through +x, or +z if a is along x
            let e = if a.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::z()
            };
            c = e - a * a.dot(&e);
        }
        let c = c.normalize();
        let angle = b.dot(&c).atan2(a.dot(&b));
        Self {
            a,
            c,
            angle,
            r0,
            r1,
        }
    }

    /// Position at progress `sig` and velocity for `d sig / dt = rate`.
    fn at(&self, sig: f64, rate: f64) -> (Vector3<f64>, Vector3<f64>) {
        let th = self.angle * sig;
        let dir = self.a * th.cos() + self.c * th.sin();
        let ddir = -self.a * th.sin() + self.c * th.cos();
        let r = self.r0 + sig * (self.r1 - self.r0);
        let p = dir * r;
        let v = (dir * (self.r1 - self.r0) + ddir * (r * self.angle)) * rate;
        (p, v)
    }
}

/// Rotation about a fixed body axis that carries one attitude into another
/// under `q_dot = 1/2 Omega(w) q`.
struct Turn {
    q0: [f64; 4],
    /// Columns `Omega(e_i) q0`.
    m: [[f64; 4]; 3],
    axis: Vector3<f64>,
    angle: f64,
}

impl Turn {
    fn new(q0: &Quaternion, q1: &Quaternion) -> Self {
        let a0 = q0.to_array();
        let a1 = q1.to_array();
        let mut m = [[0.0; 4]; 3];
        for (i, col) in m.iter_mut().enumerate() {
            let mut e = Vector3::zeros();
            e[i] = 1.0;
            let d = quaternion_derivative(q0, &AngularVelocity::from_vector(&e));
            for j in 0..4 {
                col[j] = 2.0 * d[j];
            }
        }
        let c: f64 = a0.iter().zip(&a1).map(|(x, y)| x * y).sum();
        let rest: Vec<f64> = (0..4).map(|j| a1[j] - c * a0[j]).collect();
        let mut axis = Vector3::<f64>::zeros();
        for i in 0..3 {
            axis[i] = (0..4).map(|j| m[i][j] * rest[j]).sum();
        }
        let s = axis.norm();
        let angle = 2.0 * s.atan2(c);
        let axis = if s > 0.0 { axis / s } else { Vector3::x() };
        Self {
            q0: a0,
            m,
            axis,
            angle,
        }
    }

    /// Attitude at progress `sig` and body rate for `d sig / dt = rate`.
    fn at(&self, sig: f64, rate: f64) -> (Quaternion, Vector3<f64>) {
        let h = 0.5 * self.angle * sig;
        let mut q = [0.0; 4];
        for j in 0..4 {
            let dir: f64 = (0..3).map(|i| self.m[i][j] * self.axis[i]).sum();
            q[j] = h.cos() * self.q0[j] + h.sin() * dir;
        }
        (Quaternion::from_slice(&q), self.axis * (self.angle * rate))
    }
}

#[cfg(test)]
mod tests;

//! Post-processed solutions and their file formats.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints_cost::{
    collision_margin, cost_on_grid, thrust_margin, CostBreakdown, CostWeights,
};
use crate::dynamics::{rotation_matrix_unchecked, ControlVector6, Quaternion, StateVector20};
use crate::error::{domain, DockingError, Result};
use crate::scenario::ScenarioConfig;
use crate::solver::{KktResidual, SolveReport};

/// Nodes with `|sin theta|` this close to one are treated as gimbal locked.
pub const GIMBAL_TOL: f64 = 1e-9;

/// Column names of the trajectory CSV, in file order.
pub const CSV_COLUMNS: [&str; 46] = [
    "k",
    "t",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "wSx",
    "wSy",
    "wSz",
    "wTx",
    "wTy",
    "wTz",
    "qS1",
    "qS2",
    "qS3",
    "qS4",
    "qT1",
    "qT2",
    "qT3",
    "qT4",
    "ux",
    "uy",
    "uz",
    "u1",
    "u2",
    "u3",
    "mx",
    "my",
    "mz",
    "phiS",
    "thetaS",
    "psiS",
    "phiT",
    "thetaT",
    "psiT",
    "collision_margin",
    "thrust_margin",
    "gimbalS",
    "gimbalT",
    "qS_drift",
    "qT_drift",
    "r",
    "u_norm",
    "m_norm",
];

/// Euler angles for the rotation sequence y, x, z: `R = R_z(psi) R_x(theta)
/// R_y(phi)` with the frame rotations of the attitude matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerYxz {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    /// `theta` is at +-90 degrees; `psi` was set to zero.
    pub gimbal: bool,
}

/// Euler angles of a quaternion, which is normalized first.
pub fn euler_yxz(q: &Quaternion) -> Result<EulerYxz> {
    let r = rotation_matrix_unchecked(&q.normalized()?);
    let sin_theta = (-r[(2, 1)]).clamp(-1.0, 1.0);
    let theta = sin_theta.asin();
    if 1.0 - sin_theta.abs() <= GIMBAL_TOL {
        return Ok(EulerYxz {
            phi: (-r[(0, 2)]).atan2(r[(0, 0)]),
            theta,
            psi: 0.0,
            gimbal: true,
        });
    }
    Ok(EulerYxz {
        phi: r[(2, 0)].atan2(r[(2, 2)]),
        theta,
        psi: r[(0, 1)].atan2(r[(1, 1)]),
        gimbal: false,
    })
}

/// Unit quaternion of a set of Euler angles, with a nonnegative scalar part.
pub fn quaternion_from_euler_yxz(e: &EulerYxz) -> Quaternion {
    let (sf, cf) = e.phi.sin_cos();
    let (st, ct) = e.theta.sin_cos();
    let (sp, cp) = e.psi.sin_cos();
    let ry = Matrix3::new(cf, 0.0, -sf, 0.0, 1.0, 0.0, sf, 0.0, cf);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ct, st, 0.0, -st, ct);
    let rz = Matrix3::new(cp, sp, 0.0, -sp, cp, 0.0, 0.0, 0.0, 1.0);
    quaternion_from_matrix(&(rz * rx * ry))
}

/// Inverse of the attitude matrix map, choosing the largest component as
/// pivot; the result has a nonnegative scalar part.
fn quaternion_from_matrix(r: &Matrix3<f64>) -> Quaternion {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let diag = [
        1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)],
        1.0 - r[(0, 0)] + r[(1, 1)] - r[(2, 2)],
        1.0 - r[(0, 0)] - r[(1, 1)] + r[(2, 2)],
        1.0 + trace,
    ];
    let pivot = (0..4)
        .max_by(|a, b| diag[*a].total_cmp(&diag[*b]))
        .unwrap_or(3);
    let s = 2.0 * diag[pivot].sqrt();
    // products 4 q_i q_j read off the matrix
    let q1q2 = r[(0, 1)] + r[(1, 0)];
    let q1q3 = r[(0, 2)] + r[(2, 0)];
    let q2q3 = r[(1, 2)] + r[(2, 1)];
    let q1q4 = r[(1, 2)] - r[(2, 1)];
    let q2q4 = r[(2, 0)] - r[(0, 2)];
    let q3q4 = r[(0, 1)] - r[(1, 0)];
    let q = match pivot {
        0 => [s / 4.0, q1q2 / s, q1q3 / s, q1q4 / s],
        1 => [q1q2 / s, s / 4.0, q2q3 / s, q2q4 / s],
        2 => [q1q3 / s, q2q3 / s, s / 4.0, q3q4 / s],
        _ => [q1q4 / s, q2q4 / s, q3q4 / s, s / 4.0],
    };
    let sign = if q[3] < 0.0 { -1.0 } else { 1.0 };
    Quaternion::from_slice(&q.map(|v| sign * v))
}

/// Solver outcome as stored next to a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub max_eq_violation: f64,
    pub min_ineq_margin: f64,
    pub kkt: KktResidual,
    pub wall_time_s: f64,
    pub steps: usize,
    /// Hex digest of the scenario file contents.
    pub scenario_hash: String,
}

impl SolveSummary {
    pub fn new(report: &SolveReport, steps: usize, scenario_hash: u64) -> Self {
        Self {
            status: report.status.to_string(),
            converged: report.status.is_converged(),
            iterations: report.iterations,
            objective: report.objective,
            max_eq_violation: report.max_eq_violation,
            min_ineq_margin: report.min_ineq_margin,
            kkt: report.kkt,
            wall_time_s: report.wall_time.as_secs_f64(),
            steps,
            scenario_hash: format!("{scenario_hash:016x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrajectory {
    pub t_f: f64,
    pub times: Vec<f64>,
    pub states: Vec<StateVector20>,
    /// Thrust in the reference frame and torques, as optimized.
    pub controls: Vec<ControlVector6>,
    /// Thrust in the servicer body frame.
    pub body_thrust: Vec<Vector3<f64>>,
    pub euler_s: Vec<EulerYxz>,
    pub euler_t: Vec<EulerYxz>,
    pub cost: CostBreakdown,
    pub collision_margin: Vec<f64>,
    pub thrust_margin: Vec<f64>,
    pub summary: Option<SolveSummary>,
}

impl SolutionTrajectory {
    /// Derived quantities for node states and controls on the uniform grid
    /// `t_k = k t_f / N`.
    pub fn new(
        scenario: &ScenarioConfig,
        states: Vec<StateVector20>,
        controls: Vec<ControlVector6>,
        t_f: f64,
    ) -> Result<Self> {
        if states.len() < 2 || controls.len() != states.len() {
            return domain(format!(
                "a trajectory needs at least 2 nodes with one control each, got {} states and {} controls",
                states.len(),
                controls.len()
            ));
        }
        let steps = states.len() - 1;
        let times: Vec<f64> = (0..=steps).map(|k| t_f * k as f64 / steps as f64).collect();
        let mut body_thrust = Vec::with_capacity(states.len());
        let mut euler_s = Vec::with_capacity(states.len());
        let mut euler_t = Vec::with_capacity(states.len());
        for (s, c) in states.iter().zip(&controls) {
            let q_s = s.q_s.normalized()?;
            body_thrust.push(rotation_matrix_unchecked(&q_s) * c.thrust());
            euler_s.push(euler_yxz(&q_s)?);
            euler_t.push(euler_yxz(&s.q_t)?);
        }
        let cost = cost_on_grid(&times, &controls, &scenario.weights)?;
        Ok(Self {
            t_f,
            collision_margin: states
                .iter()
                .map(|s| collision_margin(s, &scenario.geometry))
                .collect(),
            thrust_margin: controls
                .iter()
                .map(|c| thrust_margin(c, &scenario.bounds))
                .collect(),
            times,
            states,
            controls,
            body_thrust,
            euler_s,
            euler_t,
            cost,
            summary: None,
        })
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Largest `|‖q‖² - 1|` over nodes and both bodies.
    pub fn max_quaternion_drift(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.quaternion_drift())
            .fold(0.0, f64::max)
    }

    pub fn min_distance_squared(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.trans.position().norm_squared())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cost_with(&self, w: &CostWeights) -> Result<CostBreakdown> {
        cost_on_grid(&self.times, &self.controls, w)
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for k in 0..self.states.len() {
            let s = &self.states[k];
            let c = &self.controls[k];
            let b = &self.body_thrust[k];
            let (es, et) = (&self.euler_s[k], &self.euler_t[k]);
            let mut row: Vec<f64> = vec![self.times[k]];
            row.extend(s.to_array());
            row.extend([c.ux, c.uy, c.uz, b.x, b.y, b.z, c.mx, c.my, c.mz]);
            row.extend([es.phi, es.theta, es.psi, et.phi, et.theta, et.psi]);
            row.extend([self.collision_margin[k], self.thrust_margin[k]]);
            let _ = write!(out, "{k}");
            for v in &row {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = write!(out, ",{},{}", es.gimbal as u8, et.gimbal as u8);
            let norm_s = s.q_s.norm_squared();
            let norm_t = s.q_t.norm_squared();
            for v in [
                norm_s - 1.0,
                norm_t - 1.0,
                s.trans.position().norm(),
                c.thrust().norm(),
                c.torque().norm(),
            ] {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Rebuilds a trajectory from [`to_csv`](Self::to_csv) output. States,
    /// controls and times are read back exactly; derived columns are
    /// recomputed.
    pub fn from_csv(scenario: &ScenarioConfig, text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| DockingError::Parse {
            path: origin.to_string(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.split(',').eq(CSV_COLUMNS.iter().copied()) => {}
            _ => return Err(parse_err(1, "unexpected header".into())),
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != CSV_COLUMNS.len() {
                return Err(parse_err(
                    i + 1,
                    format!(
                        "expected {} fields, found {}",
                        CSV_COLUMNS.len(),
                        fields.len()
                    ),
                ));
            }
            let mut v = Vec::with_capacity(30);
            for (j, f) in fields.iter().enumerate().skip(1).take(30) {
                v.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| parse_err(i + 1, format!("column {}: {e}", CSV_COLUMNS[j])))?,
                );
            }
            times.push(v[0]);
            states.push(StateVector20::from_slice(&v[1..21]));
            controls.push(ControlVector6::new(
                v[21], v[22], v[23], v[27], v[28], v[29],
            ));
        }
        let Some(&t_f) = times.last() else {
            return Err(parse_err(2, "no data rows".into()));
        };
        let traj = Self::new(scenario, states, controls, t_f)?;
        if let Some(k) = (0..times.len()).find(|&k| times[k] != traj.times[k]) {
            return Err(parse_err(
                k + 2,
                format!(
                    "time {} is off the uniform grid ({})",
                    times[k], traj.times[k]
                ),
            ));
        }
        Ok(traj)
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "docking trajectory report");
        let _ = writeln!(out, "nodes               {}", self.states.len());
        let _ = writeln!(out, "t_f                 {:.6} s", self.t_f);
        let _ = writeln!(out, "J                   {:.6}", self.cost.j);
        let _ = writeln!(out, "u_total             {:.6}", self.cost.u_total);
        let _ = writeln!(out, "m_total             {:.6}", self.cost.m_total);
        let _ = writeln!(
            out,
            "max quaternion drift {:.3e}",
            self.max_quaternion_drift()
        );
        let _ = writeln!(
            out,
            "min distance        {:.9} m",
            self.min_distance_squared().sqrt()
        );
        let _ = writeln!(
            out,
            "min collision margin {:.3e} m^2",
            self.collision_margin
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        );
        let _ = writeln!(
            out,
            "min thrust margin   {:.3e}",
            self.thrust_margin
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        );
        let gimbal = self
            .euler_s
            .iter()
            .chain(&self.euler_t)
            .filter(|e| e.gimbal)
            .count();
        let _ = writeln!(out, "gimbal-locked angles {gimbal}");
        match &self.summary {
            Some(s) => {
                let _ = writeln!(out, "solver status       {}", s.status);
                let _ = writeln!(out, "iterations          {}", s.iterations);
                let _ = writeln!(out, "wall time           {:.2} s", s.wall_time_s);
                let _ = writeln!(out, "objective           {:.10}", s.objective);
                let _ = writeln!(out, "kkt stationarity    {:.3e}", s.kkt.stationarity);
                let _ = writeln!(out, "kkt feasibility eq  {:.3e}", s.kkt.feasibility_eq);
                let _ = writeln!(out, "kkt feasibility in  {:.3e}", s.kkt.feasibility_ineq);
                let _ = writeln!(out, "kkt complementarity {:.3e}", s.kkt.complementarity);
            }
            None => {
                let _ = writeln!(out, "solver status       unknown");
            }
        }
        out
    }

    /// Position and thrust over time, reference and body frame.
    pub fn position_thrust_series(&self) -> String {
        let mut out = String::from("t,x,y,z,ux,uy,uz,u1,u2,u3\n");
        for k in 0..self.states.len() {
            let s = &self.states[k].trans;
            let c = &self.controls[k];
            let b = &self.body_thrust[k];
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[k], s.x, s.y, s.z, c.ux, c.uy, c.uz, b.x, b.y, b.z
            );
        }
        out
    }

    /// Euler angles of both bodies and the torques over time.
    pub fn attitude_series(&self) -> String {
        let mut out = String::from("t,phiS,thetaS,psiS,phiT,thetaT,psiT,mx,my,mz\n");
        for k in 0..self.states.len() {
            let (es, et) = (&self.euler_s[k], &self.euler_t[k]);
            let c = &self.controls[k];
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[k], es.phi, es.theta, es.psi, et.phi, et.theta, et.psi, c.mx, c.my, c.mz
            );
        }
        out
    }

    /// Relative path in space.
    pub fn path_series(&self) -> String {
        let mut out = String::from("x,y,z,distance\n");
        for s in &self.states {
            let p = s.trans.position();
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                p.x,
                p.y,
                p.z,
                p.norm()
            );
        }
        out
    }
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const FIG1_FILE: &str = "fig1_position_thrust.csv";
pub const FIG2_FILE: &str = "fig2_attitude.csv";
pub const FIG3_FILE: &str = "fig3_path.csv";

/// Writes through a temporary file in the same directory and renames it, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| DockingError::Io(std::io::Error::other("output path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp: PathBuf = match dir {
        Some(d) => d.join(tmp_name),
        None => PathBuf::from(tmp_name),
    };
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn export_trajectory(traj: &SolutionTrajectory, path: &Path) -> Result<()> {
    write_atomic(path, &traj.to_csv())
}

pub fn export_report(traj: &SolutionTrajectory, path: &Path) -> Result<()> {
    write_atomic(path, &traj.report())
}

/// Writes the trajectory, the report, the solver summary (when known) and
/// the three plot series into `dir`, creating it if needed.
pub fn write_outputs(traj: &SolutionTrajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    export_trajectory(traj, &dir.join(TRAJECTORY_FILE))?;
    export_report(traj, &dir.join(REPORT_FILE))?;
    if let Some(s) = &traj.summary {
        let text = toml::to_string(s)
            .map_err(|e| DockingError::Io(std::io::Error::other(e.to_string())))?;
        write_atomic(&dir.join(SUMMARY_FILE), &text)?;
    }
    write_atomic(&dir.join(FIG1_FILE), &traj.position_thrust_series())?;
    write_atomic(&dir.join(FIG2_FILE), &traj.attitude_series())?;
    write_atomic(&dir.join(FIG3_FILE), &traj.path_series())?;
    Ok(())
}

/// Reads a trajectory written by [`write_outputs`], with its solver summary
/// when present.
pub fn read_outputs(scenario: &ScenarioConfig, dir: &Path) -> Result<SolutionTrajectory> {
    let path = dir.join(TRAJECTORY_FILE);
    let text = fs::read_to_string(&path)?;
    let mut traj = SolutionTrajectory::from_csv(scenario, &text, &path.display().to_string())?;
    let summary_path = dir.join(SUMMARY_FILE);
    if summary_path.exists() {
        let text = fs::read_to_string(&summary_path)?;
        traj.summary = Some(toml::from_str(&text).map_err(|e| DockingError::Parse {
            path: summary_path.display().to_string(),
            message: e.to_string(),
        })?);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests;

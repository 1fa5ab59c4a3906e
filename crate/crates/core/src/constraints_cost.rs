//! Terminal docking residuals, path constraints and the Bolza cost.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    inertial_angular_velocity, rotation_matrix, ControlVector6, StateVector20, NORM_TOL_SOLVER,
};
use crate::error::{config, domain, Result};
use crate::trajectory::SolutionTrajectory;

/// Body-fixed docking points and safety-sphere radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DockingGeometry {
    pub dock_s: Vector3<f64>,
    pub dock_t: Vector3<f64>,
    pub radius_s: f64,
    pub radius_t: f64,
}

impl DockingGeometry {
    /// Validates radii and checks that docking with matched attitudes leaves
    /// the safety spheres at least touching.
    pub fn new(
        dock_s: Vector3<f64>,
        dock_t: Vector3<f64>,
        radius_s: f64,
        radius_t: f64,
    ) -> Result<Self> {
        if !(radius_s > 0.0 && radius_t > 0.0) {
            return config(format!(
                "safety radii must be positive, got rS={radius_s}, rT={radius_t}"
            ));
        }
        let g = Self {
            dock_s,
            dock_t,
            radius_s,
            radius_t,
        };
        let dist = g.lever().norm();
        if dist < radius_s + radius_t {
            return config(format!(
                "docking distance |dT - dS| = {dist} is smaller than rS + rT = {}; \
                 the terminal condition would violate the collision constraint",
                radius_s + radius_t
            ));
        }
        Ok(g)
    }

    /// `dT - dS` in body coordinates.
    pub fn lever(&self) -> Vector3<f64> {
        self.dock_t - self.dock_s
    }

    pub fn keep_out_radius(&self) -> f64 {
        self.radius_s + self.radius_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub l_tf: f64,
    pub l_u: f64,
    pub l_m: f64,
}

impl CostWeights {
    pub fn new(l_tf: f64, l_u: f64, l_m: f64) -> Result<Self> {
        let all = [l_tf, l_u, l_m];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return config(format!("cost weights must be nonnegative, got {all:?}"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return config("at least one cost weight must be positive");
        }
        Ok(Self { l_tf, l_u, l_m })
    }

    pub fn unit() -> Self {
        Self {
            l_tf: 1.0,
            l_u: 1.0,
            l_m: 1.0,
        }
    }
}

/// How the thrust bound enters `ux^2 + uy^2 + uz^2 <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThrustBoundMode {
    /// `rhs = u_max`, exactly as the squared-norm inequality is written.
    #[default]
    Literal,
    /// `rhs = u_max^2`, treating `u_max` as a force magnitude.
    Squared,
}

impl std::str::FromStr for ThrustBoundMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "squared" => Ok(Self::Squared),
            other => Err(format!(
                "unknown thrust bound mode '{other}' (expected literal|squared)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub u_max: f64,
    pub m_max: f64,
    pub mode: ThrustBoundMode,
}

impl ControlBounds {
    pub fn new(u_max: f64, m_max: f64, mode: ThrustBoundMode) -> Result<Self> {
        if !(u_max > 0.0 && m_max > 0.0) {
            return config(format!(
                "control bounds must be positive, got u_max={u_max}, m_max={m_max}"
            ));
        }
        Ok(Self { u_max, m_max, mode })
    }

    /// Right-hand side of the squared-norm thrust inequality.
    pub fn thrust_rhs(&self) -> f64 {
        match self.mode {
            ThrustBoundMode::Literal => self.u_max,
            ThrustBoundMode::Squared => self.u_max * self.u_max,
        }
    }
}

/// `R^T (dT - dS) - r`, with `R` taken from the servicer quaternion.
pub fn docking_position_residual(s: &StateVector20, g: &DockingGeometry) -> Result<Vector3<f64>> {
    let r = rotation_matrix(&s.q_s, NORM_TOL_SOLVER)?;
    Ok(r.transpose() * g.lever() - s.trans.position())
}

/// `w_E x R^T (dT - dS) - r_dot`, with the servicer's inertial rate `w_E`.
pub fn docking_velocity_residual(
    s: &StateVector20,
    g: &DockingGeometry,
    n: f64,
) -> Result<Vector3<f64>> {
    let r = rotation_matrix(&s.q_s, NORM_TOL_SOLVER)?;
    let w_e = inertial_angular_velocity(&s.q_s, &s.w_s, n, NORM_TOL_SOLVER)?;
    Ok(w_e.cross(&(r.transpose() * g.lever())) - s.trans.velocity())
}

/// `(qT - qS, wT - wS)`.
pub fn attitude_match_residual(s: &StateVector20) -> [f64; 7] {
    let (qs, qt) = (s.q_s.to_array(), s.q_t.to_array());
    [
        qt[0] - qs[0],
        qt[1] - qs[1],
        qt[2] - qs[2],
        qt[3] - qs[3],
        s.w_t.wx - s.w_s.wx,
        s.w_t.wy - s.w_s.wy,
        s.w_t.wz - s.w_s.wz,
    ]
}

/// `x^2 + y^2 + z^2 - (rS + rT)^2`; feasible when nonnegative.
pub fn collision_margin(s: &StateVector20, g: &DockingGeometry) -> f64 {
    s.trans.position().norm_squared() - g.keep_out_radius().powi(2)
}

/// Thrust-bound slack; feasible when nonnegative.
pub fn thrust_margin(c: &ControlVector6, b: &ControlBounds) -> f64 {
    b.thrust_rhs() - c.thrust().norm_squared()
}

pub fn running_cost(c: &ControlVector6, w: &CostWeights) -> f64 {
    w.l_u * c.thrust().norm_squared() + w.l_m * c.torque().norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j: f64,
    pub u_total: f64,
    pub m_total: f64,
}

/// Cost of a uniform-grid control history; the integral is the left-endpoint
/// sum over the first `N` of the `N + 1` nodes.
pub fn cost_on_grid(
    times: &[f64],
    controls: &[ControlVector6],
    w: &CostWeights,
) -> Result<CostBreakdown> {
    if times.len() < 2 || controls.len() != times.len() {
        return domain(format!(
            "cost needs at least 2 nodes with one control each, got {} times and {} controls",
            times.len(),
            controls.len()
        ));
    }
    let steps = times.len() - 1;
    let t_f = times[steps] - times[0];
    let dt = t_f / steps as f64;
    for (k, t) in times.iter().enumerate() {
        let expected = times[0] + k as f64 * dt;
        if (t - expected).abs() > 1e-9 * t_f.abs().max(1.0) {
            return domain(format!(
                "time grid is not uniform at node {k}: {t} vs {expected}"
            ));
        }
    }
    let u_total = dt
        * controls[..steps]
            .iter()
            .map(|c| c.thrust().norm_squared())
            .sum::<f64>();
    let m_total = dt
        * controls[..steps]
            .iter()
            .map(|c| c.torque().norm_squared())
            .sum::<f64>();
    Ok(CostBreakdown {
        j: w.l_tf * t_f + w.l_u * u_total + w.l_m * m_total,
        u_total,
        m_total,
    })
}

pub fn total_cost(traj: &SolutionTrajectory, w: &CostWeights) -> Result<CostBreakdown> {
    cost_on_grid(&traj.times, &traj.controls, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AngularVelocity, Quaternion, TranslationalState};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geometry() -> DockingGeometry {
        DockingGeometry::new(
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn state(r: [f64; 3], v: [f64; 3], q: Quaternion, w: AngularVelocity) -> StateVector20 {
        StateVector20 {
            trans: TranslationalState::new(r[0], r[1], r[2], v[0], v[1], v[2]),
            w_s: w,
            w_t: w,
            q_s: q,
            q_t: q,
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(DockingGeometry::new(
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            0.5,
            0.5
        )
        .is_ok());
        assert!(DockingGeometry::new(Vector3::zeros(), Vector3::zeros(), 1.0, 1.0).is_err());
        assert!(DockingGeometry::new(Vector3::zeros(), Vector3::y(), 0.0, 1.0).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(CostWeights::new(-1.0, 1.0, 1.0).is_err());
        assert!(CostWeights::new(1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn position_residual_examples() {
        let g = geometry();
        let id = Quaternion::identity();
        let s = state([0.0, -2.0, 0.0], [0.0; 3], id, AngularVelocity::default());
        assert_eq!(docking_position_residual(&s, &g).unwrap(), Vector3::zeros());
        let s = state([0.0; 3], [0.0; 3], id, AngularVelocity::default());
        assert_eq!(
            docking_position_residual(&s, &g).unwrap(),
            Vector3::new(0.0, -2.0, 0.0)
        );
        let flip = Quaternion::new(0.0, 0.0, 1.0, 0.0);
        let s = state([0.0, 2.0, 0.0], [0.0; 3], flip, AngularVelocity::default());
        assert_eq!(docking_position_residual(&s, &g).unwrap(), Vector3::zeros());
        let mut bad = s;
        bad.q_s = Quaternion::new(0.0, 0.0, 0.0, 0.5);
        assert!(docking_position_residual(&bad, &g).is_err());
    }

    #[test]
    fn velocity_residual_examples() {
        let g = geometry();
        let n = 1.0610e-3;
        let id = Quaternion::identity();
        let s = state(
            [0.0, -2.0, 0.0],
            [-2.1220e-3, 0.0, 0.0],
            id,
            AngularVelocity::default(),
        );
        assert_abs_diff_eq!(
            docking_velocity_residual(&s, &g, n).unwrap(),
            Vector3::zeros(),
            epsilon = 1e-18
        );
        let s = state(
            [0.0, -2.0, 0.0],
            [0.0; 3],
            id,
            AngularVelocity::new(0.0, 0.0, n),
        );
        assert_eq!(
            docking_velocity_residual(&s, &g, n).unwrap(),
            Vector3::zeros()
        );
        let same = DockingGeometry {
            dock_t: g.dock_s,
            ..g
        };
        let q = Quaternion::new(0.1, 0.2, 0.3, 0.5).normalized().unwrap();
        let s = state(
            [1.0, 2.0, 3.0],
            [0.0; 3],
            q,
            AngularVelocity::new(0.3, -0.1, 0.2),
        );
        assert_eq!(
            docking_velocity_residual(&s, &same, n).unwrap(),
            Vector3::zeros()
        );
    }

    #[test]
    fn attitude_residual_examples() {
        let w = AngularVelocity::new(0.1, 0.2, 0.3);
        let s = state([0.0; 3], [0.0; 3], Quaternion::identity(), w);
        assert_eq!(attitude_match_residual(&s), [0.0; 7]);
        let mut s2 = s;
        s2.q_s = Quaternion::new(0.0, 0.0, 1.0, 0.0);
        assert_eq!(
            attitude_match_residual(&s2),
            [0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0]
        );
        let mut s3 = s;
        s3.w_s = AngularVelocity::default();
        s3.w_t = AngularVelocity::new(0.0, 0.052359, 0.0);
        assert_eq!(
            attitude_match_residual(&s3),
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.052359, 0.0]
        );
    }

    #[test]
    fn collision_margin_examples() {
        let g = geometry();
        let id = Quaternion::identity();
        let w = AngularVelocity::default();
        assert_eq!(
            collision_margin(&state([0.0, 3.0, 0.0], [0.0; 3], id, w), &g),
            5.0
        );
        assert_eq!(
            collision_margin(&state([0.0, 2.0, 0.0], [0.0; 3], id, w), &g),
            0.0
        );
        assert_eq!(
            collision_margin(&state([1.0, 1.0, 1.0], [0.0; 3], id, w), &g),
            -1.0
        );
    }

    #[test]
    fn thrust_margin_examples() {
        let b = ControlBounds::new(0.15, 1.0, ThrustBoundMode::Literal).unwrap();
        assert_eq!(thrust_margin(&ControlVector6::zero(), &b), 0.15);
        let c = ControlVector6::new(0.15f64.sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(thrust_margin(&c, &b), 0.0, epsilon = 1e-16);
        let c = ControlVector6::new(0.3, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(thrust_margin(&c, &b), 0.06, epsilon = 1e-15);
        let sq = ControlBounds {
            mode: ThrustBoundMode::Squared,
            ..b
        };
        assert_abs_diff_eq!(thrust_margin(&c, &sq), 0.0225 - 0.09, epsilon = 1e-15);
    }

    #[test]
    fn running_cost_examples() {
        let w = CostWeights::unit();
        assert_eq!(running_cost(&ControlVector6::zero(), &w), 0.0);
        assert_eq!(
            running_cost(&ControlVector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0), &w),
            3.0
        );
    }

    #[test]
    fn cost_on_grid_examples() {
        let w = CostWeights::unit();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 10.0).collect();
        let zero = vec![ControlVector6::zero(); 11];
        let c = cost_on_grid(&times, &zero, &w).unwrap();
        assert_eq!(
            c,
            CostBreakdown {
                j: 100.0,
                u_total: 0.0,
                m_total: 0.0
            }
        );
        let ones = vec![ControlVector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0); 11];
        let c = cost_on_grid(&times, &ones, &w).unwrap();
        assert_abs_diff_eq!(c.u_total, 100.0, epsilon = 1e-12);
        let mut bad = times.clone();
        bad[3] += 0.5;
        assert!(cost_on_grid(&bad, &zero, &w).is_err());
        assert!(cost_on_grid(&times[..1], &zero[..1], &w).is_err());
    }

    #[test]
    fn terminal_consistency_touches_spheres() {
        // Any attitude: with matched attitude and zero position residual the
        // separation is |dT - dS| = 2 = rS + rT.
        let g = geometry();
        let q = Quaternion::new(0.3, -0.4, 0.1, 0.8).normalized().unwrap();
        let r = crate::dynamics::rotation_matrix_unchecked(&q).transpose() * g.lever();
        let s = state([r.x, r.y, r.z], [0.0; 3], q, AngularVelocity::default());
        assert_abs_diff_eq!(
            docking_position_residual(&s, &g).unwrap().norm(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(collision_margin(&s, &g), 0.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn running_cost_is_frame_invariant(
            q in prop::array::uniform4(-1.0f64..1.0).prop_filter("nz", |a| a.iter().map(|c| c * c).sum::<f64>() > 1e-2),
            c in prop::array::uniform6(-1.0f64..1.0),
        ) {
            let q = Quaternion::from_slice(&q).normalized().unwrap();
            let c = ControlVector6::from_slice(&c);
            let b = crate::dynamics::thrust_to_body(&q, &c.thrust(), NORM_TOL_SOLVER).unwrap();
            let cb = ControlVector6::new(b.x, b.y, b.z, c.mx, c.my, c.mz);
            let w = CostWeights::new(0.7, 1.3, 2.1).unwrap();
            prop_assert!((running_cost(&cb, &w) - running_cost(&c, &w)).abs() <= 1e-12);
        }

        #[test]
        fn cost_is_monotone_in_weights(
            controls in prop::collection::vec(prop::array::uniform6(-1.0f64..1.0), 3..8),
            bump in 0.0f64..2.0,
            which in 0usize..3,
        ) {
            let controls: Vec<_> = controls.iter().map(|c| ControlVector6::from_slice(c)).collect();
            let times: Vec<f64> = (0..controls.len()).map(|k| k as f64 * 1.5).collect();
            let w = CostWeights::new(0.5, 0.5, 0.5).unwrap();
            let mut w2 = w;
            match which { 0 => w2.l_tf += bump, 1 => w2.l_u += bump, _ => w2.l_m += bump }
            let a = cost_on_grid(&times, &controls, &w).unwrap().j;
            let b = cost_on_grid(&times, &controls, &w2).unwrap().j;
            prop_assert!(b >= a);
        }
    }
}

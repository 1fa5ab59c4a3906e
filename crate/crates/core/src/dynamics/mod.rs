//! Equations of motion for the servicer/target pair.
//!
//! Relative translation follows the Clohessy-Wiltshire equations about the
//! target (x radial, y along-track, z out-of-plane). Each body carries a
//! scalar-last unit quaternion and principal-axis Euler rigid-body rates.
//! Only the servicer is torqued.

pub mod flat;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Quaternion norm tolerance used inside the optimizer, where iterates drift.
pub const NORM_TOL_SOLVER: f64 = 1e-6;
/// Quaternion norm tolerance for constructed values and verification paths.
pub const NORM_TOL_STRICT: f64 = 1e-9;
/// Degree to radian factor used by scenario files.
pub const DEG_TO_RAD: f64 = 0.017453;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TranslationalState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl TranslationalState {
    pub fn new(x: f64, y: f64, z: f64, vx: f64, vy: f64, vz: f64) -> Self {
        Self {
            x,
            y,
            z,
            vx,
            vy,
            vz,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.vx, self.vy, self.vz]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Attitude quaternion, vector part first and scalar part last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn new(q1: f64, q2: f64, q3: f64, q4: f64) -> Self {
        Self { q1, q2, q3, q4 }
    }

    pub const fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 1.0)
    }

    /// Builds a quaternion and checks it against the strict unit-norm tolerance.
    pub fn unit(q1: f64, q2: f64, q3: f64, q4: f64) -> Result<Self> {
        let q = Self::new(q1, q2, q3, q4);
        q.check_unit(NORM_TOL_STRICT)?;
        Ok(q)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q1, self.q2, self.q3, self.q4]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn norm_squared(&self) -> f64 {
        self.to_array().iter().map(|c| c * c).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_squared().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return domain("cannot normalize a zero or non-finite quaternion");
        }
        Ok(Self::new(
            self.q1 / n,
            self.q2 / n,
            self.q3 / n,
            self.q4 / n,
        ))
    }

    pub fn check_unit(&self, tol: f64) -> Result<()> {
        let drift = (self.norm_squared() - 1.0).abs();
        if drift > tol || !drift.is_finite() {
            return domain(format!(
                "quaternion {:?} is not unit length (|q|^2 - 1 = {drift:e}, tolerance {tol:e})",
                self.to_array()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngularVelocity {
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl AngularVelocity {
    pub fn new(wx: f64, wy: f64, wz: f64) -> Self {
        Self { wx, wy, wz }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.wx, self.wy, self.wz)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Principal moments of inertia [kg m^2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaTensor {
    jxx: f64,
    jyy: f64,
    jzz: f64,
}

impl InertiaTensor {
    pub fn new(jxx: f64, jyy: f64, jzz: f64) -> Result<Self> {
        if !(jxx > 0.0 && jyy > 0.0 && jzz > 0.0)
            || !(jxx.is_finite() && jyy.is_finite() && jzz.is_finite())
        {
            return domain(format!(
                "principal moments must be positive, got ({jxx}, {jyy}, {jzz})"
            ));
        }
        let j = Self { jxx, jyy, jzz };
        if !j.is_physical() {
            log::warn!("principal moments ({jxx}, {jyy}, {jzz}) violate the triangle inequality");
        }
        Ok(j)
    }

    /// Triangle inequalities `Jxx + Jyy >= Jzz` (and cyclic) of a real rigid
    /// body. Not enforced, since real parameter sets may break them.
    pub fn is_physical(&self) -> bool {
        let (a, b, c) = (self.jxx, self.jyy, self.jzz);
        a + b >= c && b + c >= a && c + a >= b
    }

    pub fn jxx(&self) -> f64 {
        self.jxx
    }

    pub fn jyy(&self) -> f64 {
        self.jyy
    }

    pub fn jzz(&self) -> f64 {
        self.jzz
    }

    pub fn diagonal(&self) -> Vector3<f64> {
        Vector3::new(self.jxx, self.jyy, self.jzz)
    }
}

/// Servicer thrust (reference frame) and body torque.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlVector6 {
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl ControlVector6 {
    pub fn new(ux: f64, uy: f64, uz: f64, mx: f64, my: f64, mz: f64) -> Self {
        Self {
            ux,
            uy,
            uz,
            mx,
            my,
            mz,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn thrust(&self) -> Vector3<f64> {
        Vector3::new(self.ux, self.uy, self.uz)
    }

    pub fn torque(&self) -> Vector3<f64> {
        Vector3::new(self.mx, self.my, self.mz)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.ux, self.uy, self.uz, self.mx, self.my, self.mz]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn scaled(&self, k: f64) -> Self {
        let a = self.to_array().map(|c| c * k);
        Self::from_slice(&a)
    }
}

/// The combined 20-component state, ordered
/// `[x, y, z, vx, vy, vz, wS, wT, qS, qT]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector20 {
    pub trans: TranslationalState,
    pub w_s: AngularVelocity,
    pub w_t: AngularVelocity,
    pub q_s: Quaternion,
    pub q_t: Quaternion,
}

impl StateVector20 {
    pub fn to_array(&self) -> [f64; 20] {
        let mut out = [0.0; 20];
        out[0..6].copy_from_slice(&self.trans.to_array());
        out[6..9].copy_from_slice(&[self.w_s.wx, self.w_s.wy, self.w_s.wz]);
        out[9..12].copy_from_slice(&[self.w_t.wx, self.w_t.wy, self.w_t.wz]);
        out[12..16].copy_from_slice(&self.q_s.to_array());
        out[16..20].copy_from_slice(&self.q_t.to_array());
        out
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= 20, "state slice needs 20 components");
        Self {
            trans: TranslationalState::from_slice(&v[0..6]),
            w_s: AngularVelocity::new(v[6], v[7], v[8]),
            w_t: AngularVelocity::new(v[9], v[10], v[11]),
            q_s: Quaternion::from_slice(&v[12..16]),
            q_t: Quaternion::from_slice(&v[16..20]),
        }
    }

    /// Largest `| |q|^2 - 1 |` over both bodies.
    pub fn quaternion_drift(&self) -> f64 {
        (self.q_s.norm_squared() - 1.0)
            .abs()
            .max((self.q_t.norm_squared() - 1.0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyParams {
    pub mass: f64,
    pub inertia_s: InertiaTensor,
    pub inertia_t: InertiaTensor,
    pub mean_motion: f64,
}

impl BodyParams {
    pub fn new(
        mass: f64,
        inertia_s: InertiaTensor,
        inertia_t: InertiaTensor,
        mean_motion: f64,
    ) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return domain(format!("servicer mass must be positive, got {mass}"));
        }
        if !(mean_motion > 0.0 && mean_motion.is_finite()) {
            return domain(format!("mean motion must be positive, got {mean_motion}"));
        }
        Ok(Self {
            mass,
            inertia_s,
            inertia_t,
            mean_motion,
        })
    }
}

/// Mean motion `sqrt(GM / a^3)` of a circular reference orbit.
pub fn mean_motion(gm: f64, radius: f64) -> Result<f64> {
    if !(gm > 0.0) || !(radius > 0.0) {
        return domain(format!(
            "mean motion needs GM > 0 and a > 0, got GM={gm}, a={radius}"
        ));
    }
    Ok((gm / radius.powi(3)).sqrt())
}

/// Time derivative of the relative translational state under reference-frame thrust.
pub fn cw_derivative(
    s: &TranslationalState,
    thrust: &Vector3<f64>,
    n: f64,
    mass: f64,
) -> TranslationalState {
    debug_assert!(mass > 0.0);
    TranslationalState {
        x: s.vx,
        y: s.vy,
        z: s.vz,
        vx: 2.0 * n * s.vy + 3.0 * n * n * s.x + thrust.x / mass,
        vy: -2.0 * n * s.vx + thrust.y / mass,
        vz: -n * n * s.z + thrust.z / mass,
    }
}

/// Closed-form zero-thrust solution of the CW equations.
pub fn cw_analytic(s0: &TranslationalState, n: f64, t: f64) -> TranslationalState {
    let (s, c) = (n * t).sin_cos();
    let nt = n * t;
    let TranslationalState {
        x,
        y,
        z,
        vx,
        vy,
        vz,
    } = *s0;
    TranslationalState {
        x: (4.0 - 3.0 * c) * x + s / n * vx + 2.0 / n * (1.0 - c) * vy,
        y: 6.0 * (s - nt) * x + y - 2.0 / n * (1.0 - c) * vx + (4.0 * s - 3.0 * nt) / n * vy,
        z: c * z + s / n * vz,
        vx: 3.0 * n * s * x + c * vx + 2.0 * s * vy,
        vy: -6.0 * n * (1.0 - c) * x - 2.0 * s * vx + (4.0 * c - 3.0) * vy,
        vz: -n * s * z + c * vz,
    }
}

/// `q_dot = 1/2 Omega(w) q` for a scalar-last quaternion.
pub fn quaternion_derivative(q: &Quaternion, w: &AngularVelocity) -> [f64; 4] {
    let Quaternion { q1, q2, q3, q4 } = *q;
    let AngularVelocity { wx, wy, wz } = *w;
    [
        0.5 * (wz * q2 - wy * q3 + wx * q4),
        0.5 * (-wz * q1 + wx * q3 + wy * q4),
        0.5 * (wy * q1 - wx * q2 + wz * q4),
        0.5 * (-wx * q1 - wy * q2 - wz * q3),
    ]
}

/// Euler's rigid-body equations in principal axes.
pub fn gyro_derivative(
    w: &AngularVelocity,
    j: &InertiaTensor,
    torque: &Vector3<f64>,
) -> AngularVelocity {
    AngularVelocity {
        wx: (w.wy * w.wz * (j.jyy - j.jzz) + torque.x) / j.jxx,
        wy: (w.wx * w.wz * (j.jzz - j.jxx) + torque.y) / j.jyy,
        wz: (w.wx * w.wy * (j.jxx - j.jyy) + torque.z) / j.jzz,
    }
}

/// Direction cosine matrix of `q`, mapping unrotated-frame vectors into the
/// rotated (body) frame. No norm check.
pub fn rotation_matrix_unchecked(q: &Quaternion) -> Matrix3<f64> {
    let Quaternion { q1, q2, q3, q4 } = *q;
    Matrix3::new(
        q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4,
        2.0 * (q1 * q2 + q3 * q4),
        2.0 * (q1 * q3 - q2 * q4),
        2.0 * (q1 * q2 - q3 * q4),
        -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4,
        2.0 * (q2 * q3 + q1 * q4),
        2.0 * (q1 * q3 + q2 * q4),
        2.0 * (q2 * q3 - q1 * q4),
        -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4,
    )
}

pub fn rotation_matrix(q: &Quaternion, norm_tol: f64) -> Result<Matrix3<f64>> {
    q.check_unit(norm_tol)?;
    Ok(rotation_matrix_unchecked(q))
}

/// Angular velocity of a body expressed in the inertial frame,
/// `R^T w - (0, 0, n)`.
pub fn inertial_angular_velocity(
    q: &Quaternion,
    w: &AngularVelocity,
    n: f64,
    norm_tol: f64,
) -> Result<Vector3<f64>> {
    let r = rotation_matrix(q, norm_tol)?;
    Ok(r.transpose() * w.as_vector() - Vector3::new(0.0, 0.0, n))
}

/// Reference-frame thrust expressed in the servicer body frame.
pub fn thrust_to_body(q: &Quaternion, u: &Vector3<f64>, norm_tol: f64) -> Result<Vector3<f64>> {
    Ok(rotation_matrix(q, norm_tol)? * u)
}

/// Right-hand side of the full 20-state system.
pub fn full_derivative(s: &StateVector20, c: &ControlVector6, p: &BodyParams) -> [f64; 20] {
    let mut out = [0.0; 20];
    flat::derivative(&s.to_array(), &c.to_array(), p, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flyaround_params() -> BodyParams {
        BodyParams::new(
            200.0,
            InertiaTensor::new(2000.0, 5000.0, 2000.0).unwrap(),
            InertiaTensor::new(1000.0, 2000.0, 1000.0).unwrap(),
            mean_motion(398e12, 7_071_000.0).unwrap(),
        )
        .unwrap()
    }

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |a| a.iter().map(|c| c * c).sum::<f64>() > 1e-3)
            .prop_map(|a| Quaternion::from_slice(&a).normalized().unwrap())
    }

    #[test]
    fn mean_motion_examples() {
        assert_eq!(mean_motion(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(mean_motion(8.0, 2.0).unwrap(), 1.0);
        // sqrt(398e12 / 7071000^3) evaluated independently: 1.06101...e-3
        let n = mean_motion(398e12, 7_071_000.0).unwrap();
        assert_abs_diff_eq!(n, 1.0610e-3, epsilon = 5e-8);
        assert!(mean_motion(0.0, 1.0).is_err());
        assert!(mean_motion(1.0, -1.0).is_err());
    }

    #[test]
    fn cw_derivative_examples() {
        let n = 1.0610e-3;
        let d = cw_derivative(
            &TranslationalState::new(0.0, 3.0, 0.0, 0.0, 0.0, 0.0),
            &Vector3::zeros(),
            n,
            200.0,
        );
        assert_eq!(d.to_array(), [0.0; 6]);
        let d = cw_derivative(
            &TranslationalState::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            &Vector3::zeros(),
            n,
            200.0,
        );
        assert_eq!(d.to_array(), [0.0, 0.0, 0.0, 3.0 * n * n, 0.0, 0.0]);
        let d = cw_derivative(
            &TranslationalState::default(),
            &Vector3::new(0.15, 0.0, 0.0),
            n,
            200.0,
        );
        assert_abs_diff_eq!(d.vx, 7.5e-4, epsilon = 1e-18);
    }

    #[test]
    fn cw_analytic_examples() {
        let n = 1.0610e-3;
        let s0 = TranslationalState::new(1.0, -2.0, 3.0, 0.1, 0.2, -0.3);
        assert_eq!(cw_analytic(&s0, n, 0.0), s0);
        let eq = TranslationalState::new(0.0, 7.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(cw_analytic(&eq, n, 123.0), eq);
        let s = cw_analytic(
            &TranslationalState::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            n,
            std::f64::consts::PI / (2.0 * n),
        );
        assert_abs_diff_eq!(s.z, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.vz, -n, epsilon = 1e-15);
    }

    #[test]
    fn quaternion_derivative_examples() {
        let q = Quaternion::new(0.3, -0.2, 0.5, 0.7);
        assert_eq!(
            quaternion_derivative(&q, &AngularVelocity::default()),
            [0.0; 4]
        );
        let d = quaternion_derivative(
            &Quaternion::identity(),
            &AngularVelocity::new(0.0, 0.052359, 0.0),
        );
        assert_abs_diff_eq!(d[1], 0.0261795, epsilon = 1e-15);
        assert_eq!([d[0], d[2], d[3]], [0.0; 3]);
    }

    #[test]
    fn gyro_derivative_examples() {
        let j = InertiaTensor::new(1000.0, 2000.0, 1000.0).unwrap();
        let d = gyro_derivative(
            &AngularVelocity::new(0.0, 0.052359, 0.0),
            &j,
            &Vector3::zeros(),
        );
        assert_eq!(d, AngularVelocity::default());
        // (0.2*0.3*(2000-1000))/1000, (0.1*0.3*0)/2000, (0.1*0.2*(1000-2000))/1000
        let d = gyro_derivative(&AngularVelocity::new(0.1, 0.2, 0.3), &j, &Vector3::zeros());
        assert_abs_diff_eq!(d.wx, 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(d.wy, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.wz, -0.02, epsilon = 1e-15);
        let j = InertiaTensor::new(2000.0, 5000.0, 2000.0).unwrap();
        let d = gyro_derivative(
            &AngularVelocity::default(),
            &j,
            &Vector3::new(1.0, 0.0, 0.0),
        );
        assert_abs_diff_eq!(d.wx, 5e-4, epsilon = 1e-18);
    }

    #[test]
    fn inertia_validation() {
        assert!(!InertiaTensor::new(1.0, 1.0, 3.0).unwrap().is_physical());
        assert!(!InertiaTensor::new(2000.0, 5000.0, 2000.0)
            .unwrap()
            .is_physical());
        assert!(InertiaTensor::new(1000.0, 2000.0, 1000.0)
            .unwrap()
            .is_physical());
        assert!(InertiaTensor::new(0.0, 1.0, 1.0).is_err());
        assert!(InertiaTensor::new(1.0, 1.0, 2.0).is_ok());
    }

    #[test]
    fn rotation_matrix_examples() {
        assert_eq!(
            rotation_matrix(&Quaternion::identity(), NORM_TOL_STRICT).unwrap(),
            Matrix3::identity()
        );
        let r = rotation_matrix(&Quaternion::new(0.0, 0.0, 1.0, 0.0), NORM_TOL_STRICT).unwrap();
        assert_eq!(r, Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)));
        assert!(rotation_matrix(&Quaternion::new(0.0, 0.0, 0.0, 0.0), NORM_TOL_SOLVER).is_err());
        assert!(
            rotation_matrix(&Quaternion::new(0.0, 0.0, 0.0, 1.0 + 1e-5), NORM_TOL_SOLVER).is_err()
        );
    }

    #[test]
    fn inertial_rate_examples() {
        let n = 1.0610e-3;
        let id = Quaternion::identity();
        let w = inertial_angular_velocity(&id, &AngularVelocity::default(), n, NORM_TOL_STRICT)
            .unwrap();
        assert_eq!(w, Vector3::new(0.0, 0.0, -n));
        let w =
            inertial_angular_velocity(&id, &AngularVelocity::new(0.0, 0.0, n), n, NORM_TOL_STRICT)
                .unwrap();
        assert_eq!(w, Vector3::zeros());
        let flip = Quaternion::new(0.0, 0.0, 1.0, 0.0);
        let w = inertial_angular_velocity(
            &flip,
            &AngularVelocity::new(0.1, 0.2, 0.3),
            n,
            NORM_TOL_STRICT,
        )
        .unwrap();
        assert_abs_diff_eq!(w, Vector3::new(-0.1, -0.2, 0.3 - n), epsilon = 1e-16);
    }

    #[test]
    fn thrust_to_body_examples() {
        let u = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(
            thrust_to_body(&Quaternion::identity(), &u, NORM_TOL_STRICT).unwrap(),
            u
        );
        let b = thrust_to_body(
            &Quaternion::new(0.0, 0.0, 1.0, 0.0),
            &Vector3::x(),
            NORM_TOL_STRICT,
        )
        .unwrap();
        assert_eq!(b, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn full_derivative_examples() {
        let p = flyaround_params();
        let s = StateVector20 {
            trans: TranslationalState::new(0.0, 3.0, 0.0, 0.0, 0.0, 0.0),
            w_s: AngularVelocity::default(),
            w_t: AngularVelocity::new(0.0, 3.0 * DEG_TO_RAD, 0.0),
            q_s: Quaternion::new(0.0, 0.0, 1.0, 0.0),
            q_t: Quaternion::identity(),
        };
        let d = full_derivative(&s, &ControlVector6::zero(), &p);
        for (i, v) in d.iter().enumerate() {
            if i == 17 {
                assert_abs_diff_eq!(*v, 0.0261795, epsilon = 1e-15);
            } else {
                assert_eq!(*v, 0.0, "component {i}");
            }
        }
        let rest = StateVector20::default();
        assert_eq!(
            full_derivative(&rest, &ControlVector6::zero(), &p),
            [0.0; 20]
        );
    }

    #[test]
    fn state_ordering_round_trip() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s = StateVector20::from_slice(&a);
        assert_eq!(s.w_t.wx, 9.0);
        assert_eq!(s.q_s.q1, 12.0);
        assert_eq!(s.to_array().to_vec(), a);
    }

    proptest! {
        #[test]
        fn quaternion_rate_is_orthogonal(q in unit_quat(), w in prop::array::uniform3(-1.0f64..1.0)) {
            let d = quaternion_derivative(&q, &AngularVelocity::new(w[0], w[1], w[2]));
            let dot: f64 = d.iter().zip(q.to_array()).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() <= 1e-14);
        }

        #[test]
        fn rotation_is_orthogonal(q in unit_quat(), v in prop::array::uniform3(-10.0f64..10.0)) {
            let r = rotation_matrix(&q, NORM_TOL_SOLVER).unwrap();
            prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() <= 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
            let v = Vector3::from(v);
            prop_assert!((r.transpose() * (r * v) - v).abs().max() <= 1e-12);
            let b = thrust_to_body(&q, &v, NORM_TOL_SOLVER).unwrap();
            prop_assert!((b.norm() - v.norm()).abs() <= 1e-12);
        }

        #[test]
        fn control_enters_affinely(
            s in prop::array::uniform20(-1.0f64..1.0),
            c in prop::array::uniform6(-1.0f64..1.0),
        ) {
            let p = flyaround_params();
            let s = StateVector20::from_slice(&s);
            let c = ControlVector6::from_slice(&c);
            let f0 = full_derivative(&s, &ControlVector6::zero(), &p);
            let f1 = full_derivative(&s, &c, &p);
            let f2 = full_derivative(&s, &c.scaled(2.0), &p);
            for i in 0..20 {
                prop_assert!(((f2[i] - f1[i]) - (f1[i] - f0[i])).abs() <= 1e-15);
            }
        }
    }
}

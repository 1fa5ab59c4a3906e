//! Slice-based kernels of the 20-state model and its derivatives.
//!
//! The dynamics are at most bilinear in the state, so the Hessian of any
//! multiplier-weighted combination of the right-hand side is a constant
//! matrix that depends only on the weights and the inertia tensors.

use nalgebra::{Matrix3, Vector3};

use super::{BodyParams, InertiaTensor, Quaternion};

pub const NX: usize = 20;
pub const NU: usize = 6;

pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const W_S: usize = 6;
pub const W_T: usize = 9;
pub const Q_S: usize = 12;
pub const Q_T: usize = 16;

pub const THRUST: usize = 0;
pub const TORQUE: usize = 3;

/// `(sign, quaternion index)` such that `q_dot[r] = 1/2 sum_i sign * q[idx] * w[i]`.
const QUAT_RATE_TABLE: [[(f64, usize); 3]; 4] = [
    [(1.0, 3), (-1.0, 2), (1.0, 1)],
    [(1.0, 2), (1.0, 3), (-1.0, 0)],
    [(-1.0, 1), (1.0, 0), (1.0, 3)],
    [(-1.0, 0), (-1.0, 1), (-1.0, 2)],
];

/// Right-hand side `f(x, u)`.
pub fn derivative(x: &[f64], u: &[f64], p: &BodyParams, out: &mut [f64]) {
    let n = p.mean_motion;
    out[0] = x[3];
    out[1] = x[4];
    out[2] = x[5];
    out[3] = 2.0 * n * x[4] + 3.0 * n * n * x[0] + u[0] / p.mass;
    out[4] = -2.0 * n * x[3] + u[1] / p.mass;
    out[5] = -n * n * x[2] + u[2] / p.mass;
    gyro(
        &x[W_S..W_S + 3],
        &p.inertia_s,
        &u[TORQUE..TORQUE + 3],
        &mut out[W_S..W_S + 3],
    );
    gyro(
        &x[W_T..W_T + 3],
        &p.inertia_t,
        &[0.0; 3],
        &mut out[W_T..W_T + 3],
    );
    quat_rate(&x[Q_S..Q_S + 4], &x[W_S..W_S + 3], &mut out[Q_S..Q_S + 4]);
    quat_rate(&x[Q_T..Q_T + 4], &x[W_T..W_T + 3], &mut out[Q_T..Q_T + 4]);
}

fn gyro(w: &[f64], j: &InertiaTensor, m: &[f64], out: &mut [f64]) {
    out[0] = (w[1] * w[2] * (j.jyy() - j.jzz()) + m[0]) / j.jxx();
    out[1] = (w[0] * w[2] * (j.jzz() - j.jxx()) + m[1]) / j.jyy();
    out[2] = (w[0] * w[1] * (j.jxx() - j.jyy()) + m[2]) / j.jzz();
}

fn quat_rate(q: &[f64], w: &[f64], out: &mut [f64]) {
    for (r, row) in QUAT_RATE_TABLE.iter().enumerate() {
        out[r] = 0.5
            * row
                .iter()
                .zip(w)
                .map(|(&(s, k), wi)| s * q[k] * wi)
                .sum::<f64>();
    }
}

/// Dense state Jacobian `df/dx` (row-major, 20x20).
pub type StateJacobian = [[f64; NX]; NX];

pub fn state_jacobian(x: &[f64], p: &BodyParams) -> StateJacobian {
    let n = p.mean_motion;
    let mut a = [[0.0; NX]; NX];
    a[0][3] = 1.0;
    a[1][4] = 1.0;
    a[2][5] = 1.0;
    a[3][0] = 3.0 * n * n;
    a[3][4] = 2.0 * n;
    a[4][3] = -2.0 * n;
    a[5][2] = -n * n;
    gyro_jacobian(&x[W_S..W_S + 3], &p.inertia_s, W_S, &mut a);
    gyro_jacobian(&x[W_T..W_T + 3], &p.inertia_t, W_T, &mut a);
    quat_jacobian(&x[Q_S..Q_S + 4], &x[W_S..W_S + 3], Q_S, W_S, &mut a);
    quat_jacobian(&x[Q_T..Q_T + 4], &x[W_T..W_T + 3], Q_T, W_T, &mut a);
    a
}

/// Jacobian of `1/2 Omega(dw) dq` for both bodies with respect to the
/// difference `d = x_a - x_b` of two states. The transcription adds
/// `dt/4` times this term to the quaternion rows of the trapezoidal defect,
/// which turns each quaternion step into an exact rotation.
pub fn kinematic_jacobian(d: &[f64]) -> StateJacobian {
    let mut a = [[0.0; NX]; NX];
    quat_jacobian(&d[Q_S..Q_S + 4], &d[W_S..W_S + 3], Q_S, W_S, &mut a);
    quat_jacobian(&d[Q_T..Q_T + 4], &d[W_T..W_T + 3], Q_T, W_T, &mut a);
    a
}

/// `1/2 Omega(dw) dq` for both bodies, zero outside the quaternion rows.
pub fn kinematic_term(d: &[f64]) -> [f64; NX] {
    let mut out = [0.0; NX];
    quat_rate(&d[Q_S..Q_S + 4], &d[W_S..W_S + 3], &mut out[Q_S..Q_S + 4]);
    quat_rate(&d[Q_T..Q_T + 4], &d[W_T..W_T + 3], &mut out[Q_T..Q_T + 4]);
    out
}

fn gyro_jacobian(w: &[f64], j: &InertiaTensor, o: usize, a: &mut StateJacobian) {
    let (cx, cy, cz) = gyro_coefficients(j);
    a[o][o + 1] = w[2] * cx;
    a[o][o + 2] = w[1] * cx;
    a[o + 1][o] = w[2] * cy;
    a[o + 1][o + 2] = w[0] * cy;
    a[o + 2][o] = w[1] * cz;
    a[o + 2][o + 1] = w[0] * cz;
}

fn gyro_coefficients(j: &InertiaTensor) -> (f64, f64, f64) {
    (
        (j.jyy() - j.jzz()) / j.jxx(),
        (j.jzz() - j.jxx()) / j.jyy(),
        (j.jxx() - j.jyy()) / j.jzz(),
    )
}

fn quat_jacobian(q: &[f64], w: &[f64], qo: usize, wo: usize, a: &mut StateJacobian) {
    for (r, row) in QUAT_RATE_TABLE.iter().enumerate() {
        for (i, &(s, k)) in row.iter().enumerate() {
            a[qo + r][wo + i] += 0.5 * s * q[k];
            a[qo + r][qo + k] += 0.5 * s * w[i];
        }
    }
}

/// Nonzeros of `df/dx` that can ever be structurally nonzero.
pub fn state_jacobian_pattern() -> Vec<(usize, usize)> {
    let mut pat = vec![(0, 3), (1, 4), (2, 5), (3, 0), (3, 4), (4, 3), (5, 2)];
    for o in [W_S, W_T] {
        pat.extend([
            (o, o + 1),
            (o, o + 2),
            (o + 1, o),
            (o + 1, o + 2),
            (o + 2, o),
            (o + 2, o + 1),
        ]);
    }
    for (qo, wo) in [(Q_S, W_S), (Q_T, W_T)] {
        for r in 0..4 {
            for i in 0..3 {
                pat.push((qo + r, wo + i));
            }
            for k in 0..4 {
                if k != r {
                    pat.push((qo + r, qo + k));
                }
            }
        }
    }
    pat
}

/// Nonzeros of the constant control Jacobian `df/du` as `(row, col, value)`.
pub fn control_jacobian(p: &BodyParams) -> [(usize, usize, f64); 6] {
    let j = &p.inertia_s;
    [
        (VEL, THRUST, 1.0 / p.mass),
        (VEL + 1, THRUST + 1, 1.0 / p.mass),
        (VEL + 2, THRUST + 2, 1.0 / p.mass),
        (W_S, TORQUE, 1.0 / j.jxx()),
        (W_S + 1, TORQUE + 1, 1.0 / j.jyy()),
        (W_S + 2, TORQUE + 2, 1.0 / j.jzz()),
    ]
}

/// Lower-triangular entries `(row, col, value)` of `sum_i lambda_i d2 f_i / dx2`.
pub fn weighted_hessian(lambda: &[f64], p: &BodyParams) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(30);
    for (o, j) in [(W_S, &p.inertia_s), (W_T, &p.inertia_t)] {
        let (cx, cy, cz) = gyro_coefficients(j);
        out.push((o + 2, o + 1, lambda[o] * cx));
        out.push((o + 2, o, lambda[o + 1] * cy));
        out.push((o + 1, o, lambda[o + 2] * cz));
    }
    for (qo, wo) in [(Q_S, W_S), (Q_T, W_T)] {
        let mut block = [[0.0; 3]; 4];
        for (r, row) in QUAT_RATE_TABLE.iter().enumerate() {
            for (i, &(s, k)) in row.iter().enumerate() {
                block[k][i] += 0.5 * s * lambda[qo + r];
            }
        }
        for (k, row) in block.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                out.push((qo + k, wo + i, *v));
            }
        }
    }
    out
}

/// Lower-triangular pattern matching [`weighted_hessian`].
pub fn weighted_hessian_pattern() -> Vec<(usize, usize)> {
    let dummy = BodyParams {
        mass: 1.0,
        inertia_s: InertiaTensor::new(1.0, 1.0, 1.0).unwrap(),
        inertia_t: InertiaTensor::new(1.0, 1.0, 1.0).unwrap(),
        mean_motion: 1.0,
    };
    weighted_hessian(&[0.0; NX], &dummy)
        .into_iter()
        .map(|(r, c, _)| (r, c))
        .collect()
}

/// Partial derivatives `dR/dq_j` of the direction cosine matrix.
pub fn rotation_partials(q: &Quaternion) -> [Matrix3<f64>; 4] {
    let Quaternion { q1, q2, q3, q4 } = *q;
    let t = 2.0;
    [
        Matrix3::new(
            t * q1,
            t * q2,
            t * q3,
            t * q2,
            -t * q1,
            t * q4,
            t * q3,
            -t * q4,
            -t * q1,
        ),
        Matrix3::new(
            -t * q2,
            t * q1,
            -t * q4,
            t * q1,
            t * q2,
            t * q3,
            t * q4,
            t * q3,
            -t * q2,
        ),
        Matrix3::new(
            -t * q3,
            t * q4,
            t * q1,
            -t * q4,
            -t * q3,
            t * q2,
            t * q1,
            t * q2,
            t * q3,
        ),
        Matrix3::new(
            t * q4,
            t * q3,
            -t * q2,
            -t * q3,
            t * q4,
            t * q1,
            t * q2,
            -t * q1,
            t * q4,
        ),
    ]
}

pub fn vec3(s: &[f64]) -> Vector3<f64> {
    Vector3::new(s[0], s[1], s[2])
}

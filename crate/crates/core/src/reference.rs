//! Adaptive Dormand-Prince 5(4) integrator.
//!
//! Serves as the high-accuracy reference for verification and for building
//! initial guesses. It is never used inside the optimizer.

use crate::error::{domain, Result};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_steps: 1_000_000,
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` and records the state at each of the
/// increasing `outputs` times (each must be `>= t0`).
pub fn integrate<F>(
    f: F,
    t0: f64,
    y0: &[f64],
    outputs: &[f64],
    tol: Tolerances,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut y5 = vec![0.0; dim];
    let mut h = 0.0;
    let mut steps = 0usize;
    let mut result = Vec::with_capacity(outputs.len());

    f(t, &y, &mut k[0]);
    for &t_out in outputs {
        if t_out < t {
            return domain(format!("output time {t_out} precedes current time {t}"));
        }
        if h == 0.0 {
            h = initial_step(&y, &k[0], (t_out - t).abs(), tol);
        }
        while t < t_out {
            steps += 1;
            if steps > tol.max_steps {
                return domain("reference integrator exceeded its step budget");
            }
            let last = t + h >= t_out;
            let step = if last { t_out - t } else { h };
            for s in 1..7 {
                for i in 0..dim {
                    stage[i] = y[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
                }
                f(t + C[s] * step, &stage, &mut k[s]);
            }
            let mut err: f64 = 0.0;
            for i in 0..dim {
                y5[i] = y[i] + step * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>();
                let y4 = y[i] + step * (0..7).map(|j| B4[j] * k[j][i]).sum::<f64>();
                let sc = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
                err = err.max(((y5[i] - y4) / sc).abs());
            }
            if err <= 1.0 {
                t = if last { t_out } else { t + step };
                y.copy_from_slice(&y5);
                // FSAL: the last stage is f at the new point.
                let k6 = k[6].clone();
                k[0].copy_from_slice(&k6);
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            let proposal = step * factor;
            if !(err <= 1.0 && last) {
                h = proposal;
            }
            if !h.is_finite() || h <= 1e-14 * t.abs().max(1.0) {
                return domain("reference integrator step size underflow");
            }
        }
        result.push(y.clone());
    }
    Ok(result)
}

fn initial_step(y: &[f64], dy: &[f64], span: f64, tol: Tolerances) -> f64 {
    let d0 = y
        .iter()
        .map(|v| (v / (tol.atol + tol.rtol * v.abs())).powi(2))
        .sum::<f64>()
        .sqrt();
    let d1 = y
        .iter()
        .zip(dy)
        .map(|(v, d)| (d / (tol.atol + tol.rtol * v.abs())).powi(2))
        .sum::<f64>()
        .sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-3
    } else {
        0.01 * d0 / d1
    };
    h.min(span.max(1e-6))
}

use serde::{Deserialize, Serialize};

use super::{Multipliers, NlpProblem};

/// First-order optimality residuals, each an infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    /// `|grad L|_inf / (1 + |multipliers|_inf)`.
    pub stationarity: f64,
    pub feasibility_eq: f64,
    /// Largest violation of `c_I >= 0` or of the variable bounds.
    pub feasibility_ineq: f64,
    /// Largest `|multiplier * gap|`, including any sign violation of the
    /// inequality and bound multipliers.
    pub complementarity: f64,
}

impl KktResidual {
    pub fn satisfies(&self, kkt_tol: f64, feasibility_tol: f64) -> bool {
        self.stationarity <= kkt_tol
            && self.feasibility_eq <= feasibility_tol
            && self.feasibility_ineq <= feasibility_tol
            && self.complementarity <= kkt_tol
    }
}

/// Evaluates the residuals of `(z, multipliers)` from scratch.
pub fn kkt_residual(p: &dyn NlpProblem, z: &[f64], mult: &Multipliers) -> KktResidual {
    let n = p.num_vars();
    let (me, mi) = (p.num_eq(), p.num_ineq());
    assert_eq!(z.len(), n, "point has wrong dimension");
    assert_eq!(mult.eq.len(), me);
    assert_eq!(mult.ineq.len(), mi);
    assert_eq!(mult.lower.len(), n);
    assert_eq!(mult.upper.len(), n);

    let mut grad = vec![0.0; n];
    p.gradient(z, &mut grad);
    let mut c = vec![0.0; me + mi];
    p.constraints(z, &mut c);
    let structure = p.jacobian_structure();
    let mut jac = vec![0.0; structure.len()];
    p.jacobian_values(z, &mut jac);

    let y: Vec<f64> = mult.eq.iter().chain(&mult.ineq).copied().collect();
    for (&(row, col), v) in structure.iter().zip(&jac) {
        grad[col] -= v * y[row];
    }
    for i in 0..n {
        grad[i] += mult.upper[i] - mult.lower[i];
    }
    let scale = 1.0 + mult.max_abs();
    let stationarity = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / scale;

    let feasibility_eq = c[..me].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (lb, ub) = p.bounds();
    let mut feasibility_ineq = c[me..].iter().fold(0.0f64, |m, v| m.max(-v));
    let mut complementarity = 0.0f64;
    for (ci, yi) in c[me..].iter().zip(&mult.ineq) {
        complementarity = complementarity.max((ci * yi).abs()).max(-yi);
    }
    for i in 0..n {
        if lb[i].is_finite() {
            feasibility_ineq = feasibility_ineq.max(lb[i] - z[i]);
            complementarity = complementarity
                .max(((z[i] - lb[i]) * mult.lower[i]).abs())
                .max(-mult.lower[i]);
        } else {
            complementarity = complementarity.max(mult.lower[i].abs());
        }
        if ub[i].is_finite() {
            feasibility_ineq = feasibility_ineq.max(z[i] - ub[i]);
            complementarity = complementarity
                .max(((ub[i] - z[i]) * mult.upper[i]).abs())
                .max(-mult.upper[i]);
        } else {
            complementarity = complementarity.max(mult.upper[i].abs());
        }
    }
    KktResidual {
        stationarity,
        feasibility_eq,
        feasibility_ineq: feasibility_ineq.max(0.0),
        complementarity,
    }
}

use serde::{Deserialize, Serialize};

use super::NlpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeLocation {
    Objective { var: usize },
    Constraint { row: usize, var: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    /// Worst `|analytic - fd| / max(1, |fd|)` over the gradient and the full
    /// dense Jacobian (entries outside the sparsity pattern count as zero).
    pub max_rel_error: f64,
    pub location: DerivativeLocation,
    pub analytic: f64,
    pub finite_difference: f64,
}

/// Compares analytic first derivatives with central differences using the
/// step `h * max(1, |z_j|)` for component `j`.
pub fn derivative_check(p: &dyn NlpProblem, z: &[f64], h: f64) -> DerivativeCheck {
    let n = p.num_vars();
    let m = p.num_cons();
    let mut grad = vec![0.0; n];
    p.gradient(z, &mut grad);
    let structure = p.jacobian_structure();
    let mut jac = vec![0.0; structure.len()];
    p.jacobian_values(z, &mut jac);

    // column-wise view of the analytic Jacobian
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(row, col), v) in structure.iter().zip(&jac) {
        by_col[col].push((row, *v));
    }

    let mut worst = DerivativeCheck {
        max_rel_error: 0.0,
        location: DerivativeLocation::Objective { var: 0 },
        analytic: 0.0,
        finite_difference: 0.0,
    };
    let mut consider = |err: f64, loc: DerivativeLocation, a: f64, fd: f64| {
        if err > worst.max_rel_error || err.is_nan() {
            worst = DerivativeCheck {
                max_rel_error: err,
                location: loc,
                analytic: a,
                finite_difference: fd,
            };
        }
    };

    let mut zp = z.to_vec();
    let mut cp = vec![0.0; m];
    let mut cm = vec![0.0; m];
    let mut dense_col = vec![0.0; m];
    for j in 0..n {
        let step = h * z[j].abs().max(1.0);
        zp[j] = z[j] + step;
        let fp = p.objective(&zp);
        p.constraints(&zp, &mut cp);
        zp[j] = z[j] - step;
        let fm = p.objective(&zp);
        p.constraints(&zp, &mut cm);
        zp[j] = z[j];
        let width = 2.0 * step;

        let fd = (fp - fm) / width;
        consider(
            (grad[j] - fd).abs() / fd.abs().max(1.0),
            DerivativeLocation::Objective { var: j },
            grad[j],
            fd,
        );

        dense_col.iter_mut().for_each(|v| *v = 0.0);
        for &(row, v) in &by_col[j] {
            dense_col[row] += v;
        }
        for row in 0..m {
            let fd = (cp[row] - cm[row]) / width;
            let a = dense_col[row];
            consider(
                (a - fd).abs() / fd.abs().max(1.0),
                DerivativeLocation::Constraint { row, var: j },
                a,
                fd,
            );
        }
    }
    worst
}

//! Small problems with known solutions, used to check a solver.

use super::NlpProblem;

/// minimize z^2 subject to z >= 1 (as a general inequality)
pub struct SquareAboveOne;

impl NlpProblem for SquareAboveOne {
    fn num_vars(&self) -> usize {
        1
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY], vec![f64::INFINITY])
    }
    fn objective(&self, z: &[f64]) -> f64 {
        z[0] * z[0]
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * z[0];
    }
    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        c[0] = z[0] - 1.0;
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0)]
    }
    fn jacobian_values(&self, _z: &[f64], v: &mut [f64]) {
        v[0] = 1.0;
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0)]
    }
    fn hessian_values(&self, _z: &[f64], obj_factor: f64, _l: &[f64], v: &mut [f64]) {
        v[0] = 2.0 * obj_factor;
    }
}

/// minimize (z1 - 1)^2 + (z2 - 2)^2 subject to z1 + z2 = 1
pub struct ProjectOntoLine;

impl NlpProblem for ProjectOntoLine {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2])
    }
    fn objective(&self, z: &[f64]) -> f64 {
        (z[0] - 1.0).powi(2) + (z[1] - 2.0).powi(2)
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * (z[0] - 1.0);
        g[1] = 2.0 * (z[1] - 2.0);
    }
    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        c[0] = z[0] + z[1] - 1.0;
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1)]
    }
    fn jacobian_values(&self, _z: &[f64], v: &mut [f64]) {
        v[0] = 1.0;
        v[1] = 1.0;
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (1, 1)]
    }
    fn hessian_values(&self, _z: &[f64], obj_factor: f64, _l: &[f64], v: &mut [f64]) {
        v[0] = 2.0 * obj_factor;
        v[1] = 2.0 * obj_factor;
    }
}

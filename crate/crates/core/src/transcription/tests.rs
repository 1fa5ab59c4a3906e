use super::*;
use crate::dynamics::{cw_analytic, TranslationalState};
use crate::solver::derivative_check;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLYAROUND: &str = include_str!("../../../../scenarios/flyaround.scenario");

fn scenario() -> ScenarioConfig {
    ScenarioConfig::from_toml(FLYAROUND, "flyaround").unwrap()
}

/// A generic point: every variable away from zero, quaternions off the unit
/// sphere, `t_f` inside its bounds.
fn random_point(nlp: &TranscribedNlp, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..nlp.num_vars())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    z[nlp.layout.tf()] = rng.gen_range(100.0..500.0) / TF_SCALE;
    z
}

#[test]
fn counts_for_the_flyaround_grid() {
    let nlp = transcribe(&scenario(), 370).unwrap();
    assert_eq!(nlp.num_vars(), 26 * 371 + 1);
    assert_eq!(nlp.num_eq(), 20 + 20 * 370 + 13);
    assert_eq!(nlp.num_ineq(), 2 * 371);
}

#[test]
fn counts_for_the_smallest_grid() {
    let nlp = transcribe(&scenario(), 2).unwrap();
    assert_eq!(nlp.num_vars(), 79);
    assert_eq!(nlp.num_eq(), 73);
    assert_eq!(nlp.num_ineq(), 6);
    let mut s = scenario();
    s.collision_constraint = false;
    assert_eq!(transcribe(&s, 2).unwrap().num_ineq(), 3);
}

#[test]
fn too_few_steps_is_a_domain_error() {
    assert!(matches!(
        transcribe(&scenario(), 1),
        Err(crate::DockingError::Domain(_))
    ));
    assert!(matches!(
        transcribe(&scenario(), 0),
        Err(crate::DockingError::Domain(_))
    ));
}

#[test]
fn defect_vanishes_at_an_equilibrium() {
    let p = scenario().params;
    let mut x = StateVector20::from_slice(&[0.0; 20]);
    x.q_s = Quaternion::unit(0.0, 0.0, 0.0, 1.0).unwrap();
    x.q_t = x.q_s;
    let u = ControlVector6::zero();
    let d = trapezoidal_defect(&x, &x, &u, &u, 1.0, &p).unwrap();
    assert!(d.iter().all(|v| *v == 0.0), "{d:?}");
}

#[test]
fn defect_is_small_on_the_exact_cw_solution() {
    let p = scenario().params;
    let n = p.mean_motion;
    let s0 = TranslationalState::new(0.0, 3.0, 0.0, 0.01, 0.0, 0.0);
    let s1 = cw_analytic(&s0, n, 1.0);
    let mut a = StateVector20::from_slice(&[0.0; 20]);
    a.q_s = Quaternion::unit(0.0, 0.0, 0.0, 1.0).unwrap();
    a.q_t = a.q_s;
    let mut b = a;
    a.trans = s0;
    b.trans = s1;
    let u = ControlVector6::zero();
    let d = trapezoidal_defect(&a, &b, &u, &u, 1.0, &p).unwrap();
    assert!(d.iter().all(|v| v.abs() <= 1e-8), "{d:?}");
}

#[test]
fn defect_on_exact_solution_is_third_order() {
    let p = scenario().params;
    let n = p.mean_motion;
    let s0 = TranslationalState::new(1.0, 3.0, -0.5, 0.02, -0.01, 0.03);
    let defect = |dt: f64| {
        let mut a = StateVector20::from_slice(&[0.0; 20]);
        a.q_s = Quaternion::unit(0.0, 0.0, 0.0, 1.0).unwrap();
        a.q_t = a.q_s;
        let mut b = a;
        a.trans = s0;
        b.trans = cw_analytic(&s0, n, dt);
        let u = ControlVector6::zero();
        let d = trapezoidal_defect(&a, &b, &u, &u, dt, &p).unwrap();
        d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let ratio = defect(20.0) / defect(10.0);
    assert!((ratio - 8.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn nonpositive_step_is_rejected() {
    let p = scenario().params;
    let x = scenario().initial;
    let u = ControlVector6::zero();
    assert!(trapezoidal_defect(&x, &x, &u, &u, 0.0, &p).is_err());
    assert!(trapezoidal_defect(&x, &x, &u, &u, -1.0, &p).is_err());
}

#[test]
fn first_derivatives_match_finite_differences() {
    let nlp = transcribe(&scenario(), 3).unwrap();
    for seed in 0..3 {
        let z = random_point(&nlp, seed);
        let check = derivative_check(&nlp, &z, 1e-6);
        assert!(check.max_rel_error <= 1e-6, "{check:?}");
    }
}

#[test]
fn first_derivatives_without_collision_rows() {
    let mut s = scenario();
    s.collision_constraint = false;
    s.safety_margin = 0.3;
    let nlp = transcribe(&s, 2).unwrap();
    let check = derivative_check(&nlp, &random_point(&nlp, 9), 1e-6);
    assert!(check.max_rel_error <= 1e-6, "{check:?}");
}

/// Gradient of the Lagrangian `s f + lambda . c` from the analytic first
/// derivatives.
fn lagrangian_gradient(nlp: &TranscribedNlp, z: &[f64], s: f64, lambda: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; nlp.num_vars()];
    nlp.gradient(z, &mut g);
    g.iter_mut().for_each(|v| *v *= s);
    let structure = nlp.jacobian_structure();
    let mut vals = vec![0.0; structure.len()];
    nlp.jacobian_values(z, &mut vals);
    for (&(r, c), v) in structure.iter().zip(&vals) {
        g[c] += lambda[r] * v;
    }
    g
}

#[test]
fn hessian_matches_finite_differences_of_the_gradient() {
    let nlp = transcribe(&scenario(), 2).unwrap();
    let n = nlp.num_vars();
    let z = random_point(&nlp, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let lambda: Vec<f64> = (0..nlp.num_cons())
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    let s = 0.7;

    let mut dense = vec![vec![0.0; n]; n];
    let structure = nlp.hessian_structure();
    let mut vals = vec![0.0; structure.len()];
    nlp.hessian_values(&z, s, &lambda, &mut vals);
    for (&(r, c), v) in structure.iter().zip(&vals) {
        assert!(r >= c, "entry ({r}, {c}) above the diagonal");
        dense[r][c] += v;
        if r != c {
            dense[c][r] += v;
        }
    }

    let mut zp = z.clone();
    for j in 0..n {
        let h = 1e-6 * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let gp = lagrangian_gradient(&nlp, &zp, s, &lambda);
        zp[j] = z[j] - h;
        let gm = lagrangian_gradient(&nlp, &zp, s, &lambda);
        zp[j] = z[j];
        for i in 0..n {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            let err = (dense[i][j] - fd).abs() / fd.abs().max(1.0);
            assert!(
                err <= 1e-5,
                "H[{i}][{j}] = {} but fd gives {fd}",
                dense[i][j]
            );
        }
    }
}

#[test]
fn structure_is_stable_across_points() {
    let nlp = transcribe(&scenario(), 4).unwrap();
    let z = random_point(&nlp, 1);
    let mut vals = vec![0.0; nlp.jacobian_structure().len()];
    nlp.jacobian_values(&z, &mut vals);
    assert!(vals.iter().all(|v| v.is_finite()));
    // the stored structure is what a fresh evaluation produces
    let mut entries = Vec::new();
    nlp.jacobian_entries(&z, &mut entries);
    let fresh: Vec<_> = entries.iter().map(|&(r, c, _)| (r, c)).collect();
    assert_eq!(fresh, nlp.jacobian_structure());
}

#[test]
fn final_time_chain_rule() {
    let nlp = transcribe(&scenario(), 5).unwrap();
    let mut z = random_point(&nlp, 2);
    z[nlp.layout.tf()] = 400.0 / TF_SCALE;
    let mut g = vec![0.0; nlp.num_vars()];
    nlp.gradient(&z, &mut g);
    let run = nlp.running_sum(&z);
    let expected = TF_SCALE * (1.0 + run / 5.0);
    assert!((g[nlp.layout.tf()] - expected).abs() <= 1e-12 * expected);
    assert_eq!(nlp.final_time(&z), 400.0);
    assert_eq!(nlp.dt(&z), 80.0);
}

#[test]
fn objective_is_left_rectangle_quadrature() {
    let nlp = transcribe(&scenario(), 4).unwrap();
    let mut states = vec![scenario().initial; 5];
    states[2].trans.x = 1.0;
    let controls: Vec<_> = (0..5)
        .map(|k| ControlVector6::new(k as f64, 0.0, 0.0, 0.0, 0.5, 0.0))
        .collect();
    let z = pack(&states, &controls, 40.0).unwrap();
    // dt = 10, sum over k < 4 of (k^2 + 0.25)
    let expected = 40.0 + 10.0 * (0.0 + 1.0 + 4.0 + 9.0 + 4.0 * 0.25);
    assert!((nlp.objective(&z) - expected).abs() < 1e-12);
}

#[test]
fn bounds_cover_torque_and_final_time_only() {
    let nlp = transcribe(&scenario(), 3).unwrap();
    let (lb, ub) = nlp.bounds();
    let l = nlp.layout;
    for k in 0..4 {
        for i in 0..3 {
            assert_eq!(ub[l.control(k) + TORQUE + i], 1.0);
            assert_eq!(lb[l.control(k) + TORQUE + i], -1.0);
            assert!(ub[l.control(k) + THRUST + i].is_infinite());
        }
    }
    assert_eq!(lb[l.tf()] * TF_SCALE, 10.0);
    assert_eq!(ub[l.tf()] * TF_SCALE, 2000.0);
    assert_eq!(lb.iter().filter(|v| v.is_finite()).count(), 13);
}

#[test]
fn margins_at_the_docking_node_ignore_the_safety_margin() {
    let mut s = scenario();
    s.safety_margin = 0.5;
    let nlp = transcribe(&s, 2).unwrap();
    let mut states = vec![s.initial; 3];
    for st in &mut states {
        st.trans = TranslationalState::new(0.0, 2.0, 0.0, 0.0, 0.0, 0.0);
    }
    let z = pack(&states, &vec![ControlVector6::zero(); 3], 100.0).unwrap();
    let mut c = vec![0.0; nlp.num_cons()];
    nlp.constraints(&z, &mut c);
    let me = nlp.num_eq();
    assert!((c[me] - (4.0 - 2.5 * 2.5)).abs() < 1e-12);
    assert!((c[me + 1] - (4.0 - 2.5 * 2.5)).abs() < 1e-12);
    // the docking node uses the bare radius, shrunk by the relative slack
    assert!((nlp.keep_out_final - 2.0 * (1.0 - DOCKING_SLACK)).abs() < 1e-15);
    assert!((c[me + 2] - (4.0 - nlp.keep_out_final.powi(2))).abs() < 1e-15);
    assert!(c[me + 2] > 0.0 && c[me + 2] <= 8.0 * DOCKING_SLACK);
    assert_eq!(c[me + 3], 0.15);
}

#[test]
fn stages_follow_the_grid() {
    let nlp = transcribe(&scenario(), 3).unwrap();
    let (var, con) = nlp.elimination_stages().unwrap();
    assert_eq!(var.len(), nlp.num_vars());
    assert_eq!(con.len(), nlp.num_cons());
    // every Jacobian entry couples a row to a variable of the same or the
    // neighbouring stage, or to the border
    let border = *var.iter().max().unwrap();
    for (r, c) in nlp.jacobian_structure() {
        let (a, b) = (con[r], var[c]);
        assert!(
            b == border || a.abs_diff(b) <= 1,
            "row {r} stage {a}, var {c} stage {b}"
        );
    }
    for (r, c) in nlp.hessian_structure() {
        let (a, b) = (var[r], var[c]);
        assert!(a == border || b == border || a.abs_diff(b) <= 1);
    }
}

#[test]
fn initial_guess_is_consistent_at_both_ends() {
    let s = scenario();
    let nlp = transcribe(&s, 400).unwrap();
    let z = initial_guess(&s, 400).unwrap();
    assert_eq!(z.len(), nlp.num_vars());
    let (states, controls, tf) = unpack(&z).unwrap();
    assert_eq!(tf, s.tf_guess);
    assert_eq!(states[0], s.initial);
    assert!(controls.iter().all(|c| *c == ControlVector6::zero()));
    let mut c = vec![0.0; nlp.num_cons()];
    nlp.constraints(&z, &mut c);
    assert!(c[..20].iter().all(|v| *v == 0.0));
    let t = nlp.layout.terminal_row();
    assert!(
        c[t..t + TERMINAL_ROWS].iter().all(|v| v.abs() < 1e-12),
        "{:?}",
        &c[t..t + 13]
    );
    for st in &states {
        assert!(st.quaternion_drift() < 1e-12);
    }
    // the target block obeys its torque-free motion: defects of its rows are
    // discretization errors only, O(dt^3) with dt = 1 s
    for k in 0..400 {
        let row = nlp.layout.defect_row(k);
        for i in (W_T..W_T + 3).chain(Q_T..Q_T + 4) {
            assert!(c[row + i].abs() < 1e-5, "node {k} row {i}: {}", c[row + i]);
        }
    }
}

#[test]
fn initial_guess_needs_two_steps() {
    assert!(initial_guess(&scenario(), 1).is_err());
}

#[test]
fn unpack_rejects_bad_lengths() {
    assert!(unpack(&[0.0; 10]).is_err());
    assert!(unpack(&[0.0; 26 * 2 + 1]).is_err());
    assert!(unpack(&[0.0; 26 * 3 + 1]).is_ok());
    assert!(pack(&[scenario().initial; 3], &[ControlVector6::zero(); 2], 1.0).is_err());
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(
        steps in 2usize..6,
        seed in any::<u64>(),
        tf in 10.0f64..2000.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<_> = (0..=steps)
            .map(|_| StateVector20::from_slice(&(0..20).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>()))
            .collect();
        let controls: Vec<_> = (0..=steps)
            .map(|_| ControlVector6::from_slice(&(0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let z = pack(&states, &controls, tf).unwrap();
        let (s2, c2, tf2) = unpack(&z).unwrap();
        prop_assert_eq!(s2, states);
        prop_assert_eq!(c2, controls);
        prop_assert_eq!(tf2, tf);
    }

    #[test]
    fn terminal_residual_matches_checked_version_on_unit_quaternions(
        q in prop::array::uniform4(-1.0f64..1.0),
        w in prop::array::uniform3(-0.1f64..0.1),
        r in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 0.1);
        let s = scenario();
        let mut x = s.initial;
        x.q_s = Quaternion::from_slice(&q).normalized().unwrap();
        x.w_s = AngularVelocity::new(w[0], w[1], w[2]);
        x.trans = TranslationalState::new(r[0], r[1], r[2], 0.01, 0.02, -0.01);
        let n = s.params.mean_motion;
        let res = terminal_residual(&x.to_array(), &s.geometry, n);
        let pos = crate::constraints_cost::docking_position_residual(&x, &s.geometry).unwrap();
        let vel = crate::constraints_cost::docking_velocity_residual(&x, &s.geometry, n).unwrap();
        for i in 0..3 {
            prop_assert!((res[7 + i] - pos[i]).abs() < 1e-12);
            prop_assert!((res[10 + i] - vel[i]).abs() < 1e-12);
        }
    }
}

use super::*;
use crate::dynamics::{rotation_matrix, thrust_to_body, NORM_TOL_STRICT};
use crate::transcription::{initial_guess, unpack};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

const FLYAROUND: &str = include_str!("../../../../scenarios/flyaround.scenario");

fn scenario() -> ScenarioConfig {
    ScenarioConfig::from_toml(FLYAROUND, "flyaround").unwrap()
}

fn guess_trajectory(steps: usize) -> SolutionTrajectory {
    let s = scenario();
    let (states, controls, t_f) = unpack(&initial_guess(&s, steps).unwrap()).unwrap();
    SolutionTrajectory::new(&s, states, controls, t_f).unwrap()
}

fn unit_quaternion() -> impl Strategy<Value = Quaternion> {
    prop::array::uniform4(-1.0..1.0f64)
        .prop_filter("away from zero", |v| {
            v.iter().map(|a| a * a).sum::<f64>() > 1e-2
        })
        .prop_map(|v| Quaternion::from_slice(&v).normalized().unwrap())
}

fn same_rotation(a: &Quaternion, b: &Quaternion) -> f64 {
    let dot: f64 = a
        .to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| x * y)
        .sum();
    1.0 - dot.abs()
}

#[test]
fn identity_has_zero_angles() {
    let e = euler_yxz(&Quaternion::identity()).unwrap();
    assert_eq!((e.phi, e.theta, e.psi, e.gimbal), (0.0, 0.0, 0.0, false));
}

#[test]
fn single_axis_rotations() {
    let half = 0.3f64;
    // frame rotation about y by phi = 2 * half
    let qy = Quaternion::new(0.0, half.sin(), 0.0, half.cos());
    let e = euler_yxz(&qy).unwrap();
    assert_abs_diff_eq!(e.phi, 2.0 * half, epsilon = 1e-14);
    assert_abs_diff_eq!(e.theta, 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(e.psi, 0.0, epsilon = 1e-14);
    let qz = Quaternion::new(0.0, 0.0, half.sin(), half.cos());
    let e = euler_yxz(&qz).unwrap();
    assert_abs_diff_eq!(e.psi, 2.0 * half, epsilon = 1e-14);
    assert_abs_diff_eq!(e.phi, 0.0, epsilon = 1e-14);
}

#[test]
fn gimbal_lock_sets_psi_to_zero() {
    let e = EulerYxz {
        phi: 0.4,
        theta: FRAC_PI_2,
        psi: 0.7,
        gimbal: false,
    };
    let q = quaternion_from_euler_yxz(&e);
    let back = euler_yxz(&q).unwrap();
    assert!(back.gimbal);
    assert_eq!(back.psi, 0.0);
    assert_abs_diff_eq!(back.theta, FRAC_PI_2, epsilon = 1e-7);
    // the recovered angles still describe the same rotation
    assert!(same_rotation(&quaternion_from_euler_yxz(&back), &q) < 1e-12);
}

#[test]
fn negative_scalar_part_gives_the_same_angles() {
    let q = Quaternion::new(0.1, -0.5, 0.3, 0.6).normalized().unwrap();
    let neg = Quaternion::new(-q.q1, -q.q2, -q.q3, -q.q4);
    assert_eq!(euler_yxz(&q).unwrap(), euler_yxz(&neg).unwrap());
}

proptest! {
    #[test]
    fn quaternion_euler_round_trip(q in unit_quaternion()) {
        let e = euler_yxz(&q).unwrap();
        let back = quaternion_from_euler_yxz(&e);
        prop_assert!(same_rotation(&q, &back) < 1e-12);
        prop_assert!(back.q4 >= 0.0);
    }

    #[test]
    fn euler_quaternion_round_trip(
        phi in -3.1..3.1f64,
        theta in -1.5..1.5f64,
        psi in -3.1..3.1f64,
    ) {
        let e = EulerYxz { phi, theta, psi, gimbal: false };
        let back = euler_yxz(&quaternion_from_euler_yxz(&e)).unwrap();
        prop_assert!((back.phi - phi).abs() < 1e-10);
        prop_assert!((back.theta - theta).abs() < 1e-10);
        prop_assert!((back.psi - psi).abs() < 1e-10);
    }

    #[test]
    fn matrix_inverse_reproduces_the_rotation(q in unit_quaternion()) {
        let r = rotation_matrix(&q, NORM_TOL_STRICT).unwrap();
        let back = quaternion_from_matrix(&r);
        prop_assert!(same_rotation(&q, &back) < 1e-12);
    }

    #[test]
    fn body_thrust_preserves_norm(
        q in unit_quaternion(),
        u in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let u = Vector3::from(u);
        let b = thrust_to_body(&q, &u, NORM_TOL_STRICT).unwrap();
        prop_assert!((b.norm() - u.norm()).abs() <= 1e-9 * (1.0 + u.norm()));
    }
}

#[test]
fn derived_columns_are_consistent() {
    let traj = guess_trajectory(12);
    let s = scenario();
    assert_eq!(traj.times.len(), 13);
    assert_eq!(traj.times[12], traj.t_f);
    for k in 0..13 {
        let c = &traj.controls[k];
        assert_abs_diff_eq!(
            traj.body_thrust[k].norm(),
            c.thrust().norm(),
            epsilon = 1e-12
        );
        assert_eq!(
            traj.collision_margin[k],
            collision_margin(&traj.states[k], &s.geometry)
        );
    }
    let direct = crate::constraints_cost::total_cost(&traj, &s.weights).unwrap();
    assert_eq!(traj.cost, direct);
}

#[test]
fn csv_round_trip_is_exact() {
    let s = scenario();
    let traj = guess_trajectory(9);
    let text = traj.to_csv();
    let back = SolutionTrajectory::from_csv(&s, &text, "memory").unwrap();
    assert_eq!(back.t_f, traj.t_f);
    assert_eq!(back.times, traj.times);
    assert_eq!(back.states, traj.states);
    assert_eq!(back.controls, traj.controls);
    assert_eq!(back.cost, traj.cost);
}

#[test]
fn csv_header_lists_every_column() {
    let text = guess_trajectory(3).to_csv();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), CSV_COLUMNS.len());
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').count(), CSV_COLUMNS.len());
    }
}

#[test]
fn malformed_csv_names_the_line() {
    let s = scenario();
    let text = guess_trajectory(3).to_csv();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = lines[2].replacen(",", ",abc", 2);
    let err = SolutionTrajectory::from_csv(&s, &lines.join("\n"), "bad.csv").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bad.csv") && msg.contains("line 3"), "{msg}");

    let err = SolutionTrajectory::from_csv(&s, "a,b\n", "bad.csv").unwrap_err();
    assert!(matches!(err, DockingError::Parse { .. }));
}

#[test]
fn outputs_round_trip_through_a_directory() {
    let s = scenario();
    let dir = tempfile::tempdir().unwrap();
    let traj = guess_trajectory(5);
    write_outputs(&traj, dir.path()).unwrap();
    for f in [
        TRAJECTORY_FILE,
        REPORT_FILE,
        FIG1_FILE,
        FIG2_FILE,
        FIG3_FILE,
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join(SUMMARY_FILE).exists());
    let back = read_outputs(&s, dir.path()).unwrap();
    assert_eq!(back.states, traj.states);
    assert!(back.summary.is_none());
    // no temporary files are left behind
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(names.len(), 5);
}

#[test]
fn summary_survives_toml() {
    let summary = SolveSummary {
        status: "Converged".into(),
        converged: true,
        iterations: 12,
        objective: 1.5,
        max_eq_violation: 1e-12,
        min_ineq_margin: 0.25,
        kkt: KktResidual::default(),
        wall_time_s: 0.5,
        steps: 5,
        scenario_hash: format!("{:016x}", u64::MAX),
    };
    let text = toml::to_string(&summary).unwrap();
    assert_eq!(toml::from_str::<SolveSummary>(&text).unwrap(), summary);
}

#[test]
fn report_mentions_the_cost_terms() {
    let r = guess_trajectory(4).report();
    for key in ["t_f", "J ", "u_total", "m_total", "min distance"] {
        assert!(r.contains(key), "{key}");
    }
}

#[test]
fn mismatched_lengths_are_rejected() {
    let s = scenario();
    let traj = guess_trajectory(4);
    let err = SolutionTrajectory::new(
        &s,
        traj.states.clone(),
        traj.controls[..3].to_vec(),
        traj.t_f,
    );
    assert!(matches!(err, Err(DockingError::Domain(_))));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/flyaround.scenario")
}

fn docking(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docking"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn solve_writes_outputs_and_report_rereads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let scenario = scenario_path();
    let o = docking(&[
        "solve",
        "--scenario",
        scenario.to_str().unwrap(),
        "--steps",
        "20",
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
    assert!(csv.starts_with("k,t,x,y,z,vx,vy,vz,wSx"));
    for f in [
        "report.txt",
        "summary.toml",
        "fig1_position_thrust.csv",
        "fig2_attitude.csv",
        "fig3_path.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert!(summary.contains("converged = true"));

    std::fs::remove_file(dir.path().join("report.txt")).unwrap();
    let o = docking(&[
        "report",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("solver status       Converged"), "{stdout}");
    assert!(dir.path().join("report.txt").exists());
    // the trajectory itself is not rewritten
    let again = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(again, csv);
}

#[test]
fn iteration_limit_exits_with_2_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path();
    let o = docking(&[
        "solve",
        "--scenario",
        scenario.to_str().unwrap(),
        "--steps",
        "10",
        "--max-iterations",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("trajectory.csv").exists());
    let summary = std::fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert!(summary.contains("MaxIterations"));
}

#[test]
fn invalid_scenario_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario_path())
        .unwrap()
        .replace(
            "docking_point_m = [0.0, 1.0, 0.0]",
            "docking_point_m = [0.0, 0.0, 0.0]",
        )
        .replace(
            "docking_point_m = [0.0, -1.0, 0.0]",
            "docking_point_m = [0.0, 0.0, 0.0]",
        );
    let path = dir.path().join("bad.scenario");
    std::fs::write(&path, text).unwrap();
    let o = docking(&[
        "solve",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));

    std::fs::write(&path, "[orbit]\ngm_m3_per_s2 = \"x\"\n").unwrap();
    let o = docking(&["verify", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse error"));
}

#[test]
fn out_of_range_override_exits_with_3() {
    let o = docking(&[
        "solve",
        "--scenario",
        scenario_path().to_str().unwrap(),
        "--tf-guess",
        "5000",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn missing_scenario_exits_with_4() {
    let o = docking(&["solve", "--scenario", "/nonexistent/flyaround.scenario"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn propagate_writes_a_csv_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["analytic-cw", "reference-rk", "trapezoidal"] {
        let o = docking(&[
            "propagate",
            "--scenario",
            scenario_path().to_str().unwrap(),
            "--mode",
            mode,
            "--t-end",
            "20",
            "--dt",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text =
            std::fs::read_to_string(dir.path().join(format!("propagation_{mode}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 12);
    }
    let o = docking(&[
        "propagate",
        "--scenario",
        scenario_path().to_str().unwrap(),
        "--mode",
        "euler",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn verify_passes_on_a_small_grid() {
    let o = docking(&[
        "verify",
        "--scenario",
        scenario_path().to_str().unwrap(),
        "--steps",
        "8",
    ]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert!(stdout.contains("0 failed"));
    assert!(!stdout.contains("FAIL"));
}

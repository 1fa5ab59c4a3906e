//! Stability of the flyaround optimum under a perturbed starting point.

use docking_core::pipeline::run_solve;
use docking_core::scenario::ScenarioConfig;
use docking_core::solver::SolverOptions;

const FLYAROUND: &str = include_str!("../../../scenarios/flyaround.scenario");

#[test]
fn perturbed_start_reaches_the_same_objective() {
    let scenario = ScenarioConfig::from_toml(FLYAROUND, "flyaround").unwrap();
    let plain = run_solve(&scenario, &SolverOptions::default()).unwrap();
    let noisy = run_solve(
        &scenario,
        &SolverOptions {
            perturbation: 1e-3,
            seed: 7,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    assert!(
        plain.report.status.is_converged(),
        "{}",
        plain.report.status
    );
    assert!(
        noisy.report.status.is_converged(),
        "{}",
        noisy.report.status
    );
    let (a, b) = (plain.report.objective, noisy.report.objective);
    println!("objective {a:.8} unperturbed, {b:.8} perturbed");
    assert!((a - b).abs() <= 1e-3 * a.abs(), "{a} vs {b}");
}

use nkscreen::cases;
use nkscreen::contingency::ContingencyVector;
use nkscreen::powerflow::{solve_acpf, SolverOptions};
use nkscreen::OperatingState;
use serde::Deserialize;

#[derive(Deserialize)]
struct Reference {
    vm: Vec<f64>,
    va_rad: Vec<f64>,
    branch_pf_mw: Vec<f64>,
}

fn check(name: &str) {
    let text = std::fs::read_to_string(format!(
        "{}/tests/fixtures/pf_{name}.json",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap();
    let reference: Reference = serde_json::from_str(&text).unwrap();
    let case = cases::by_name(name).unwrap();
    let opts = SolverOptions {
        enforce_q_limits: false,
        ..SolverOptions::default()
    };
    let sol = solve_acpf(
        &case,
        &OperatingState::nominal(&case),
        &ContingencyVector::empty(case.n_contingencable()),
        &opts,
    )
    .unwrap();
    assert!(sol.converged, "{name} did not converge");
    let dv = sol
        .vm
        .iter()
        .zip(&reference.vm)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let da = sol
        .va
        .iter()
        .zip(&reference.va_rad)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let dp = sol
        .branch_p
        .iter()
        .zip(&reference.branch_pf_mw)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(dv < 1e-6, "{name}: |dVm| = {dv:e}");
    assert!(da < 1e-5, "{name}: |dVa| = {da:e}");
    assert!(dp < 1e-3, "{name}: |dP| = {dp:e}");
}

#[test]
fn ieee14_matches_reference() {
    check("case14");
}

#[test]
fn ieee39_matches_reference() {
    check("case39");
}

#[test]
fn ieee57_matches_reference() {
    check("case57");
}

#[test]
fn ieee118_matches_reference() {
    check("case118");
}

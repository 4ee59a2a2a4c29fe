//! Browser bindings: IEEE-14 outage simulation, budget explorer and the
//! coverage-bound curve. Each export returns a JSON string.

use nkscreen::contingency::ContingencyVector;
use nkscreen::coverage::{self, Theorem1Params};
use nkscreen::powerflow::{self, Outcome, SeverityConfig, SolverOptions};
use nkscreen::{cases, NetworkCase, OperatingState};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct BranchInfo {
    position: usize,
    number: usize,
    from: usize,
    to: usize,
}

#[derive(Serialize)]
struct CaseInfo {
    name: String,
    buses: Vec<usize>,
    branches: Vec<BranchInfo>,
}

/// Bus numbers and contingencable branches of the bundled IEEE-14 case.
pub fn case14_info() -> String {
    let case = cases::ieee14();
    let branches = (0..case.n_contingencable())
        .map(|p| {
            let e = case.contingency_branch(p);
            BranchInfo {
                position: p,
                number: e + 1,
                from: case.branches[e].from_bus,
                to: case.branches[e].to_bus,
            }
        })
        .collect();
    let info = CaseInfo {
        name: case.name.clone(),
        buses: case.buses.iter().map(|b| b.id).collect(),
        branches,
    };
    serde_json::to_string(&info).expect("serializable")
}

#[derive(Serialize)]
struct Simulation {
    outages: Vec<usize>,
    islanding: bool,
    converged: bool,
    severity: f64,
    outcome: Option<Outcome>,
    iterations: usize,
    vm: Vec<f64>,
    branch_p: Vec<f64>,
}

fn scaled_state(case: &NetworkCase, load_scale: f64) -> Result<OperatingState, String> {
    OperatingState::from_multipliers(
        case,
        0,
        vec![[load_scale; 2]; case.n_buses()],
        vec![load_scale; case.generators.len()],
    )
    .map_err(|e| e.to_string())
}

/// AC power flow on IEEE-14 with the given contingency positions removed,
/// loads and dispatch scaled by `load_scale`, classified against `tau`.
pub fn simulate_case14(outages: &[u32], load_scale: f64, tau: f64) -> Result<String, String> {
    let case = cases::ieee14();
    let n = case.n_contingencable();
    let positions: Vec<usize> = outages.iter().map(|&p| p as usize).collect();
    let c = ContingencyVector::from_positions(n, positions).map_err(|e| e.to_string())?;
    let state = scaled_state(&case, load_scale)?;
    let sev_cfg = SeverityConfig::with_tau(tau).map_err(|e| e.to_string())?;
    let opts = SolverOptions::default();
    let base = powerflow::solve_acpf(&case, &state, &ContingencyVector::empty(n), &opts)
        .map_err(|e| e.to_string())?;
    if !base.converged {
        return Err("the pre-contingency case does not converge at this loading".into());
    }
    let sim = match powerflow::solve_acpf(&case, &state, &c, &opts) {
        Ok(post) => {
            let severity =
                powerflow::severity(&base, &post, &sev_cfg).map_err(|e| e.to_string())?;
            Simulation {
                outages: c.outages().to_vec(),
                islanding: false,
                converged: post.converged,
                severity,
                outcome: Some(powerflow::classify(severity, &sev_cfg)),
                iterations: post.iterations,
                vm: post.vm,
                branch_p: post.branch_p,
            }
        }
        Err(nkscreen::Error::Disconnected) => Simulation {
            outages: c.outages().to_vec(),
            islanding: true,
            converged: false,
            severity: sev_cfg.s_fail,
            outcome: None,
            iterations: 0,
            vm: Vec::new(),
            branch_p: Vec::new(),
        },
        Err(e) => return Err(e.to_string()),
    };
    Ok(serde_json::to_string(&sim).expect("serializable"))
}

#[derive(Serialize)]
struct BudgetView {
    budget: usize,
    /// Miss probability (1 - p)^b for b = 0..=budget.
    miss: Vec<f64>,
}

/// Smallest budget meeting `delta_miss` at capture probability `p_lower`,
/// with the miss-probability curve up to it.
pub fn budget_curve(p_lower: f64, delta_miss: f64) -> Result<String, String> {
    let budget = coverage::required_budget(p_lower, delta_miss).map_err(|e| e.to_string())?;
    let miss = (0..=budget)
        .map(|b| coverage::miss_probability(p_lower, b))
        .collect();
    Ok(serde_json::to_string(&BudgetView { budget, miss }).expect("serializable"))
}

#[derive(Serialize)]
struct BoundView {
    m: Vec<usize>,
    bound: Vec<f64>,
}

/// Coverage lower bound against budget m = 1..=m_max.
pub fn bound_curve(delta: f64, epsilon: f64, eta: f64, m_max: usize) -> Result<String, String> {
    let m: Vec<usize> = (1..=m_max).collect();
    let bound = m
        .iter()
        .map(|&m| {
            coverage::theorem1_bound(&Theorem1Params {
                delta,
                epsilon,
                m,
                eta,
            })
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&BoundView { m, bound }).expect("serializable"))
}

#[wasm_bindgen(js_name = case14Info)]
pub fn case14_info_js() -> String {
    case14_info()
}

#[wasm_bindgen(js_name = simulateCase14)]
pub fn simulate_case14_js(outages: &[u32], load_scale: f64, tau: f64) -> Result<String, JsError> {
    simulate_case14(outages, load_scale, tau).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = budgetCurve)]
pub fn budget_curve_js(p_lower: f64, delta_miss: f64) -> Result<String, JsError> {
    budget_curve(p_lower, delta_miss).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = boundCurve)]
pub fn bound_curve_js(delta: f64, epsilon: f64, eta: f64, m_max: usize) -> Result<String, JsError> {
    bound_curve(delta, epsilon, eta, m_max).map_err(|e| JsError::new(&e))
}

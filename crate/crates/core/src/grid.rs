//! Static network model, operating states and the bus-branch graph.

use std::collections::{HashMap, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::contingency::ContingencyVector;
use crate::error::{Error, Result};
use crate::powerflow::{self, SolverOptions};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Pq,
    Pv,
    Slack,
}

impl BusType {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            BusType::Slack => [1.0, 0.0, 0.0],
            BusType::Pv => [0.0, 1.0, 0.0],
            BusType::Pq => [0.0, 0.0, 1.0],
        }
    }
}

/// A bus. Loads and shunts are in MW/MVAr; voltages in per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub bus_type: BusType,
    pub p_load: f64,
    pub q_load: f64,
    /// Shunt conductance, MW consumed at 1.0 pu.
    pub gs: f64,
    /// Shunt susceptance, MVAr injected at 1.0 pu.
    pub bs: f64,
    pub vm_init: f64,
    /// Initial angle in degrees. The slack bus holds this angle.
    pub va_init_deg: f64,
    pub base_kv: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// A branch between two bus ids. Impedances in per unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    /// Long-term rating (MVA); 0 means unlimited.
    pub rating: f64,
    /// Off-nominal tap ratio; 1.0 for lines.
    pub tap: f64,
    pub shift_deg: f64,
    pub in_service: bool,
    pub contingencable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_set: f64,
    pub q_set: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub v_set: f64,
    pub in_service: bool,
    pub p_max: f64,
    pub p_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CaseData {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

/// Validated bus/branch/generator model.
///
/// Construction checks the structural invariants (one slack bus, valid branch
/// endpoints, nonzero reactances, at least one contingencable branch, connected
/// base topology) and precomputes index maps used by the solver and the graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CaseData", into = "CaseData")]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    bus_index: HashMap<usize, usize>,
    branch_ends: Vec<(usize, usize)>,
    gen_bus: Vec<usize>,
    contingencable: Vec<usize>,
    bridge: Vec<bool>,
}

impl PartialEq for NetworkCase {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.branches == other.branches
            && self.generators == other.generators
    }
}

impl TryFrom<CaseData> for NetworkCase {
    type Error = Error;

    fn try_from(d: CaseData) -> Result<Self> {
        NetworkCase::new(d.name, d.base_mva, d.buses, d.branches, d.generators)
    }
}

impl From<NetworkCase> for CaseData {
    fn from(c: NetworkCase) -> Self {
        CaseData {
            name: c.name,
            base_mva: c.base_mva,
            buses: c.buses,
            branches: c.branches,
            generators: c.generators,
        }
    }
}

impl NetworkCase {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!(
                "base_mva must be positive, got {base_mva}"
            )));
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
        }
        let slack_count = buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .count();
        if slack_count != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {slack_count}"
            )));
        }
        let mut branch_ends = Vec::with_capacity(branches.len());
        for (e, br) in branches.iter().enumerate() {
            let f = *bus_index.get(&br.from_bus).ok_or_else(|| {
                Error::Validation(format!(
                    "branch {} references unknown bus {}",
                    e + 1,
                    br.from_bus
                ))
            })?;
            let t = *bus_index.get(&br.to_bus).ok_or_else(|| {
                Error::Validation(format!(
                    "branch {} references unknown bus {}",
                    e + 1,
                    br.to_bus
                ))
            })?;
            if br.x == 0.0 {
                return Err(Error::Validation(format!(
                    "branch {} has zero reactance",
                    e + 1
                )));
            }
            if f == t {
                return Err(Error::Validation(format!(
                    "branch {} is a self-loop",
                    e + 1
                )));
            }
            branch_ends.push((f, t));
        }
        let mut gen_bus = Vec::with_capacity(generators.len());
        for (g, gen) in generators.iter().enumerate() {
            let i = *bus_index.get(&gen.bus).ok_or_else(|| {
                Error::Validation(format!(
                    "generator {} references unknown bus {}",
                    g + 1,
                    gen.bus
                ))
            })?;
            gen_bus.push(i);
        }
        let slack = buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .unwrap();
        if !generators
            .iter()
            .zip(&gen_bus)
            .any(|(g, &i)| g.in_service && i == slack)
        {
            return Err(Error::Validation(
                "slack bus has no in-service generator".into(),
            ));
        }
        let contingencable: Vec<usize> = branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.in_service && b.contingencable)
            .map(|(e, _)| e)
            .collect();
        if contingencable.is_empty() {
            return Err(Error::Validation("no contingencable branches".into()));
        }

        let mut case = NetworkCase {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            bus_index,
            branch_ends,
            gen_bus,
            contingencable,
            bridge: Vec::new(),
        };
        let graph = BusBranchGraph::new(&case, &[]);
        if !graph.is_connected() {
            return Err(Error::Validation("base topology is not connected".into()));
        }
        case.bridge = (0..case.contingencable.len())
            .map(|pos| !BusBranchGraph::new(&case, &[case.contingencable[pos]]).is_connected())
            .collect();
        Ok(case)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// N: the number of contingencable branches (length of contingency vectors).
    pub fn n_contingencable(&self) -> usize {
        self.contingencable.len()
    }

    /// Branch-table index of the contingency element at `pos`.
    pub fn contingency_branch(&self, pos: usize) -> usize {
        self.contingencable[pos]
    }

    pub fn contingencable_branches(&self) -> &[usize] {
        &self.contingencable
    }

    /// Internal bus indices (from, to) of a branch.
    pub fn branch_ends(&self, e: usize) -> (usize, usize) {
        self.branch_ends[e]
    }

    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    /// Internal bus index of generator `g`.
    pub fn gen_bus_index(&self, g: usize) -> usize {
        self.gen_bus[g]
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .unwrap()
    }

    /// True if outaging contingency element `pos` alone islands the network.
    /// Any pattern containing such an element is infeasible.
    pub fn is_bridge(&self, pos: usize) -> bool {
        self.bridge[pos]
    }

    /// Branch-table indices outaged by `c`.
    pub fn outaged_branches(&self, c: &ContingencyVector) -> Vec<usize> {
        c.outages()
            .iter()
            .map(|&p| self.contingencable[p])
            .collect()
    }

    /// Length of the state feature vector: per-bus P and Q load, per-generator P and V setpoints.
    pub fn feature_len(&self) -> usize {
        2 * self.buses.len() + 2 * self.generators.len()
    }
}

/// Pre-contingency operating point expressed as multipliers on the nominal case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingState {
    pub state_id: u64,
    /// Per-bus (P, Q) load multipliers.
    pub load_scale: Vec<[f64; 2]>,
    /// Per-generator active-power setpoint multipliers.
    pub gen_scale: Vec<f64>,
    /// Raw (unnormalised) conditioning features:
    /// `[P_load per bus, Q_load per bus, P_set per gen, V_set per gen]`, powers in per unit.
    /// Models carry their own normalisation statistics.
    pub feature_vector: Vec<f64>,
}

/// Absolute injections of a state, in MW / MVAr.
#[derive(Debug, Clone)]
pub struct Injections {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub p_gen: Vec<f64>,
}

impl OperatingState {
    pub fn nominal(case: &NetworkCase) -> Self {
        Self::from_multipliers(
            case,
            0,
            vec![[1.0, 1.0]; case.n_buses()],
            vec![1.0; case.generators.len()],
        )
        .expect("unit multipliers are valid")
    }

    pub fn from_multipliers(
        case: &NetworkCase,
        state_id: u64,
        load_scale: Vec<[f64; 2]>,
        gen_scale: Vec<f64>,
    ) -> Result<Self> {
        if load_scale.len() != case.n_buses() || gen_scale.len() != case.generators.len() {
            return Err(Error::Dimension(format!(
                "state multipliers ({}, {}) do not match case ({}, {})",
                load_scale.len(),
                gen_scale.len(),
                case.n_buses(),
                case.generators.len()
            )));
        }
        let positive = load_scale
            .iter()
            .flatten()
            .chain(&gen_scale)
            .all(|&m| m > 0.0);
        if !positive {
            return Err(Error::InvalidArgument(
                "multipliers must be strictly positive".into(),
            ));
        }
        let base = case.base_mva;
        let mut fv = Vec::with_capacity(case.feature_len());
        fv.extend(
            case.buses
                .iter()
                .zip(&load_scale)
                .map(|(b, s)| b.p_load * s[0] / base),
        );
        fv.extend(
            case.buses
                .iter()
                .zip(&load_scale)
                .map(|(b, s)| b.q_load * s[1] / base),
        );
        fv.extend(
            case.generators
                .iter()
                .zip(&gen_scale)
                .map(|(g, s)| g.p_set * s / base),
        );
        fv.extend(case.generators.iter().map(|g| g.v_set));
        Ok(OperatingState {
            state_id,
            load_scale,
            gen_scale,
            feature_vector: fv,
        })
    }

    pub fn injections(&self, case: &NetworkCase) -> Injections {
        Injections {
            p_load: case
                .buses
                .iter()
                .zip(&self.load_scale)
                .map(|(b, s)| b.p_load * s[0])
                .collect(),
            q_load: case
                .buses
                .iter()
                .zip(&self.load_scale)
                .map(|(b, s)| b.q_load * s[1])
                .collect(),
            p_gen: case
                .generators
                .iter()
                .zip(&self.gen_scale)
                .map(|(g, s)| g.p_set * s)
                .collect(),
        }
    }
}

/// Sampling ranges for operating-state perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub load_range: (f64, f64),
    pub gen_range: (f64, f64),
    pub max_retries: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            load_range: (0.9, 1.1),
            gen_range: (0.9, 1.1),
            max_retries: 50,
        }
    }
}

fn draw(rng: &mut rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws per-element multipliers uniformly from the configured intervals and
/// keeps the first draw whose base-case power flow converges.
pub fn perturb_state(
    case: &NetworkCase,
    state_id: u64,
    seed: u64,
    cfg: &PerturbConfig,
    solver: &SolverOptions,
) -> Result<OperatingState> {
    for (lo, hi) in [cfg.load_range, cfg.gen_range] {
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "perturbation interval [{lo}, {hi}] must be positive and contain 1"
            )));
        }
    }
    let nominal = ContingencyVector::empty(case.n_contingencable());
    for attempt in 0..cfg.max_retries {
        let mut rng = rng::stream(seed, &[attempt as u64]);
        let load_scale = (0..case.n_buses())
            .map(|_| {
                [
                    draw(&mut rng, cfg.load_range),
                    draw(&mut rng, cfg.load_range),
                ]
            })
            .collect();
        let gen_scale = (0..case.generators.len())
            .map(|_| draw(&mut rng, cfg.gen_range))
            .collect();
        let state = OperatingState::from_multipliers(case, state_id, load_scale, gen_scale)?;
        if powerflow::solve_acpf(case, &state, &nominal, solver)?.converged {
            return Ok(state);
        }
    }
    Err(Error::InfeasibleRegime(cfg.max_retries))
}

/// Bus adjacency with an active-edge mask.
#[derive(Debug, Clone)]
pub struct BusBranchGraph {
    adjacency: Vec<Vec<(usize, usize)>>,
    active: Vec<bool>,
}

impl BusBranchGraph {
    /// Graph of in-service branches minus `outaged` (branch-table indices).
    pub fn new(case: &NetworkCase, outaged: &[usize]) -> Self {
        let mut active: Vec<bool> = case.branches.iter().map(|b| b.in_service).collect();
        for &e in outaged {
            active[e] = false;
        }
        let mut adjacency = vec![Vec::new(); case.n_buses()];
        for (e, &on) in active.iter().enumerate() {
            if on {
                let (f, t) = case.branch_ends[e];
                adjacency[f].push((t, e));
                adjacency[t].push((f, e));
            }
        }
        Self { adjacency, active }
    }

    pub fn for_contingency(case: &NetworkCase, c: &ContingencyVector) -> Self {
        Self::new(case, &case.outaged_branches(c))
    }

    pub fn neighbors(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn edge_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.adjacency.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }
}

/// True iff removing `c`'s branches leaves every bus in one component.
pub fn is_connected(case: &NetworkCase, c: &ContingencyVector) -> bool {
    BusBranchGraph::for_contingency(case, c).is_connected()
}

//! Newton-Raphson AC power flow in polar coordinates and the post-contingency
//! severity index.
//!
//! The admittance matrix and the Jacobian are assembled from sparse row lists;
//! the Newton step is solved with a dense LU factorisation, which is the faster
//! choice at the system sizes handled here (at most a few hundred unknowns).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::contingency::ContingencyVector;
use crate::error::{Error, Result};
use crate::grid::{BusBranchGraph, BusType, NetworkCase, OperatingState};

/// Sentinel severity assigned to post-contingency cases that fail to converge.
pub const DEFAULT_S_FAIL: f64 = 10_000.0;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on the infinity norm of the mismatch (pu).
    pub tol: f64,
    pub max_iter: usize,
    /// Switch PV buses to PQ at generator reactive limits (and back when the
    /// voltage recovers).
    pub enforce_q_limits: bool,
    pub max_q_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            enforce_q_limits: true,
            max_q_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    /// Bus voltage angles in radians.
    pub va: Vec<f64>,
    /// Active power entering each branch at its from-end (MW); 0 for outaged branches.
    pub branch_p: Vec<f64>,
    pub converged: bool,
    /// Mismatch evaluations performed across all Newton runs; a case that is
    /// already balanced at the flat start reports 1.
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Reactive output per generator (MVAr), split evenly among units on a bus.
    pub gen_q: Vec<f64>,
    /// Buses held at a reactive limit in the final solution.
    pub q_limited: Vec<usize>,
}

struct BranchY {
    ff: Complex64,
    ft: Complex64,
    tf: Complex64,
    tt: Complex64,
}

fn branch_admittance(case: &NetworkCase, e: usize) -> BranchY {
    let br = &case.branches[e];
    let ys = Complex64::new(br.r, br.x).inv();
    let tap = Complex64::from_polar(br.tap, br.shift_deg.to_radians());
    let tt = ys + J * (br.b / 2.0);
    BranchY {
        ff: tt / (br.tap * br.tap),
        ft: -ys / tap.conj(),
        tf: -ys / tap,
        tt,
    }
}

/// Sparse bus admittance matrix as sorted row lists.
struct Ybus {
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl Ybus {
    fn build(case: &NetworkCase, active: &[bool]) -> Self {
        let n = case.n_buses();
        let mut rows: Vec<Vec<(usize, Complex64)>> = (0..n)
            .map(|i| {
                let b = &case.buses[i];
                vec![(i, Complex64::new(b.gs, b.bs) / case.base_mva)]
            })
            .collect();
        let mut add =
            |i: usize, k: usize, y: Complex64| match rows[i].iter_mut().find(|(c, _)| *c == k) {
                Some(entry) => entry.1 += y,
                None => rows[i].push((k, y)),
            };
        for (e, &on) in active.iter().enumerate() {
            if !on {
                continue;
            }
            let (f, t) = case.branch_ends(e);
            let y = branch_admittance(case, e);
            add(f, f, y.ff);
            add(f, t, y.ft);
            add(t, f, y.tf);
            add(t, t, y.tt);
        }
        for r in &mut rows {
            r.sort_by_key(|(c, _)| *c);
        }
        Self { rows }
    }

    fn current(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(k, y)| y * v[k]).sum())
            .collect()
    }
}

struct NewtonResult {
    converged: bool,
    evaluations: usize,
    mismatch: f64,
}

/// Newton iterations on the polar mismatch equations. `v` is updated in place.
fn newton(
    ybus: &Ybus,
    sbus: &[Complex64],
    v: &mut [Complex64],
    pv: &[usize],
    pq: &[usize],
    opts: &SolverOptions,
) -> NewtonResult {
    let n = v.len();
    let pvpq: Vec<usize> = pv.iter().chain(pq).copied().collect();
    let npvpq = pvpq.len();
    let dim = npvpq + pq.len();
    // Column/row position of each bus in the angle block and magnitude block.
    let mut ang_pos = vec![usize::MAX; n];
    let mut mag_pos = vec![usize::MAX; n];
    for (p, &i) in pvpq.iter().enumerate() {
        ang_pos[i] = p;
    }
    for (p, &i) in pq.iter().enumerate() {
        mag_pos[i] = npvpq + p;
    }
    let mut vm: Vec<f64> = v.iter().map(|x| x.norm()).collect();
    let mut va: Vec<f64> = v.iter().map(|x| x.arg()).collect();

    let mut evaluations = 0;
    let mut mismatch = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let current = ybus.current(v);
        let mis: Vec<Complex64> = (0..n).map(|i| v[i] * current[i].conj() - sbus[i]).collect();
        let mut f = DVector::zeros(dim);
        for &i in &pvpq {
            f[ang_pos[i]] = mis[i].re;
        }
        for &i in pq {
            f[mag_pos[i]] = mis[i].im;
        }
        evaluations += 1;
        mismatch = f.amax();
        if !mismatch.is_finite() || mismatch > 1e6 {
            return NewtonResult {
                converged: false,
                evaluations,
                mismatch,
            };
        }
        if mismatch <= opts.tol {
            return NewtonResult {
                converged: true,
                evaluations,
                mismatch,
            };
        }
        if iter == opts.max_iter || dim == 0 {
            break;
        }

        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            let (p_row, q_row) = (ang_pos[i], mag_pos[i]);
            if p_row == usize::MAX {
                continue;
            }
            let vi = v[i];
            let ui = vi / vm[i];
            for &(k, y) in &ybus.rows[i] {
                let (ds_dva, ds_dvm) = if k == i {
                    (
                        J * vi * (current[i] - y * vi).conj(),
                        vi * (y * ui).conj() + current[i].conj() * ui,
                    )
                } else {
                    let yv = y * v[k];
                    (-J * vi * yv.conj(), vi * (yv / vm[k]).conj())
                };
                if ang_pos[k] != usize::MAX {
                    jac[(p_row, ang_pos[k])] = ds_dva.re;
                    if q_row != usize::MAX {
                        jac[(q_row, ang_pos[k])] = ds_dva.im;
                    }
                }
                if mag_pos[k] != usize::MAX {
                    jac[(p_row, mag_pos[k])] = ds_dvm.re;
                    if q_row != usize::MAX {
                        jac[(q_row, mag_pos[k])] = ds_dvm.im;
                    }
                }
            }
        }
        let Some(dx) = jac.lu().solve(&f) else {
            return NewtonResult {
                converged: false,
                evaluations,
                mismatch,
            };
        };
        for &i in &pvpq {
            va[i] -= dx[ang_pos[i]];
        }
        for &i in pq {
            vm[i] -= dx[mag_pos[i]];
        }
        for i in 0..n {
            v[i] = Complex64::from_polar(vm[i], va[i]);
        }
    }
    NewtonResult {
        converged: false,
        evaluations,
        mismatch,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum QLimit {
    Max,
    Min,
}

/// Solves the AC power flow of `state` with `c`'s branches removed.
pub fn solve_acpf(
    case: &NetworkCase,
    state: &OperatingState,
    c: &ContingencyVector,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution> {
    if c.n() != case.n_contingencable() {
        return Err(Error::Dimension(format!(
            "contingency length {} but case has {} contingencable branches",
            c.n(),
            case.n_contingencable()
        )));
    }
    solve_with_outages(case, state, &case.outaged_branches(c), opts)
}

/// Like [`solve_acpf`] but takes branch-table indices directly.
pub fn solve_with_outages(
    case: &NetworkCase,
    state: &OperatingState,
    outaged: &[usize],
    opts: &SolverOptions,
) -> Result<PowerFlowSolution> {
    if state.load_scale.len() != case.n_buses() || state.gen_scale.len() != case.generators.len() {
        return Err(Error::Dimension(
            "operating state does not match case".into(),
        ));
    }
    let graph = BusBranchGraph::new(case, outaged);
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let active = graph.active_mask();
    let ybus = Ybus::build(case, active);
    let n = case.n_buses();
    let base = case.base_mva;
    let inj = state.injections(case);

    // Per-bus generator aggregates.
    let mut has_gen = vec![false; n];
    let mut v_set = vec![None; n];
    let mut q_max = vec![0.0; n];
    let mut q_min = vec![0.0; n];
    let mut p_gen = vec![0.0; n];
    let mut q_gen_spec = vec![0.0; n];
    let mut units = vec![0usize; n];
    for (g, gen) in case.generators.iter().enumerate() {
        if !gen.in_service {
            continue;
        }
        let i = case.gen_bus_index(g);
        has_gen[i] = true;
        v_set[i].get_or_insert(gen.v_set);
        q_max[i] += gen.q_max;
        q_min[i] += gen.q_min;
        p_gen[i] += inj.p_gen[g];
        q_gen_spec[i] += gen.q_set;
        units[i] += 1;
    }

    let slack = case.slack_index();
    let mut is_pv: Vec<bool> = (0..n)
        .map(|i| case.buses[i].bus_type == BusType::Pv && has_gen[i])
        .collect();
    let mut limited: Vec<Option<QLimit>> = vec![None; n];

    let mut v: Vec<Complex64> = (0..n)
        .map(|i| {
            let vm = if i == slack || is_pv[i] {
                v_set[i].unwrap_or(1.0)
            } else {
                1.0
            };
            let va = if i == slack {
                case.buses[i].va_init_deg.to_radians()
            } else {
                0.0
            };
            Complex64::from_polar(vm, va)
        })
        .collect();

    let mut evaluations = 0;
    let mut result;
    let mut rounds = 0;
    loop {
        let sbus: Vec<Complex64> = (0..n)
            .map(|i| {
                let q_gen = match limited[i] {
                    Some(QLimit::Max) => q_max[i],
                    Some(QLimit::Min) => q_min[i],
                    None => q_gen_spec[i],
                };
                Complex64::new(p_gen[i] - inj.p_load[i], q_gen - inj.q_load[i]) / base
            })
            .collect();
        let pv: Vec<usize> = (0..n).filter(|&i| i != slack && is_pv[i]).collect();
        let pq: Vec<usize> = (0..n).filter(|&i| i != slack && !is_pv[i]).collect();
        result = newton(&ybus, &sbus, &mut v, &pv, &pq, opts);
        evaluations += result.evaluations;
        if !result.converged || !opts.enforce_q_limits || rounds >= opts.max_q_rounds {
            break;
        }
        rounds += 1;
        let current = ybus.current(&v);
        let mut changed = false;
        for i in 0..n {
            if i == slack || !has_gen[i] || case.buses[i].bus_type != BusType::Pv {
                continue;
            }
            let q_total = (v[i] * current[i].conj()).im * base + inj.q_load[i];
            match limited[i] {
                None if q_total > q_max[i] + 1e-6 => {
                    limited[i] = Some(QLimit::Max);
                    is_pv[i] = false;
                    changed = true;
                }
                None if q_total < q_min[i] - 1e-6 => {
                    limited[i] = Some(QLimit::Min);
                    is_pv[i] = false;
                    changed = true;
                }
                Some(QLimit::Max) if v[i].norm() > v_set[i].unwrap_or(1.0) + 1e-9 => {
                    limited[i] = None;
                    is_pv[i] = true;
                    v[i] = Complex64::from_polar(v_set[i].unwrap_or(1.0), v[i].arg());
                    changed = true;
                }
                Some(QLimit::Min) if v[i].norm() < v_set[i].unwrap_or(1.0) - 1e-9 => {
                    limited[i] = None;
                    is_pv[i] = true;
                    v[i] = Complex64::from_polar(v_set[i].unwrap_or(1.0), v[i].arg());
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }

    let converged = result.converged && v.iter().all(|x| x.re.is_finite() && x.im.is_finite());
    let current = ybus.current(&v);
    let mut branch_p = vec![0.0; case.n_branches()];
    for (e, &on) in active.iter().enumerate() {
        if on {
            let (f, t) = case.branch_ends(e);
            let y = branch_admittance(case, e);
            branch_p[e] = (v[f] * (y.ff * v[f] + y.ft * v[t]).conj()).re * base;
        }
    }
    let gen_q = case
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            if !gen.in_service {
                return 0.0;
            }
            let i = case.gen_bus_index(g);
            let q_total = (v[i] * current[i].conj()).im * base + inj.q_load[i];
            q_total / units[i] as f64
        })
        .collect();
    Ok(PowerFlowSolution {
        vm: v.iter().map(|x| x.norm()).collect(),
        va: v.iter().map(|x| x.arg()).collect(),
        branch_p,
        converged,
        iterations: evaluations,
        max_mismatch: result.mismatch,
        gen_q,
        q_limited: (0..n).filter(|&i| limited[i].is_some()).collect(),
    })
}

/// Complex power injections (pu) implied by a solution's voltages, for balance checks.
pub fn recompute_injections(
    case: &NetworkCase,
    state: &OperatingState,
    outaged: &[usize],
    sol: &PowerFlowSolution,
) -> Vec<Complex64> {
    let graph = BusBranchGraph::new(case, outaged);
    let ybus = Ybus::build(case, graph.active_mask());
    let _ = state;
    let v: Vec<Complex64> = sol
        .vm
        .iter()
        .zip(&sol.va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let i = ybus.current(&v);
    v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityConfig {
    /// High-severity threshold.
    pub tau: f64,
    /// Sentinel for nonconvergent post-contingency cases.
    pub s_fail: f64,
    /// Closed interval of "in-band" severities.
    pub band: (f64, f64),
}

impl SeverityConfig {
    pub fn new(tau: f64, s_fail: f64, band: (f64, f64)) -> Result<Self> {
        if !(tau > 0.0 && tau < s_fail) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < tau < s_fail, got tau={tau}, s_fail={s_fail}"
            )));
        }
        if !(band.0 >= 0.0 && band.0 <= band.1 && band.1 <= s_fail) {
            return Err(Error::InvalidArgument(format!(
                "band {band:?} not within [0, {s_fail}]"
            )));
        }
        Ok(Self { tau, s_fail, band })
    }

    /// Default band `[tau, s_fail]` with the default sentinel.
    pub fn with_tau(tau: f64) -> Result<Self> {
        Self::new(tau, DEFAULT_S_FAIL, (tau, DEFAULT_S_FAIL))
    }
}

/// Severity of `post` against the pre-contingency `base` solution:
/// max branch active-flow change (MW) plus max voltage deviation from 1 pu,
/// or `s_fail` if `post` did not converge.
pub fn severity_index(
    base: &PowerFlowSolution,
    post: &PowerFlowSolution,
    s_fail: f64,
) -> Result<f64> {
    if !base.converged {
        return Err(Error::InvalidArgument("base case did not converge".into()));
    }
    if base.branch_p.len() != post.branch_p.len() || base.vm.len() != post.vm.len() {
        return Err(Error::Dimension(
            "base and post solutions differ in size".into(),
        ));
    }
    if !post.converged {
        return Ok(s_fail);
    }
    let flow = base
        .branch_p
        .iter()
        .zip(&post.branch_p)
        .map(|(b, p)| (p - b).abs())
        .fold(0.0, f64::max);
    let volt = post.vm.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    // Convergent severities stay strictly below the sentinel.
    Ok((flow + volt).min(s_fail.next_down()))
}

pub fn severity(
    base: &PowerFlowSolution,
    post: &PowerFlowSolution,
    cfg: &SeverityConfig,
) -> Result<f64> {
    severity_index(base, post, cfg.s_fail)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    ConvergentInBand,
    ConvergentOutOfBand,
    Nonconvergent,
}

pub fn classify(s: f64, cfg: &SeverityConfig) -> Outcome {
    if s == cfg.s_fail {
        Outcome::Nonconvergent
    } else if s >= cfg.band.0 && s <= cfg.band.1 {
        Outcome::ConvergentInBand
    } else {
        Outcome::ConvergentOutOfBand
    }
}

/// Single-outage effects and the pairwise interaction term of a line pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub r_i: f64,
    pub r_j: f64,
    pub i_ij: f64,
    pub s_ij: f64,
}

/// Decomposes `S(e_i + e_j) = r_i + r_j + I_ij` for contingency positions `i != j`.
pub fn interaction_decomposition(
    case: &NetworkCase,
    state: &OperatingState,
    i: usize,
    j: usize,
    s_fail: f64,
    opts: &SolverOptions,
) -> Result<Interaction> {
    let n = case.n_contingencable();
    if i == j || i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "need distinct positions < {n}, got {i}, {j}"
        )));
    }
    let base = solve_acpf(case, state, &ContingencyVector::empty(n), opts)?;
    let s = |pos: Vec<usize>| -> Result<f64> {
        let c = ContingencyVector::from_positions(n, pos)?;
        let post = solve_acpf(case, state, &c, opts)?;
        severity_index(&base, &post, s_fail)
    };
    let r_i = s(vec![i])?;
    let r_j = s(vec![j])?;
    let s_ij = s(vec![i, j])?;
    Ok(Interaction {
        r_i,
        r_j,
        i_ij: s_ij - r_i - r_j,
        s_ij,
    })
}

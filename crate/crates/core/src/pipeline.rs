//! Offline and online phases of the screening workflow, the baselines, and
//! the evaluation tables (top-m curves, outcome composition, runtime scaling).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contingency::{self, ContingencyVector, FeasibleSetSpec};
use crate::coverage::{self, CaptureEstimate};
use crate::diffusion::{
    self, DenoiserModel, DenoiserOptions, DiffusionExample, MeanForm, NoiseSchedule, SamplerConfig,
    SeverityWeight,
};
use crate::error::{Error, Result};
use crate::grid::{self, NetworkCase, OperatingState, PerturbConfig};
use crate::powerflow::{
    self, Outcome, PowerFlowSolution, SeverityConfig, SolverOptions, DEFAULT_S_FAIL,
};
use crate::surrogate::{self, EvgnnModel, EvgnnOptions, LabeledExample, RiskScorer};
use crate::{cases, par, rng};

/// One labeled (state, contingency) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRecord {
    pub state_id: u64,
    /// Position in generation order within its run.
    pub order: usize,
    /// Outaged contingency positions.
    pub outages: Vec<usize>,
    /// 1-based branch-table rows of the outaged branches.
    pub branches: Vec<usize>,
    pub severity: f64,
    pub converged: bool,
    pub islanding: bool,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SeverityRecord {
    pub fn contingency(&self, n: usize) -> Result<ContingencyVector> {
        ContingencyVector::from_positions(n, self.outages.clone())
    }

    pub fn k(&self) -> usize {
        self.outages.len()
    }
}

/// Severity of `c` for a state whose base case solved to `base`.
/// Islanding patterns get the sentinel and are flagged.
pub fn label_contingency(
    case: &NetworkCase,
    state: &OperatingState,
    base: &PowerFlowSolution,
    c: &ContingencyVector,
    s_fail: f64,
    solver: &SolverOptions,
) -> Result<(f64, bool, bool)> {
    if !grid::is_connected(case, c) {
        return Ok((s_fail, false, true));
    }
    let post = powerflow::solve_acpf(case, state, c, solver)?;
    Ok((
        powerflow::severity_index(base, &post, s_fail)?,
        post.converged,
        false,
    ))
}

fn base_solution(
    case: &NetworkCase,
    state: &OperatingState,
    solver: &SolverOptions,
) -> Result<PowerFlowSolution> {
    let base = powerflow::solve_acpf(
        case,
        state,
        &ContingencyVector::empty(case.n_contingencable()),
        solver,
    )?;
    if !base.converged {
        return Err(Error::InfeasibleRegime(1));
    }
    Ok(base)
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    case: &NetworkCase,
    state: &OperatingState,
    base: &PowerFlowSolution,
    c: &ContingencyVector,
    order: usize,
    seed: Option<u64>,
    sev: &SeverityConfig,
    solver: &SolverOptions,
) -> Result<SeverityRecord> {
    let (severity, converged, islanding) =
        label_contingency(case, state, base, c, sev.s_fail, solver)?;
    Ok(SeverityRecord {
        state_id: state.state_id,
        order,
        outages: c.outages().to_vec(),
        branches: c.branch_numbers(case),
        severity,
        converged,
        islanding,
        outcome: powerflow::classify(severity, sev),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub perturb: PerturbConfig,
    pub solver: SolverOptions,
    pub s_fail: f64,
    /// Keep islanding single outages, labeled with the sentinel.
    pub islanding_as_fail: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            perturb: PerturbConfig::default(),
            solver: SolverOptions::default(),
            s_fail: DEFAULT_S_FAIL,
            islanding_as_fail: true,
        }
    }
}

/// Base case plus every single outage, for each of a pool of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetN1 {
    pub case_name: String,
    pub n: usize,
    /// Nearest-rank 90th percentile of convergent single-outage severities.
    pub tau: f64,
    pub s_fail: f64,
    pub states: Vec<OperatingState>,
    pub records: Vec<SeverityRecord>,
}

impl DatasetN1 {
    pub fn severity_config(&self) -> Result<SeverityConfig> {
        SeverityConfig::new(self.tau, self.s_fail, (self.tau, self.s_fail))
    }

    pub fn state(&self, id: u64) -> Option<&OperatingState> {
        self.states.iter().find(|s| s.state_id == id)
    }

    /// Surrogate training examples (base and single outages).
    pub fn examples(&self) -> Result<Vec<LabeledExample>> {
        let by_id: HashMap<u64, &OperatingState> =
            self.states.iter().map(|s| (s.state_id, s)).collect();
        self.records
            .iter()
            .map(|r| {
                let st = by_id.get(&r.state_id).ok_or_else(|| {
                    Error::Validation(format!("record for unknown state {}", r.state_id))
                })?;
                Ok(LabeledExample::new(st, &r.contingency(self.n)?, r.severity))
            })
            .collect()
    }
}

/// Draws `n` operating states with ids `first_id..first_id + n`.
pub fn sample_states(
    case: &NetworkCase,
    n: usize,
    first_id: u64,
    seed: u64,
    cfg: &PerturbConfig,
    solver: &SolverOptions,
) -> Result<Vec<OperatingState>> {
    par::map_range(n, |i| {
        let id = first_id + i as u64;
        grid::perturb_state(case, id, rng::derive_seed(seed, &[id]), cfg, solver)
    })
    .into_iter()
    .collect()
}

/// Nearest-rank 90th percentile of convergent single-outage severities.
pub fn tau_from_records(records: &[SeverityRecord]) -> Result<f64> {
    let s: Vec<f64> = records
        .iter()
        .filter(|r| r.k() == 1 && r.converged)
        .map(|r| r.severity)
        .collect();
    if s.is_empty() {
        return Err(Error::InvalidArgument(
            "no convergent single-outage records".into(),
        ));
    }
    Ok(surrogate::nearest_rank(&s, 0.9))
}

pub fn build_n1_dataset(
    case: &NetworkCase,
    n_states: usize,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<DatasetN1> {
    if n_states == 0 {
        return Err(Error::InvalidArgument("n_states must be at least 1".into()));
    }
    let states = sample_states(case, n_states, 0, seed, &cfg.perturb, &cfg.solver)?;
    let n = case.n_contingencable();
    // Outcomes are assigned once tau is known.
    let provisional =
        SeverityConfig::new(cfg.s_fail / 2.0, cfg.s_fail, (cfg.s_fail / 2.0, cfg.s_fail))?;
    let per_state = par::map(&states, |st| -> Result<Vec<SeverityRecord>> {
        let base = base_solution(case, st, &cfg.solver)?;
        let mut out = Vec::with_capacity(n + 1);
        out.push(make_record(
            case,
            st,
            &base,
            &ContingencyVector::empty(n),
            0,
            None,
            &provisional,
            &cfg.solver,
        )?);
        for p in 0..n {
            let c = ContingencyVector::from_positions(n, vec![p])?;
            let r = make_record(case, st, &base, &c, p + 1, None, &provisional, &cfg.solver)?;
            if r.islanding && !cfg.islanding_as_fail {
                continue;
            }
            out.push(r);
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for r in per_state {
        records.extend(r?);
    }
    let tau = tau_from_records(&records)?;
    let sev = SeverityConfig::new(tau, cfg.s_fail, (tau, cfg.s_fail))?;
    for r in &mut records {
        r.outcome = powerflow::classify(r.severity, &sev);
    }
    Ok(DatasetN1 {
        case_name: case.name.clone(),
        n,
        tau,
        s_fail: cfg.s_fail,
        states,
        records,
    })
}

/// Surrogate-selected high-risk patterns per state, each AC-labeled.
#[allow(clippy::too_many_arguments)]
pub fn build_nk_training_set(
    case: &NetworkCase,
    scorer: &dyn RiskScorer,
    states: &[OperatingState],
    k_range: (usize, usize),
    pool: usize,
    retain: usize,
    seed: u64,
    sev: &SeverityConfig,
    solver: &SolverOptions,
) -> Result<Vec<SeverityRecord>> {
    if retain == 0 {
        return Ok(Vec::new());
    }
    let entries =
        surrogate::build_high_risk_set(scorer, case, states, k_range, pool, retain, seed)?;
    let bases: Vec<PowerFlowSolution> = par::map(states, |s| base_solution(case, s, solver))
        .into_iter()
        .collect::<Result<_>>()?;
    par::map_range(entries.len(), |i| {
        let e = &entries[i];
        let st = &states[e.state_index];
        make_record(
            case,
            st,
            &bases[e.state_index],
            &e.contingency,
            i,
            None,
            sev,
            solver,
        )
    })
    .into_iter()
    .collect()
}

/// Pairs labeled records with their states' features.
pub fn diffusion_examples(
    states: &[OperatingState],
    records: &[SeverityRecord],
    n: usize,
) -> Result<Vec<DiffusionExample>> {
    let by_id: HashMap<u64, &OperatingState> = states.iter().map(|s| (s.state_id, s)).collect();
    records
        .iter()
        .map(|r| {
            let st = by_id.get(&r.state_id).ok_or_else(|| {
                Error::Validation(format!("record for unknown state {}", r.state_id))
            })?;
            Ok(DiffusionExample {
                x: st.feature_vector.clone(),
                c: r.contingency(n)?,
                s: r.severity,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Diffusion,
    #[serde(alias = "uniform-random")]
    Random,
    EvgnnRank,
    Exhaustive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Diffusion => "diffusion",
            Method::Random => "random",
            Method::EvgnnRank => "evgnn-rank",
            Method::Exhaustive => "exhaustive",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(Method::Diffusion),
            "random" | "uniform-random" => Ok(Method::Random),
            "evgnn-rank" => Ok(Method::EvgnnRank),
            "exhaustive" => Ok(Method::Exhaustive),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Trained generator, surrogate and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub surrogate: EvgnnModel,
    pub denoiser: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
}

pub struct ScreenContext<'a> {
    pub case: &'a NetworkCase,
    pub models: Option<&'a Models>,
    pub sev: SeverityConfig,
    pub solver: SolverOptions,
    pub spec: FeasibleSetSpec,
    /// Largest candidate set the exhaustive and ranking methods will enumerate.
    pub exhaustive_cap: usize,
}

/// Validated candidates of one method on one state, most severe first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRun {
    pub method: Method,
    pub state_id: u64,
    pub budget: usize,
    pub solves: usize,
    pub records: Vec<SeverityRecord>,
}

/// Severity descending; ties by branch list.
pub fn sort_records(records: &mut [SeverityRecord]) {
    records.sort_by(|a, b| {
        b.severity
            .total_cmp(&a.severity)
            .then_with(|| a.branches.cmp(&b.branches))
    });
}

fn enumerate_capped(ctx: &ScreenContext, spec: &FeasibleSetSpec) -> Result<Vec<ContingencyVector>> {
    let all: Vec<ContingencyVector> = contingency::enumerate_feasible(ctx.case, spec)?
        .take(ctx.exhaustive_cap + 1)
        .collect();
    if all.len() > ctx.exhaustive_cap {
        return Err(Error::InvalidArgument(format!(
            "feasible set exceeds the enumeration cap {}",
            ctx.exhaustive_cap
        )));
    }
    Ok(all)
}

fn uniform_candidates(
    ctx: &ScreenContext,
    m: usize,
    dedup: bool,
    seed: u64,
) -> Result<Vec<(ContingencyVector, u64)>> {
    let mut out = Vec::with_capacity(m);
    let mut seen = BTreeSet::new();
    let mut i = 0u64;
    while out.len() < m && i < 20 * m as u64 {
        let s = rng::derive_seed(seed, &[i]);
        let c = contingency::uniform_sample(ctx.case, &ctx.spec, s)?;
        if !dedup || seen.insert(c.clone()) {
            out.push((c, s));
        }
        i += 1;
    }
    Ok(out)
}

/// Produces candidates with `method` at budget `m` and AC-validates each.
pub fn screen(
    ctx: &ScreenContext,
    method: Method,
    state: &OperatingState,
    m: usize,
    seed: u64,
) -> Result<ScreeningRun> {
    let need_models = || {
        ctx.models.ok_or_else(|| {
            Error::InvalidArgument(format!("method {} needs trained models", method.name()))
        })
    };
    let candidates: Vec<(ContingencyVector, Option<u64>)> =
        if m == 0 && method != Method::Exhaustive {
            Vec::new()
        } else {
            match method {
                Method::Diffusion => {
                    let md = need_models()?;
                    diffusion::generate_samples(
                        &md.denoiser,
                        Some(&md.surrogate),
                        &md.schedule,
                        ctx.case,
                        &state.feature_vector,
                        &ctx.spec,
                        m,
                        &md.sampler,
                        seed,
                    )?
                    .into_iter()
                    .map(|g| (g.contingency, Some(g.seed)))
                    .collect()
                }
                Method::Random => {
                    let dedup = ctx.models.is_none_or(|md| md.sampler.dedup);
                    uniform_candidates(ctx, m, dedup, seed)?
                        .into_iter()
                        .map(|(c, s)| (c, Some(s)))
                        .collect()
                }
                Method::EvgnnRank => {
                    let md = need_models()?;
                    let all = enumerate_capped(ctx, &ctx.spec)?;
                    let scores = par::map(&all, |c| {
                        md.surrogate.risk(ctx.case, &state.feature_vector, c)
                    });
                    let mut scored = all
                        .into_iter()
                        .zip(scores)
                        .map(|(c, s)| Ok((s?, c)))
                        .collect::<Result<Vec<_>>>()?;
                    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
                    scored.into_iter().take(m).map(|(_, c)| (c, None)).collect()
                }
                Method::Exhaustive => enumerate_capped(ctx, &ctx.spec)?
                    .into_iter()
                    .map(|c| (c, None))
                    .collect(),
            }
        };
    let base = base_solution(ctx.case, state, &ctx.solver)?;
    let mut records = par::map_range(candidates.len(), |i| {
        let (c, s) = &candidates[i];
        // A failed solve counts as nonconvergent rather than aborting the run.
        make_record(ctx.case, state, &base, c, i, *s, &ctx.sev, &ctx.solver).unwrap_or_else(|_| {
            SeverityRecord {
                state_id: state.state_id,
                order: i,
                outages: c.outages().to_vec(),
                branches: c.branch_numbers(ctx.case),
                severity: ctx.sev.s_fail,
                converged: false,
                islanding: false,
                outcome: Outcome::Nonconvergent,
                seed: *s,
            }
        })
    });
    sort_records(&mut records);
    Ok(ScreeningRun {
        method,
        state_id: state.state_id,
        budget: if method == Method::Exhaustive {
            records.len()
        } else {
            m
        },
        solves: records.len(),
        records,
    })
}

/// Online phase: size the budget from the capture bound, generate and validate.
pub fn screen_online(
    ctx: &ScreenContext,
    state: &OperatingState,
    delta_miss: f64,
    capture: &CaptureEstimate,
    seed: u64,
) -> Result<ScreeningRun> {
    let b = coverage::required_budget(capture.p_lower, delta_miss)?;
    screen(ctx, Method::Diffusion, state, b, seed)
}

/// Capture probability of the generator: fraction of generated candidates
/// with `s >= tau` over calibration states.
pub fn estimate_capture(
    ctx: &ScreenContext,
    states: &[OperatingState],
    per_state: usize,
    confidence: f64,
    seed: u64,
) -> Result<CaptureEstimate> {
    let mut severities = Vec::new();
    for (i, st) in states.iter().enumerate() {
        let run = screen(
            ctx,
            Method::Diffusion,
            st,
            per_state,
            rng::derive_seed(seed, &[i as u64]),
        )?;
        severities.extend(run.records.iter().map(|r| r.severity));
    }
    CaptureEstimate::from_severities(&severities, ctx.sev.tau, confidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopmCurve {
    /// `(m, mean top-m severity)` for `m = 1..=m_max`.
    pub points: Vec<(usize, f64)>,
    /// States without any convergent record.
    pub excluded_states: usize,
}

pub fn topm_curve(runs: &[ScreeningRun], m_max: usize) -> Result<TopmCurve> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no screening runs".into()));
    }
    let mut per_state: Vec<Vec<f64>> = Vec::new();
    let mut excluded = 0;
    for run in runs {
        let mut s: Vec<f64> = run
            .records
            .iter()
            .filter(|r| r.converged)
            .map(|r| r.severity)
            .collect();
        if s.is_empty() {
            excluded += 1;
            continue;
        }
        s.sort_by(|a, b| b.total_cmp(a));
        per_state.push(s);
    }
    if per_state.is_empty() {
        return Err(Error::InvalidArgument(
            "no state has a convergent record".into(),
        ));
    }
    let points = (1..=m_max)
        .map(|m| {
            let total: f64 = per_state
                .iter()
                .map(|s| {
                    let top = &s[..m.min(s.len())];
                    top.iter().sum::<f64>() / top.len() as f64
                })
                .sum();
            (m, total / per_state.len() as f64)
        })
        .collect();
    Ok(TopmCurve {
        points,
        excluded_states: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub records: usize,
    pub convergent_in_band: f64,
    pub convergent_out_of_band: f64,
    pub nonconvergent: f64,
    /// Share of records whose power flow converged.
    pub convergence_rate: f64,
    /// In-band share among convergent records.
    pub in_band_rate: f64,
}

pub fn outcome_composition(runs: &[ScreeningRun]) -> Result<Composition> {
    let mut counts = [0usize; 3];
    for r in runs.iter().flat_map(|r| &r.records) {
        counts[match r.outcome {
            Outcome::ConvergentInBand => 0,
            Outcome::ConvergentOutOfBand => 1,
            Outcome::Nonconvergent => 2,
        }] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no records".into()));
    }
    let t = total as f64;
    let conv = counts[0] + counts[1];
    Ok(Composition {
        records: total,
        convergent_in_band: counts[0] as f64 / t,
        convergent_out_of_band: counts[1] as f64 / t,
        nonconvergent: counts[2] as f64 / t,
        convergence_rate: conv as f64 / t,
        in_band_rate: if conv == 0 {
            0.0
        } else {
            counts[0] as f64 / conv as f64
        },
    })
}

/// Record-weighted pooling of per-system `(records, convergence %, in-band %)` rows.
pub fn pool_rates(rows: &[(f64, f64, f64)]) -> (f64, f64) {
    let n: f64 = rows.iter().map(|r| r.0).sum();
    let conv: f64 = rows.iter().map(|r| r.0 * r.1).sum();
    let inb: f64 = rows.iter().map(|r| r.0 * r.1 * r.2).sum();
    (conv / n, inb / conv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub method: Method,
    pub seconds: f64,
    pub solves: usize,
    pub candidates: usize,
    pub note: String,
}

/// Wall-clock of exhaustive, surrogate-ranked and generative screening per k.
pub fn runtime_benchmark(
    ctx: &ScreenContext,
    state: &OperatingState,
    k_list: &[usize],
    m: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    // Generative rows draw m samples and validate each one, duplicates included.
    let raw = ctx.models.map(|md| Models {
        sampler: SamplerConfig {
            dedup: false,
            ..md.sampler
        },
        ..md.clone()
    });
    let mut rows = Vec::new();
    for &k in k_list {
        let sub = ScreenContext {
            case: ctx.case,
            models: raw.as_ref(),
            sev: ctx.sev,
            solver: ctx.solver.clone(),
            spec: ctx.spec.at(k),
            exhaustive_cap: ctx.exhaustive_cap,
        };
        let methods: &[Method] = if ctx.models.is_some() {
            &[Method::Exhaustive, Method::EvgnnRank, Method::Diffusion]
        } else {
            &[Method::Exhaustive]
        };
        for &method in methods {
            let t0 = Instant::now();
            match screen(&sub, method, state, m, rng::derive_seed(seed, &[k as u64])) {
                Ok(run) => rows.push(BenchRow {
                    k,
                    method,
                    seconds: t0.elapsed().as_secs_f64(),
                    solves: run.solves,
                    candidates: run.records.len(),
                    note: String::new(),
                }),
                Err(Error::InvalidArgument(msg)) if msg.contains("cap") => rows.push(BenchRow {
                    k,
                    method,
                    seconds: f64::NAN,
                    solves: 0,
                    candidates: 0,
                    note: "skipped: enumeration cap".into(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

/// JSON-lines encoding, one value per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// CSV with the given header row, present even when `rows` is empty.
pub fn to_csv<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn topm_csv(curves: &[(Method, TopmCurve)]) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        method: &'static str,
        m: usize,
        mean_top_m_severity: f64,
    }
    to_csv(
        &["method", "m", "mean_top_m_severity"],
        curves.iter().flat_map(|(method, c)| {
            c.points.iter().map(move |&(m, v)| Row {
                method: method.name(),
                m,
                mean_top_m_severity: v,
            })
        }),
    )
}

pub fn composition_csv(rows: &[(Method, Composition)]) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        method: &'static str,
        records: usize,
        convergent_in_band: f64,
        convergent_out_of_band: f64,
        nonconvergent: f64,
        convergence_rate: f64,
        in_band_rate: f64,
    }
    to_csv(
        &[
            "method",
            "records",
            "convergent_in_band",
            "convergent_out_of_band",
            "nonconvergent",
            "convergence_rate",
            "in_band_rate",
        ],
        rows.iter().map(|(m, c)| Row {
            method: m.name(),
            records: c.records,
            convergent_in_band: c.convergent_in_band,
            convergent_out_of_band: c.convergent_out_of_band,
            nonconvergent: c.nonconvergent,
            convergence_rate: c.convergence_rate,
            in_band_rate: c.in_band_rate,
        }),
    )
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        k: usize,
        method: &'static str,
        seconds: f64,
        solves: usize,
        candidates: usize,
        note: &'a str,
    }
    to_csv(
        &["k", "method", "seconds", "solves", "candidates", "note"],
        rows.iter().map(|r| Row {
            k: r.k,
            method: r.method.name(),
            seconds: r.seconds,
            solves: r.solves,
            candidates: r.candidates,
            note: &r.note,
        }),
    )
}

/// Screened list of one run as CSV.
pub fn records_csv(records: &[SeverityRecord]) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        state_id: u64,
        rank: usize,
        order: usize,
        branches: String,
        severity: f64,
        converged: bool,
        outcome: &'static str,
    }
    to_csv(
        &[
            "state_id",
            "rank",
            "order",
            "branches",
            "severity",
            "converged",
            "outcome",
        ],
        records.iter().enumerate().map(|(i, r)| Row {
            state_id: r.state_id,
            rank: i + 1,
            order: r.order,
            branches: r
                .branches
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            severity: r.severity,
            converged: r.converged,
            outcome: match r.outcome {
                Outcome::ConvergentInBand => "convergent-in-band",
                Outcome::ConvergentOutOfBand => "convergent-out-of-band",
                Outcome::Nonconvergent => "nonconvergent",
            },
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub mean_form: MeanForm,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_lo: 1e-4,
            beta_hi: 0.1,
            mean_form: MeanForm::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    pub delta_miss: f64,
    pub confidence: f64,
    /// Generated candidates per calibration state used to estimate capture.
    pub calibration_samples: usize,
    pub calibration_states: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            delta_miss: 0.01,
            confidence: 0.95,
            calibration_samples: 20,
            calibration_states: 10,
        }
    }
}

/// Every knob of the workflow, with defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    /// Bundled case name (`case14`, ...) or path to a MATPOWER file.
    pub case: String,
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Overrides the dataset-derived threshold when set.
    pub tau: Option<f64>,
    pub schedule: ScheduleConfig,
    pub surrogate: EvgnnOptions,
    pub denoiser: DenoiserOptions,
    /// Extra loss weight for training patterns with `s >= tau`.
    pub gamma: f64,
    pub sampler: SamplerConfig,
    /// Defaults to the bundled range for the case.
    pub k_range: Option<(usize, usize)>,
    pub train_states: usize,
    pub eval_states: usize,
    pub pool: usize,
    pub retain: usize,
    pub budget: BudgetConfig,
    /// Fixed budget used for method comparisons.
    pub eval_budget: usize,
    pub exhaustive_cap: usize,
    pub bench_k: Vec<usize>,
    pub bench_m: usize,
    /// Worker threads; `0` uses every available core.
    pub parallelism: usize,
    pub output_dir: String,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            case: "case14".into(),
            seed: 1,
            dataset: DatasetConfig::default(),
            tau: None,
            schedule: ScheduleConfig::default(),
            surrogate: EvgnnOptions::default(),
            denoiser: DenoiserOptions::default(),
            gamma: 4.0,
            sampler: SamplerConfig {
                dedup: true,
                ..SamplerConfig::default()
            },
            k_range: None,
            train_states: 40,
            eval_states: 20,
            pool: 200,
            retain: 20,
            budget: BudgetConfig::default(),
            eval_budget: 20,
            exhaustive_cap: 20_000,
            bench_k: vec![1, 2, 3, 4],
            bench_m: 50,
            parallelism: 0,
            output_dir: "run".into(),
        }
    }
}

impl WorkflowConfig {
    pub fn load_case(&self) -> Result<NetworkCase> {
        let looks_like_path = self.case.contains(['/', '\\', '.']);
        match cases::by_name(&self.case) {
            Some(c) if !looks_like_path => Ok(c),
            _ => crate::matpower::parse_case(&std::fs::read_to_string(&self.case)?),
        }
    }

    pub fn k_range(&self, case: &NetworkCase) -> (usize, usize) {
        self.k_range.unwrap_or_else(|| cases::default_k_range(case))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        diffusion::make_schedule(
            self.schedule.steps,
            self.schedule.beta_lo,
            self.schedule.beta_hi,
        )
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            mean_form: self.schedule.mean_form,
            ..self.sampler
        }
    }

    /// States used for evaluation, disjoint from the training ids.
    pub fn eval_states(&self, case: &NetworkCase) -> Result<Vec<OperatingState>> {
        sample_states(
            case,
            self.eval_states,
            EVAL_ID_OFFSET,
            rng::derive_seed(self.seed, &[stage::EVAL]),
            &self.dataset.perturb,
            &self.dataset.solver,
        )
    }
}

pub const EVAL_ID_OFFSET: u64 = 1_000_000;
const CALIBRATION_ID_OFFSET: u64 = 2_000_000;

/// Seed-path labels of the workflow stages.
pub mod stage {
    pub const DATASET: u64 = 1;
    pub const SURROGATE: u64 = 2;
    pub const HIGH_RISK: u64 = 3;
    pub const DENOISER: u64 = 4;
    pub const CALIBRATION: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const SCREEN: u64 = 7;
}

/// Everything the offline phase produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineArtifacts {
    pub dataset: DatasetN1,
    pub training_set: Vec<SeverityRecord>,
    pub models: Models,
    pub capture: CaptureEstimate,
}

impl OfflineArtifacts {
    pub fn context<'a>(
        &'a self,
        case: &'a NetworkCase,
        cfg: &WorkflowConfig,
    ) -> Result<ScreenContext<'a>> {
        let (lo, hi) = cfg.k_range(case);
        Ok(ScreenContext {
            case,
            models: Some(&self.models),
            sev: self.dataset.severity_config()?,
            solver: cfg.dataset.solver.clone(),
            spec: FeasibleSetSpec::range(lo, hi),
            exhaustive_cap: cfg.exhaustive_cap,
        })
    }
}

pub fn dataset_stage(case: &NetworkCase, cfg: &WorkflowConfig) -> Result<DatasetN1> {
    let mut ds = build_n1_dataset(
        case,
        cfg.train_states,
        rng::derive_seed(cfg.seed, &[stage::DATASET]),
        &cfg.dataset,
    )?;
    if let Some(tau) = cfg.tau {
        ds.tau = tau;
        let sev = ds.severity_config()?;
        for r in &mut ds.records {
            r.outcome = powerflow::classify(r.severity, &sev);
        }
    }
    Ok(ds)
}

/// Surrogate, high-risk set, denoiser and capture estimate from a dataset.
pub fn train_stage(
    case: &NetworkCase,
    cfg: &WorkflowConfig,
    dataset: DatasetN1,
) -> Result<OfflineArtifacts> {
    let sev = dataset.severity_config()?;
    let surrogate = surrogate::train_evgnn(
        case,
        &dataset.examples()?,
        &cfg.surrogate,
        rng::derive_seed(cfg.seed, &[stage::SURROGATE]),
    )?;
    let training_set = build_nk_training_set(
        case,
        &surrogate,
        &dataset.states,
        cfg.k_range(case),
        cfg.pool,
        cfg.retain,
        rng::derive_seed(cfg.seed, &[stage::HIGH_RISK]),
        &sev,
        &cfg.dataset.solver,
    )?;
    let schedule = cfg.schedule()?;
    let examples = diffusion_examples(&dataset.states, &training_set, dataset.n)?;
    let weight = SeverityWeight {
        tau: dataset.tau,
        gamma: cfg.gamma,
    };
    let denoiser = diffusion::train_denoiser(
        &examples,
        &schedule,
        &cfg.denoiser,
        &weight,
        rng::derive_seed(cfg.seed, &[stage::DENOISER]),
    )?;
    let mut art = OfflineArtifacts {
        dataset,
        training_set,
        models: Models {
            surrogate,
            denoiser,
            schedule,
            sampler: cfg.sampler(),
        },
        capture: CaptureEstimate::from_counts(0, 1, cfg.budget.confidence)?,
    };
    let calib_seed = rng::derive_seed(cfg.seed, &[stage::CALIBRATION]);
    let calib = sample_states(
        case,
        cfg.budget.calibration_states,
        CALIBRATION_ID_OFFSET,
        calib_seed,
        &cfg.dataset.perturb,
        &cfg.dataset.solver,
    )?;
    art.capture = estimate_capture(
        &art.context(case, cfg)?,
        &calib,
        cfg.budget.calibration_samples,
        cfg.budget.confidence,
        calib_seed,
    )?;
    Ok(art)
}

pub fn run_offline(case: &NetworkCase, cfg: &WorkflowConfig) -> Result<OfflineArtifacts> {
    let ds = dataset_stage(case, cfg)?;
    train_stage(case, cfg, ds)
}

/// Fixed-budget runs of `method` on every state; per-state seeds derive from `seed`.
pub fn screen_states(
    ctx: &ScreenContext,
    method: Method,
    states: &[OperatingState],
    m: usize,
    seed: u64,
) -> Result<Vec<ScreeningRun>> {
    states
        .iter()
        .map(|st| screen(ctx, method, st, m, rng::derive_seed(seed, &[st.state_id])))
        .collect()
}

/// Per-method evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub runs: BTreeMap<Method, Vec<ScreeningRun>>,
    pub curves: Vec<(Method, TopmCurve)>,
    pub composition: Vec<(Method, Composition)>,
}

pub fn evaluate(
    ctx: &ScreenContext,
    methods: &[Method],
    states: &[OperatingState],
    m: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut runs = BTreeMap::new();
    let mut curves = Vec::new();
    let mut composition = Vec::new();
    for &method in methods {
        let r = screen_states(ctx, method, states, m, seed)?;
        curves.push((method, topm_curve(&r, m)?));
        composition.push((method, outcome_composition(&r)?));
        runs.insert(method, r);
    }
    Ok(Evaluation {
        runs,
        curves,
        composition,
    })
}

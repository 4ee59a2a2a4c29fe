use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nkscreen::contingency::{self, FeasibleSetSpec};
use nkscreen::coverage::{self, CaptureEstimate};
use nkscreen::pipeline::{
    self, stage, DatasetN1, Method, Models, ScreenContext, ScreeningRun, SeverityRecord,
    WorkflowConfig,
};
use nkscreen::{
    diffusion, matpower, rng, surrogate, Error, NetworkCase, OperatingState, SeverityConfig,
};

#[derive(Parser)]
#[command(
    name = "nkscreen",
    version,
    about = "Risk-directed generative N-k contingency screening"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON workflow configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores (overrides the config).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample operating states and label every single outage.
    Dataset,
    /// Train the surrogate and the generator from the dataset in the output directory.
    Train,
    /// Screen operating states with one method and validate every candidate.
    Screen {
        #[arg(long, default_value = "diffusion")]
        method: Method,
        /// Fixed budget per state instead of the one implied by the capture bound.
        #[arg(long)]
        budget: Option<usize>,
        /// JSON-lines file of operating states; defaults to the configured evaluation states.
        #[arg(long)]
        states: Option<PathBuf>,
    },
    /// Build top-m, composition and coverage tables from the screening runs.
    Evaluate,
    /// Time exhaustive, surrogate-ranked and generative screening across k.
    Bench {
        /// Restrict the generative rows to one method's timing.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Exhaustively label the feasible set of each evaluation state.
    Oracle {
        #[arg(long)]
        states: Option<PathBuf>,
    },
}

const DATASET_META: &str = "dataset.json";
const STATES: &str = "states.jsonl";
const N1_RECORDS: &str = "n1_records.jsonl";
const MODELS: &str = "models.json";
const CAPTURE: &str = "capture.json";

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    case_name: String,
    n: usize,
    tau: f64,
    s_fail: f64,
    states: usize,
    records: usize,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    case: String,
    case_hash: String,
    config_hash: String,
    seeds: BTreeMap<String, u64>,
    model_versions: BTreeMap<String, u32>,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects outputs in memory so a failing command leaves no partial files.
struct Run {
    out: PathBuf,
    command: String,
    inputs: Vec<FileEntry>,
    outputs: Vec<(String, Vec<u8>)>,
    seeds: BTreeMap<String, u64>,
}

impl Run {
    fn new(cfg: &WorkflowConfig, command: &str) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("root".to_string(), cfg.seed);
        Self {
            out: PathBuf::from(&cfg.output_dir),
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds,
        }
    }

    fn seed(&mut self, name: &str, path: &[u64]) -> u64 {
        let s = rng::derive_seed(self.seeds["root"], path);
        self.seeds.insert(name.to_string(), s);
        s
    }

    fn read(&mut self, name: &str, hint: &str) -> Result<String> {
        let path = self.out.join(name);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}; {hint}", path.display()))?;
        self.inputs.push(FileEntry {
            path: name.to_string(),
            bytes: text.len(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(text)
    }

    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.into(), bytes.into()));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    fn finish(self, cfg: &WorkflowConfig, case: &NetworkCase) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create {}", self.out.display()))?;
        let mut outputs = Vec::new();
        for (name, bytes) in &self.outputs {
            let path = self.out.join(name);
            fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
            outputs.push(FileEntry {
                path: name.clone(),
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            tool: "nkscreen",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            case: cfg.case.clone(),
            case_hash: sha256_hex(matpower::write_case(case).as_bytes()),
            config_hash: config_hash(cfg)?,
            seeds: self.seeds,
            model_versions: BTreeMap::from([
                ("surrogate".to_string(), surrogate::MODEL_VERSION),
                ("denoiser".to_string(), diffusion::MODEL_VERSION),
            ]),
            inputs: self.inputs,
            outputs,
        };
        let path = self.out.join(format!("manifest_{}.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        for (name, _) in &self.outputs {
            println!("{}", self.out.join(name).display());
        }
        Ok(())
    }
}

/// Hash of the fields that affect results (output location and thread count excluded).
fn config_hash(cfg: &WorkflowConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir.clear();
    c.parallelism = 0;
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

fn load_config(common: &Common) -> Result<WorkflowConfig> {
    let mut cfg: WorkflowConfig = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid config {}", p.display()))?
        }
        None => WorkflowConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    if let Some(p) = common.parallelism {
        cfg.parallelism = p;
    }
    Ok(cfg)
}

fn load_case(cfg: &WorkflowConfig) -> Result<NetworkCase> {
    cfg.load_case()
        .with_context(|| format!("cannot load case `{}`", cfg.case))
}

fn load_dataset(run: &mut Run, case: &NetworkCase) -> Result<DatasetN1> {
    let hint = "run `nkscreen dataset` first";
    let meta: DatasetMeta = serde_json::from_str(&run.read(DATASET_META, hint)?)?;
    if meta.case_name != case.name || meta.n != case.n_contingencable() {
        bail!(
            "dataset was built for case `{}`, not `{}`",
            meta.case_name,
            case.name
        );
    }
    Ok(DatasetN1 {
        case_name: meta.case_name,
        n: meta.n,
        tau: meta.tau,
        s_fail: meta.s_fail,
        states: pipeline::from_jsonl(&run.read(STATES, hint)?)?,
        records: pipeline::from_jsonl(&run.read(N1_RECORDS, hint)?)?,
    })
}

fn load_meta(run: &mut Run) -> Result<DatasetMeta> {
    Ok(serde_json::from_str(
        &run.read(DATASET_META, "run `nkscreen dataset` first")?,
    )?)
}

fn load_models(run: &mut Run) -> Result<Models> {
    let models: Models = serde_json::from_str(&run.read(MODELS, "run `nkscreen train` first")?)?;
    if models.surrogate.version != surrogate::MODEL_VERSION
        || models.denoiser.version != diffusion::MODEL_VERSION
    {
        bail!("{MODELS} was written by an incompatible version");
    }
    Ok(models)
}

fn load_states(
    run: &mut Run,
    cfg: &WorkflowConfig,
    case: &NetworkCase,
    path: Option<&Path>,
) -> Result<Vec<OperatingState>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read states {}", p.display()))?;
            run.inputs.push(FileEntry {
                path: p.to_string_lossy().into_owned(),
                bytes: text.len(),
                sha256: sha256_hex(text.as_bytes()),
            });
            let states: Vec<OperatingState> = pipeline::from_jsonl(&text)?;
            for s in &states {
                if s.feature_vector.len() != case.feature_len() {
                    bail!("state {} does not match case `{}`", s.state_id, case.name);
                }
            }
            Ok(states)
        }
        None => {
            run.seed("eval", &[stage::EVAL]);
            Ok(cfg.eval_states(case)?)
        }
    }
}

fn context<'a>(
    cfg: &WorkflowConfig,
    case: &'a NetworkCase,
    models: Option<&'a Models>,
    meta: &DatasetMeta,
) -> Result<ScreenContext<'a>> {
    let (lo, hi) = cfg.k_range(case);
    Ok(ScreenContext {
        case,
        models,
        sev: SeverityConfig::new(meta.tau, meta.s_fail, (meta.tau, meta.s_fail))?,
        solver: cfg.dataset.solver.clone(),
        spec: FeasibleSetSpec::range(lo, hi),
        exhaustive_cap: cfg.exhaustive_cap,
    })
}

fn cmd_dataset(cfg: &WorkflowConfig) -> Result<()> {
    let case = load_case(cfg)?;
    let mut run = Run::new(cfg, "dataset");
    run.seed("dataset", &[stage::DATASET]);
    let ds = pipeline::dataset_stage(&case, cfg)?;
    run.add_json("config.json", cfg)?;
    run.add_json(
        DATASET_META,
        &DatasetMeta {
            case_name: ds.case_name.clone(),
            n: ds.n,
            tau: ds.tau,
            s_fail: ds.s_fail,
            states: ds.states.len(),
            records: ds.records.len(),
        },
    )?;
    run.add(STATES, pipeline::to_jsonl(&ds.states)?);
    run.add(N1_RECORDS, pipeline::to_jsonl(&ds.records)?);
    run.add("n1_records.csv", pipeline::records_csv(&ds.records)?);
    run.finish(cfg, &case)
}

#[derive(Serialize)]
struct TrainMetrics {
    surrogate_final_loss: f64,
    denoiser_initial_loss: Option<f64>,
    denoiser_final_loss: Option<f64>,
    denoiser_loss_decreased: bool,
    denoiser_loss_history: Vec<f64>,
    training_set_size: usize,
    training_set_at_or_above_tau: usize,
    tau: f64,
    capture: CaptureEstimate,
}

fn cmd_train(cfg: &WorkflowConfig) -> Result<()> {
    let case = load_case(cfg)?;
    let mut run = Run::new(cfg, "train");
    let ds = load_dataset(&mut run, &case)?;
    for (name, s) in [
        ("surrogate", stage::SURROGATE),
        ("high_risk", stage::HIGH_RISK),
        ("denoiser", stage::DENOISER),
        ("calibration", stage::CALIBRATION),
    ] {
        run.seed(name, &[s]);
    }
    let tau = ds.tau;
    let art = pipeline::train_stage(&case, cfg, ds)?;
    let hist = &art.models.denoiser.loss_history;
    let metrics = TrainMetrics {
        surrogate_final_loss: art.models.surrogate.final_loss,
        denoiser_initial_loss: hist.first().copied(),
        denoiser_final_loss: hist.last().copied(),
        denoiser_loss_decreased: matches!((hist.first(), hist.last()), (Some(a), Some(b)) if b < a),
        denoiser_loss_history: hist.clone(),
        training_set_size: art.training_set.len(),
        training_set_at_or_above_tau: art
            .training_set
            .iter()
            .filter(|r| r.severity >= tau)
            .count(),
        tau,
        capture: art.capture,
    };
    run.add(MODELS, serde_json::to_string(&art.models)? + "\n");
    run.add_json(CAPTURE, &art.capture)?;
    run.add_json("train_metrics.json", &metrics)?;
    run.add("training_set.jsonl", pipeline::to_jsonl(&art.training_set)?);
    run.finish(cfg, &case)
}

#[derive(Serialize)]
struct RunSummary {
    method: &'static str,
    state_id: u64,
    budget: usize,
    solves: usize,
    convergent: usize,
    in_band: usize,
    max_severity: f64,
}

fn run_summaries(runs: &[ScreeningRun]) -> Vec<RunSummary> {
    runs.iter()
        .map(|r| RunSummary {
            method: r.method.name(),
            state_id: r.state_id,
            budget: r.budget,
            solves: r.solves,
            convergent: r.records.iter().filter(|x| x.converged).count(),
            in_band: r
                .records
                .iter()
                .filter(|x| x.outcome == nkscreen::powerflow::Outcome::ConvergentInBand)
                .count(),
            max_severity: r.records.first().map_or(0.0, |x| x.severity),
        })
        .collect()
}

fn cmd_screen(
    cfg: &WorkflowConfig,
    method: Method,
    budget: Option<usize>,
    states: Option<&Path>,
) -> Result<()> {
    let case = load_case(cfg)?;
    let mut run = Run::new(cfg, &format!("screen_{}", method.name()));
    let meta = load_meta(&mut run)?;
    let models = match method {
        Method::Diffusion | Method::EvgnnRank => Some(load_models(&mut run)?),
        Method::Random | Method::Exhaustive => None,
    };
    let b = match budget {
        Some(b) => b,
        None if method == Method::Exhaustive => 0,
        None => {
            let capture: CaptureEstimate = serde_json::from_str(
                &run.read(CAPTURE, "run `nkscreen train` first or pass --budget")?,
            )?;
            match coverage::required_budget(capture.p_lower, cfg.budget.delta_miss) {
                Ok(b) => b,
                Err(Error::UnboundedBudget) => bail!(
                    "capture lower bound is zero ({} of {} calibration candidates severe): the budget for miss tolerance {} is unbounded",
                    capture.successes,
                    capture.trials,
                    cfg.budget.delta_miss
                ),
                Err(e) => return Err(e.into()),
            }
        }
    };
    let states = load_states(&mut run, cfg, &case, states)?;
    let ctx = context(cfg, &case, models.as_ref(), &meta)?;
    let seed = run.seed("screen", &[stage::SCREEN]);
    let runs = pipeline::screen_states(&ctx, method, &states, b, seed)?;
    let records: Vec<SeverityRecord> = runs
        .iter()
        .flat_map(|r| r.records.iter().cloned())
        .collect();
    let name = method.name();
    run.add(
        format!("screen_{name}.jsonl"),
        pipeline::to_jsonl(&records)?,
    );
    run.add(
        format!("screen_{name}.csv"),
        pipeline::records_csv(&records)?,
    );
    run.add(
        format!("screen_{name}_runs.csv"),
        pipeline::to_csv(
            &[
                "method",
                "state_id",
                "budget",
                "solves",
                "convergent",
                "in_band",
                "max_severity",
            ],
            run_summaries(&runs),
        )?,
    );
    run.finish(cfg, &case)
}

/// Regroups a record file into per-state runs, keeping state order of first appearance.
fn regroup(method: Method, records: Vec<SeverityRecord>) -> Vec<ScreeningRun> {
    let mut order = Vec::new();
    let mut by_state: BTreeMap<u64, Vec<SeverityRecord>> = BTreeMap::new();
    for r in records {
        if !by_state.contains_key(&r.state_id) {
            order.push(r.state_id);
        }
        by_state.entry(r.state_id).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let recs = by_state.remove(&id).unwrap_or_default();
            ScreeningRun {
                method,
                state_id: id,
                budget: recs.len(),
                solves: recs.len(),
                records: recs,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct CoverageRow {
    method: &'static str,
    state_id: u64,
    severe_in_oracle: usize,
    captured: usize,
    coverage: f64,
}

#[derive(Serialize)]
struct Summary {
    methods: Vec<&'static str>,
    mean_top_10: BTreeMap<&'static str, f64>,
    mean_coverage: BTreeMap<&'static str, f64>,
    in_band_rate: BTreeMap<&'static str, f64>,
    /// Diffusion's top-m curve is at least uniform random's for every m.
    diffusion_dominates_random: Option<bool>,
}

fn cmd_evaluate(cfg: &WorkflowConfig) -> Result<()> {
    let case = load_case(cfg)?;
    let mut run = Run::new(cfg, "evaluate");
    let meta = load_meta(&mut run)?;
    let mut all = Vec::new();
    for method in [
        Method::Diffusion,
        Method::Random,
        Method::EvgnnRank,
        Method::Exhaustive,
    ] {
        let name = format!("screen_{}.jsonl", method.name());
        if run.out.join(&name).exists() {
            let recs: Vec<SeverityRecord> = pipeline::from_jsonl(&run.read(&name, "")?)?;
            all.push((method, regroup(method, recs)));
        }
    }
    if all.is_empty() {
        bail!(
            "no screening runs in {}; run `nkscreen screen` first",
            run.out.display()
        );
    }
    let m_max = all
        .iter()
        .filter(|(m, _)| *m != Method::Exhaustive)
        .flat_map(|(_, runs)| runs.iter().map(|r| r.records.len()))
        .max()
        .or_else(|| {
            all.iter()
                .flat_map(|(_, runs)| runs.iter().map(|r| r.records.len()))
                .max()
        })
        .unwrap_or(0)
        .max(1);
    let mut curves = Vec::new();
    let mut comps = Vec::new();
    for (method, runs) in &all {
        if runs.is_empty() {
            bail!("screening run for {} is empty", method.name());
        }
        curves.push((*method, pipeline::topm_curve(runs, m_max)?));
        comps.push((*method, pipeline::outcome_composition(runs)?));
    }
    let mut summary = Summary {
        methods: all.iter().map(|(m, _)| m.name()).collect(),
        mean_top_10: curves
            .iter()
            .map(|(m, c)| (m.name(), c.points[c.points.len().min(10) - 1].1))
            .collect(),
        mean_coverage: BTreeMap::new(),
        in_band_rate: comps
            .iter()
            .map(|(m, c)| (m.name(), c.in_band_rate))
            .collect(),
        diffusion_dominates_random: None,
    };
    let curve = |m: Method| curves.iter().find(|(x, _)| *x == m).map(|(_, c)| c);
    if let (Some(d), Some(r)) = (curve(Method::Diffusion), curve(Method::Random)) {
        summary.diffusion_dominates_random =
            Some(d.points.iter().zip(&r.points).all(|(a, b)| a.1 >= b.1));
    }
    if let Some((_, oracle)) = all.iter().find(|(m, _)| *m == Method::Exhaustive) {
        let mut rows = Vec::new();
        for (method, runs) in all.iter().filter(|(m, _)| *m != Method::Exhaustive) {
            let mut covs = Vec::new();
            for r in runs {
                let Some(truth) = oracle.iter().find(|o| o.state_id == r.state_id) else {
                    continue;
                };
                let severe: Vec<_> = truth
                    .records
                    .iter()
                    .filter(|x| x.severity >= meta.tau)
                    .map(|x| x.contingency(meta.n))
                    .collect::<Result<_, _>>()?;
                let gen: Vec<_> = r
                    .records
                    .iter()
                    .map(|x| x.contingency(meta.n))
                    .collect::<Result<_, _>>()?;
                let Ok(cov) = coverage::coverage_metric(&gen, &severe) else {
                    continue;
                };
                covs.push(cov);
                rows.push(CoverageRow {
                    method: method.name(),
                    state_id: r.state_id,
                    severe_in_oracle: severe.len(),
                    captured: (cov * severe.len() as f64).round() as usize,
                    coverage: cov,
                });
            }
            if !covs.is_empty() {
                summary
                    .mean_coverage
                    .insert(method.name(), covs.iter().sum::<f64>() / covs.len() as f64);
            }
        }
        run.add(
            "coverage.csv",
            pipeline::to_csv(
                &[
                    "method",
                    "state_id",
                    "severe_in_oracle",
                    "captured",
                    "coverage",
                ],
                &rows,
            )?,
        );
    }
    run.add("topm.csv", pipeline::topm_csv(&curves)?);
    run.add("composition.csv", pipeline::composition_csv(&comps)?);
    run.add_json("summary.json", &summary)?;
    run.finish(cfg, &case)
}

fn cmd_bench(cfg: &WorkflowConfig, method: Option<Method>) -> Result<()> {
    let case = load_case(cfg)?;
    let mut run = Run::new(cfg, "bench");
    let meta = load_meta(&mut run)?;
    let models = if run.out.join(MODELS).exists() {
        Some(load_models(&mut run)?)
    } else {
        None
    };
    let states = load_states(&mut run, cfg, &case, None)?;
    let state = states.first().context("no evaluation state configured")?;
    let ctx = context(cfg, &case, models.as_ref(), &meta)?;
    let seed = run.seed("bench", &[stage::SCREEN, 1]);
    let mut rows = pipeline::runtime_benchmark(&ctx, state, &cfg.bench_k, cfg.bench_m, seed)?;
    if let Some(m) = method {
        rows.retain(|r| r.method == m || r.method == Method::Exhaustive);
    }
    run.add("bench.csv", pipeline::bench_csv(&rows)?);
    run.finish(cfg, &case)
}

#[derive(Serialize)]
struct OracleRow {
    state_id: u64,
    feasible: usize,
    severe: usize,
    nonconvergent: usize,
    max_convergent_severity: f64,
    tau: f64,
}

fn cmd_oracle(cfg: &WorkflowConfig, states: Option<&Path>) -> Result<()> {
    let case = load_case(cfg)?;
    let mut run = Run::new(cfg, "oracle");
    let meta = load_meta(&mut run)?;
    let states = load_states(&mut run, cfg, &case, states)?;
    let ctx = context(cfg, &case, None, &meta)?;
    let feasible = contingency::enumerate_feasible(&case, &ctx.spec)?
        .take(cfg.exhaustive_cap + 1)
        .count();
    if feasible > cfg.exhaustive_cap {
        bail!(
            "feasible set exceeds exhaustive_cap = {}; narrow k_range or raise the cap",
            cfg.exhaustive_cap
        );
    }
    let runs = pipeline::screen_states(&ctx, Method::Exhaustive, &states, 0, 0)?;
    let rows: Vec<OracleRow> = runs
        .iter()
        .map(|r| OracleRow {
            state_id: r.state_id,
            feasible: r.records.len(),
            severe: r.records.iter().filter(|x| x.severity >= meta.tau).count(),
            nonconvergent: r.records.iter().filter(|x| !x.converged).count(),
            max_convergent_severity: r
                .records
                .iter()
                .filter(|x| x.converged)
                .map(|x| x.severity)
                .fold(0.0, f64::max),
            tau: meta.tau,
        })
        .collect();
    let records: Vec<SeverityRecord> = runs.into_iter().flat_map(|r| r.records).collect();
    run.add("oracle.jsonl", pipeline::to_jsonl(&records)?);
    run.add(
        "oracle.csv",
        pipeline::to_csv(
            &[
                "state_id",
                "feasible",
                "severe",
                "nonconvergent",
                "max_convergent_severity",
                "tau",
            ],
            &rows,
        )?,
    );
    run.finish(cfg, &case)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli.common).and_then(|cfg| {
        nkscreen::par::set_parallelism(cfg.parallelism);
        match cli.cmd {
            Cmd::Dataset => cmd_dataset(&cfg),
            Cmd::Train => cmd_train(&cfg),
            Cmd::Screen {
                method,
                budget,
                states,
            } => cmd_screen(&cfg, method, budget, states.as_deref()),
            Cmd::Evaluate => cmd_evaluate(&cfg),
            Cmd::Bench { method } => cmd_bench(&cfg, method),
            Cmd::Oracle { states } => cmd_oracle(&cfg, states.as_deref()),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

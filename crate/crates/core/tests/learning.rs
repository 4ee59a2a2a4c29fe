use std::collections::HashSet;

use nkscreen::contingency::{self, ContingencyVector, FeasibleSetSpec};
use nkscreen::diffusion::{
    self, DenoiserOptions, DiffusionExample, GuidanceConfig, SamplerConfig, SeverityWeight,
};
use nkscreen::grid::OperatingState;
use nkscreen::pipeline::{self, DatasetConfig, DatasetN1};
use nkscreen::powerflow::{self, SeverityConfig, SolverOptions};
use nkscreen::surrogate::{self, EvgnnOptions, RiskScorer};
use nkscreen::{cases, rng, NetworkCase, Result};

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

fn split_dataset(ds: &DatasetN1, train_states: usize) -> (DatasetN1, DatasetN1) {
    let ids: HashSet<u64> = ds.states[..train_states]
        .iter()
        .map(|s| s.state_id)
        .collect();
    let part = |keep: bool| DatasetN1 {
        states: ds
            .states
            .iter()
            .filter(|s| ids.contains(&s.state_id) == keep)
            .cloned()
            .collect(),
        records: ds
            .records
            .iter()
            .filter(|r| ids.contains(&r.state_id) == keep)
            .cloned()
            .collect(),
        ..ds.clone()
    };
    (part(true), part(false))
}

fn light_surrogate() -> EvgnnOptions {
    EvgnnOptions {
        epochs: 300,
        hidden: 16,
        ..EvgnnOptions::default()
    }
}

#[test]
fn surrogate_ranks_held_out_single_outages() {
    let case = cases::ieee14();
    let ds = pipeline::build_n1_dataset(&case, 40, 21, &DatasetConfig::default()).unwrap();
    let (train, test) = split_dataset(&ds, 30);
    let model =
        surrogate::train_evgnn(&case, &train.examples().unwrap(), &light_surrogate(), 4).unwrap();
    let ex = test.examples().unwrap();
    let truth: Vec<f64> = ex.iter().map(|e| e.s).collect();
    let pred: Vec<f64> = ex
        .iter()
        .map(|e| model.score(&case, &e.x, &e.c).unwrap())
        .collect();
    let rho = spearman(&truth, &pred);
    assert!(rho >= 0.6, "spearman {rho}");

    // Held-out error in training units beats predicting the training mean.
    let target = |s: f64| s.min(model.label_clip).ln_1p();
    let mean = train
        .examples()
        .unwrap()
        .iter()
        .map(|e| target(e.s))
        .sum::<f64>()
        / train.records.len() as f64;
    let mse: f64 = truth
        .iter()
        .zip(&pred)
        .map(|(t, p)| (target(*t) - p).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    let base: f64 = truth
        .iter()
        .map(|t| (target(*t) - mean).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    assert!(mse < base, "mse {mse} vs baseline {base}");
}

/// Labels with the AC power flow itself.
struct AcOracle {
    sev: SeverityConfig,
}

impl RiskScorer for AcOracle {
    fn risk(&self, case: &NetworkCase, x: &[f64], c: &ContingencyVector) -> Result<f64> {
        let state = state_from_features(case, x);
        let base = powerflow::solve_acpf(
            case,
            &state,
            &ContingencyVector::empty(c.n()),
            &SolverOptions::default(),
        )?;
        let post = powerflow::solve_acpf(case, &state, c, &SolverOptions::default())?;
        powerflow::severity(&base, &post, &self.sev)
    }
}

fn state_from_features(case: &NetworkCase, x: &[f64]) -> OperatingState {
    let nominal = OperatingState::nominal(case);
    assert_eq!(
        nominal.feature_vector, x,
        "oracle test uses the nominal state"
    );
    nominal
}

#[test]
fn perfect_scorer_retains_pool_argmax() {
    let case = cases::ieee14();
    let states = vec![OperatingState::nominal(&case)];
    let oracle = AcOracle {
        sev: SeverityConfig::with_tau(50.0).unwrap(),
    };
    let pool = 60;
    let all =
        surrogate::build_high_risk_set(&oracle, &case, &states, (2, 2), pool, pool, 9).unwrap();
    let best = surrogate::build_high_risk_set(&oracle, &case, &states, (2, 2), pool, 1, 9).unwrap();
    assert_eq!(best.len(), 1);
    // Independent labeling of the whole pool.
    let base = powerflow::solve_acpf(
        &case,
        &states[0],
        &ContingencyVector::empty(20),
        &SolverOptions::default(),
    )
    .unwrap();
    let labels: Vec<(f64, &ContingencyVector)> = all
        .iter()
        .map(|e| {
            let post =
                powerflow::solve_acpf(&case, &states[0], &e.contingency, &SolverOptions::default())
                    .unwrap();
            (
                powerflow::severity(&base, &post, &oracle.sev).unwrap(),
                &e.contingency,
            )
        })
        .collect();
    let top = labels.iter().map(|l| l.0).fold(f64::MIN, f64::max);
    assert_eq!(best[0].score, top);
    assert!(labels
        .iter()
        .any(|(s, c)| *s == top && **c == best[0].contingency));
}

#[test]
fn surrogate_selected_set_is_more_severe_than_uniform() {
    let case = cases::ieee14();
    let ds = pipeline::build_n1_dataset(&case, 20, 3, &DatasetConfig::default()).unwrap();
    let model =
        surrogate::train_evgnn(&case, &ds.examples().unwrap(), &light_surrogate(), 5).unwrap();
    let sev = ds.severity_config().unwrap();
    let solver = SolverOptions::default();
    let (pool, retain) = (200, 20);
    let selected = pipeline::build_nk_training_set(
        &case,
        &model,
        &ds.states,
        (2, 4),
        pool,
        retain,
        6,
        &sev,
        &solver,
    )
    .unwrap();
    assert_eq!(selected.len(), ds.states.len() * retain);
    let ctx = pipeline::ScreenContext {
        case: &case,
        models: None,
        sev,
        solver,
        spec: FeasibleSetSpec::range(2, 4),
        exhaustive_cap: 0,
    };
    let uniform: Vec<f64> =
        pipeline::screen_states(&ctx, pipeline::Method::Random, &ds.states, retain, 7)
            .unwrap()
            .iter()
            .flat_map(|r| r.records.iter().map(|x| x.severity))
            .collect();
    assert_eq!(uniform.len(), selected.len());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sel: Vec<f64> = selected.iter().map(|r| r.severity).collect();
    assert!(
        mean(&sel) >= mean(&uniform),
        "{} vs {}",
        mean(&sel),
        mean(&uniform)
    );

    // Stored labels are reproduced bit-exactly.
    let again = pipeline::build_nk_training_set(
        &case,
        &model,
        &ds.states,
        (2, 4),
        pool,
        retain,
        6,
        &ctx.sev,
        &ctx.solver,
    )
    .unwrap();
    assert_eq!(again, selected);
    assert!(pipeline::build_nk_training_set(
        &case,
        &model,
        &ds.states,
        (2, 4),
        pool,
        0,
        6,
        &ctx.sev,
        &ctx.solver
    )
    .unwrap()
    .is_empty());
}

#[test]
fn denoiser_memorises_a_single_pattern() {
    let case = cases::ieee14();
    let state = OperatingState::nominal(&case);
    let target = ContingencyVector::from_positions(20, vec![3, 11]).unwrap();
    let data: Vec<DiffusionExample> = (0..32)
        .map(|_| DiffusionExample {
            x: state.feature_vector.clone(),
            c: target.clone(),
            s: 1.0,
        })
        .collect();
    let sched = diffusion::make_schedule(100, 1e-4, 0.1).unwrap();
    let opts = DenoiserOptions {
        epochs: 300,
        batch_size: 32,
        ..DenoiserOptions::default()
    };
    let model =
        diffusion::train_denoiser(&data, &sched, &opts, &SeverityWeight::uniform(), 1).unwrap();
    assert!(model.loss_history.last() < model.loss_history.first());
    let out = diffusion::generate(
        &model,
        None,
        &sched,
        &case,
        &state.feature_vector,
        &FeasibleSetSpec::exact(2),
        100,
        &SamplerConfig::default(),
        2,
    )
    .unwrap();
    let hits = out.iter().filter(|c| **c == target).count();
    assert!(hits >= 90, "{hits} of 100");
}

#[test]
fn guidance_raises_surrogate_score() {
    let case = cases::ieee14();
    let ds = pipeline::build_n1_dataset(&case, 20, 8, &DatasetConfig::default()).unwrap();
    let model =
        surrogate::train_evgnn(&case, &ds.examples().unwrap(), &light_surrogate(), 9).unwrap();
    let x = ds.states[0].feature_vector.clone();
    let data: Vec<DiffusionExample> =
        contingency::enumerate_feasible(&case, &FeasibleSetSpec::exact(2))
            .unwrap()
            .take(64)
            .map(|c| DiffusionExample {
                x: x.clone(),
                c,
                s: 1.0,
            })
            .collect();
    let sched = diffusion::make_schedule(100, 1e-4, 0.1).unwrap();
    let den = diffusion::train_denoiser(
        &data,
        &sched,
        &DenoiserOptions {
            epochs: 20,
            ..DenoiserOptions::default()
        },
        &SeverityWeight::uniform(),
        3,
    )
    .unwrap();
    let spec = FeasibleSetSpec::exact(2);
    let mean_score = |lambda: f64| {
        let cfg = SamplerConfig {
            guidance: GuidanceConfig {
                lambda,
                ..GuidanceConfig::default()
            },
            ..SamplerConfig::default()
        };
        let mut total = 0.0;
        for i in 0..200u64 {
            let seed = rng::derive_seed(17, &[i]);
            let raw = diffusion::reverse_sample(&den, &sched, &case, &x, Some(&model), &cfg, seed)
                .unwrap();
            let c = contingency::project(&case, &raw, &spec).unwrap();
            total += model.score(&case, &x, &c.to_real()).unwrap();
        }
        total / 200.0
    };
    let (plain, guided) = (mean_score(0.0), mean_score(1.0));
    assert!(guided >= plain, "guided {guided} vs plain {plain}");
}

#[test]
fn offline_phase_is_reproducible_and_training_loss_falls() {
    let case = cases::ieee14();
    let cfg = pipeline::WorkflowConfig {
        train_states: 8,
        k_range: Some((2, 3)),
        pool: 60,
        retain: 10,
        surrogate: EvgnnOptions {
            epochs: 60,
            hidden: 8,
            ..EvgnnOptions::default()
        },
        denoiser: DenoiserOptions {
            epochs: 30,
            ..DenoiserOptions::default()
        },
        budget: pipeline::BudgetConfig {
            calibration_states: 2,
            calibration_samples: 10,
            ..pipeline::BudgetConfig::default()
        },
        ..pipeline::WorkflowConfig::default()
    };
    let a = pipeline::run_offline(&case, &cfg).unwrap();
    let b = pipeline::run_offline(&case, &cfg).unwrap();
    assert_eq!(
        pipeline::to_jsonl(&a.training_set).unwrap(),
        pipeline::to_jsonl(&b.training_set).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&a.models).unwrap(),
        serde_json::to_string(&b.models).unwrap()
    );
    let h = &a.models.denoiser.loss_history;
    assert!(h.last().unwrap() < h.first().unwrap());
    let ctx = a.context(&case, &cfg).unwrap();
    let states = cfg.eval_states(&case).unwrap();
    let ra = pipeline::screen(&ctx, pipeline::Method::Diffusion, &states[0], 15, 4).unwrap();
    let rb = pipeline::screen(&ctx, pipeline::Method::Diffusion, &states[0], 15, 4).unwrap();
    assert_eq!(
        pipeline::to_jsonl(&ra.records).unwrap(),
        pipeline::to_jsonl(&rb.records).unwrap()
    );
    // One power flow per distinct candidate.
    let distinct: HashSet<_> = ra.records.iter().map(|r| r.outages.clone()).collect();
    assert_eq!(ra.solves, ra.records.len());
    assert_eq!(distinct.len(), ra.records.len());
    assert!(ra.records.len() <= 15);
}

#[test]
fn coverage_of_a_screen_matches_hand_count() {
    let case = cases::ieee14();
    let state =
        OperatingState::from_multipliers(&case, 0, vec![[1.08; 2]; 14], vec![1.08; 5]).unwrap();
    let tau = 60.0;
    let ctx = pipeline::ScreenContext {
        case: &case,
        models: None,
        sev: SeverityConfig::with_tau(tau).unwrap(),
        solver: SolverOptions::default(),
        spec: FeasibleSetSpec::exact(2),
        exhaustive_cap: 1000,
    };
    let truth = pipeline::screen(&ctx, pipeline::Method::Exhaustive, &state, 0, 0).unwrap();
    let severe: Vec<ContingencyVector> = truth
        .records
        .iter()
        .filter(|r| r.severity >= tau)
        .map(|r| r.contingency(20).unwrap())
        .collect();
    assert!(!severe.is_empty());
    let run = pipeline::screen(&ctx, pipeline::Method::Random, &state, 40, 12).unwrap();
    let screened: Vec<ContingencyVector> = run
        .records
        .iter()
        .map(|r| r.contingency(20).unwrap())
        .collect();
    let mut hand = 0;
    for s in &severe {
        if screened.contains(s) {
            hand += 1;
        }
    }
    let cov = nkscreen::coverage::coverage_metric(&screened, &severe).unwrap();
    assert_eq!(cov, hand as f64 / severe.len() as f64);
    // Screened labels equal the oracle's labels.
    for r in &run.records {
        let t = truth
            .records
            .iter()
            .find(|x| x.outages == r.outages)
            .unwrap();
        assert_eq!(t.severity, r.severity);
    }
}

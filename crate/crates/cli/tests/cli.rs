use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "case": "case14",
  "train_states": 6,
  "eval_states": 2,
  "k_range": [2, 2],
  "surrogate": {"epochs": 40, "hidden": 8},
  "denoiser": {"epochs": 15},
  "pool": 40,
  "retain": 8,
  "budget": {"calibration_states": 2, "calibration_samples": 10},
  "bench_k": [1, 2],
  "bench_m": 5
}"#;

fn nkscreen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nkscreen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = nkscreen(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), config).unwrap();
    dir
}

fn offline(dir: &Path, out: &str) {
    ok(dir, &["--config", "cfg.json", "--out", out, "dataset"]);
    ok(dir, &["--config", "cfg.json", "--out", out, "train"]);
}

#[test]
fn full_workflow_writes_tables_and_manifests() {
    let d = setup(SMALL);
    let p = d.path();
    offline(p, "r");
    for m in ["diffusion", "random", "exhaustive", "evgnn-rank"] {
        ok(
            p,
            &[
                "--config", "cfg.json", "--out", "r", "screen", "--method", m, "--budget", "6",
            ],
        );
    }
    ok(p, &["--config", "cfg.json", "--out", "r", "evaluate"]);
    ok(p, &["--config", "cfg.json", "--out", "r", "oracle"]);
    ok(p, &["--config", "cfg.json", "--out", "r", "bench"]);
    let r = p.join("r");
    let header = |f: &str| {
        fs::read_to_string(r.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("topm.csv"), "method,m,mean_top_m_severity");
    assert!(header("composition.csv").starts_with("method,records,convergent_in_band"));
    assert!(header("bench.csv").starts_with("k,method,seconds,solves"));
    assert!(header("coverage.csv").starts_with("method,state_id"));
    assert!(header("oracle.csv").starts_with("state_id,feasible,severe"));

    for line in fs::read_to_string(r.join("composition.csv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let f: Vec<f64> = line
            .split(',')
            .skip(2)
            .take(3)
            .map(|x| x.parse().unwrap())
            .collect();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for line in fs::read_to_string(r.join("bench.csv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let f: Vec<&str> = line.split(',').collect();
        if f[1] == "diffusion" {
            assert_eq!(f[3], "5");
        }
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(r.join("manifest_train.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["case_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seeds"]["root"], 1);
    assert!(manifest["seeds"]["denoiser"].is_u64());
    assert!(manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["path"] == "n1_records.jsonl"));

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(r.join("train_metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["denoiser_loss_decreased"], true);

    // Coverage rows agree with a recount from the record files.
    let tau = serde_json::from_str::<serde_json::Value>(
        &fs::read_to_string(r.join("dataset.json")).unwrap(),
    )
    .unwrap()["tau"]
        .as_f64()
        .unwrap();
    let recs = |f: &str| -> Vec<serde_json::Value> {
        fs::read_to_string(r.join(f))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let truth = recs("screen_exhaustive.jsonl");
    let screened = recs("screen_random.jsonl");
    for line in fs::read_to_string(r.join("coverage.csv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] != "random" {
            continue;
        }
        let sid: u64 = f[1].parse().unwrap();
        let severe: Vec<_> = truth
            .iter()
            .filter(|x| x["state_id"] == sid && x["severity"].as_f64().unwrap() >= tau)
            .map(|x| x["outages"].clone())
            .collect();
        let hit = severe
            .iter()
            .filter(|o| {
                screened
                    .iter()
                    .any(|x| x["state_id"] == sid && &x["outages"] == *o)
            })
            .count();
        let cov: f64 = f[4].parse().unwrap();
        assert!((cov - hit as f64 / severe.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let d = setup(SMALL);
    let p = d.path();
    for out in ["a", "b"] {
        offline(p, out);
        ok(p, &["--config", "cfg.json", "--out", out, "screen"]);
    }
    ok(
        p,
        &[
            "--config",
            "cfg.json",
            "--out",
            "c",
            "--parallelism",
            "1",
            "dataset",
        ],
    );
    for f in [
        "states.jsonl",
        "n1_records.jsonl",
        "training_set.jsonl",
        "models.json",
        "capture.json",
        "screen_diffusion.jsonl",
        "screen_diffusion.csv",
    ] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        fs::read(p.join("a/n1_records.jsonl")).unwrap(),
        fs::read(p.join("c/n1_records.jsonl")).unwrap()
    );
    let hash = |d: &str| {
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(p.join(d).join("manifest_dataset.json")).unwrap(),
        )
        .unwrap();
        m["config_hash"].clone()
    };
    assert_eq!(hash("a"), hash("c"));
    ok(
        p,
        &[
            "--config", "cfg.json", "--out", "d", "--seed", "2", "dataset",
        ],
    );
    assert_ne!(
        fs::read(p.join("a/states.jsonl")).unwrap(),
        fs::read(p.join("d/states.jsonl")).unwrap()
    );
}

#[test]
fn missing_case_fails_without_partial_files() {
    let d = setup(r#"{"case": "no/such/case14.m"}"#);
    let out = nkscreen(d.path(), &["--config", "cfg.json", "--out", "r", "dataset"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load case"));
    assert!(!d.path().join("r").exists());
}

#[test]
fn missing_inputs_fail() {
    let d = setup(SMALL);
    let p = d.path();
    let out = nkscreen(p, &["--config", "cfg.json", "--out", "r", "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nkscreen dataset"));
    ok(p, &["--config", "cfg.json", "--out", "r", "dataset"]);
    let out = nkscreen(p, &["--config", "cfg.json", "--out", "r", "evaluate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no screening runs"));
    let out = nkscreen(p, &["--config", "missing.json", "dataset"]);
    assert!(!out.status.success());
    let out = nkscreen(p, &["--out", "r", "screen", "--method", "bogus"]);
    assert!(!out.status.success());
}

#[test]
fn budget_edges() {
    let d = setup(&SMALL.replace("\"budget\": {", "\"budget\": {\"delta_miss\": 1.0, "));
    let p = d.path();
    offline(p, "r");
    ok(p, &["--config", "cfg.json", "--out", "r", "screen"]);
    assert_eq!(
        fs::read_to_string(p.join("r/screen_diffusion.jsonl")).unwrap(),
        ""
    );
    assert_eq!(
        fs::read_to_string(p.join("r/screen_diffusion.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    fs::write(
        p.join("r/capture.json"),
        r#"{"successes": 0, "trials": 20, "p_hat": 0.0, "p_lower": 0.0, "confidence": 0.95}"#,
    )
    .unwrap();
    fs::write(p.join("cfg.json"), SMALL).unwrap();
    let out = nkscreen(p, &["--config", "cfg.json", "--out", "r", "screen"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unbounded"));
}

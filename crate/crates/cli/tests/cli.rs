use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "env.name": "pointmass-sparse",
  "env.episode_length": 40,
  "env.action_repeat": 4,
  "model.latent_dim": 4,
  "model.encoder_hidden": [8],
  "model.head_hidden": [8],
  "model.inverse_hidden": [8],
  "model.action_encoder_hidden": [8],
  "model.action_latent_dim": 3,
  "cem.horizon": 2,
  "cem.population": 16,
  "cem.elites": 4,
  "cem.iterations": 2,
  "train.total_env_steps": 400,
  "train.seed_steps": 80,
  "train.eval_every": 200,
  "train.eval_episodes": 2,
  "train.batch_size": 4,
  "train.horizon": 2,
  "seeds": [0, 1]
}
"#;

fn ccem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccem"))
        .args(args)
        .current_dir(dir)
        .env_remove("CCEM_OUT")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_fails_with_file_and_line() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"cem.horizon\": 2,\n  \"cem.horizn\": 3\n}\n").unwrap();
    let o = ccem(&["train", "--config", "bad.json"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("bad.json:3:"), "{err}");
    assert!(err.contains("cem.horizn"), "{err}");
}

#[test]
fn bad_override_fails() {
    let dir = setup();
    let o = ccem(&["train", "--config", "tiny.json", "--cem.population=lots"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("cem.population"), "{}", stderr(&o));
}

#[test]
fn train_twice_gives_identical_csvs_and_config_round_trips() {
    let dir = setup();
    for out in ["a", "b"] {
        let o = ccem(&["train", "--config", "tiny.json", "--seed", "0", "--out-dir", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/seed_0/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/seed_0/metrics.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    for step in [200, 400] {
        let stem = dir.path().join(format!("a/seed_0/checkpoints/step_{step}"));
        assert!(stem.with_extension("bin").exists() && stem.with_extension("manifest").exists());
    }

    // The emitted config alone reproduces the run.
    let o = ccem(&["train", "--config", "a/seed_0/config.json", "--out-dir", "c"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let c = std::fs::read(dir.path().join("c/seed_0/metrics.csv")).unwrap();
    assert_eq!(a, c);
}

#[test]
fn out_dir_defaults_to_env_var() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_ccem"))
        .args(["train", "--config", "tiny.json", "--seed", "1", "--train.total_env_steps=200"])
        .current_dir(dir.path())
        .env("CCEM_OUT", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from-env/seed_1/metrics.csv").exists());
}

#[test]
fn ablate_emits_every_variant_for_every_seed_and_summary_matches_csvs() {
    let dir = setup();
    let o = ccem(&["ablate", "--config", "tiny.json", "--workers", "2", "--out-dir", "abl"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let root = dir.path().join("abl");
    let runs = std::fs::read_to_string(root.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4 * 2);

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(root.join("summary.json")).unwrap()).unwrap();
    for v in ["full", "non-contrastive", "non-ccem", "baseline"] {
        // Recompute mean and sample std of final eval returns from raw metrics.
        let finals: Vec<f64> = (0..2)
            .map(|s| {
                let text = std::fs::read_to_string(root.join(v).join(format!("seed_{s}")).join("metrics.csv")).unwrap();
                let last = text.lines().rfind(|l| l.split(',').nth(1) == Some("eval")).unwrap();
                last.split(',').nth(2).unwrap().parse::<f64>().unwrap()
            })
            .collect();
        let mean = (finals[0] + finals[1]) / 2.0;
        let std = ((finals[0] - mean).powi(2) + (finals[1] - mean).powi(2)).sqrt();
        let g = summary["variants"].as_array().unwrap().iter().find(|g| g["label"] == v).unwrap();
        assert!((g["final_return"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12, "{v}");
        assert!((g["final_return"]["std"].as_f64().unwrap() - std).abs() < 1e-12, "{v}");
    }
    assert!(summary["ordering"].is_object());
}

#[test]
fn plan_bench_reports_every_scoring_variant() {
    let dir = setup();
    let o = ccem(&["plan-bench", "--trials", "5", "--out-dir", "pb"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("pb/plan_bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for s in ["sum-rewards", "rewards-plus-terminal", "value-sum", "curiosity-value-sum"] {
        assert!(csv.contains(s), "{s}");
    }
    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pb/plan_bench.json")).unwrap()).unwrap();
    assert_eq!(json["scoring"].as_array().unwrap().len(), 4);
}

#[test]
fn oracle_check_passes() {
    let dir = setup();
    let o = ccem(&["oracle-check", "--instances", "3", "--out-dir", "oc"], dir.path());
    assert!(o.status.success(), "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    assert!(dir.path().join("oc/oracle_check.csv").exists());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("oc/oracle_check.json")).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
}

#[test]
fn eval_loads_a_checkpoint() {
    let dir = setup();
    let o = ccem(&["train", "--config", "tiny.json", "--seed", "0", "--out-dir", "t"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ccem(
        &["eval", "--config", "tiny.json", "--seed", "0", "--checkpoint", "t/seed_0/checkpoints/step_400", "--out-dir", "e"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("e/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let o = ccem(
        &["eval", "--config", "tiny.json", "--checkpoint", "t/seed_0/checkpoints/missing", "--out-dir", "e"],
        dir.path(),
    );
    assert!(!o.status.success());
}

use std::path::Path;
use std::process::{Command, Output};

use pcmc::cli::{sha256_file, Manifest};
use pcmc::data::{write_sessions, FeatureValue, Session};
use pcmc::datagen::{airline_schema, indexed_schema};
use pcmc::eval::EvalReport;

fn pcmc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcmc"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pcmc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn datagen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(d, &["datagen", "--kind", "rps", "--n", "300", "--seed", "5", "--out", out]);
    }
    assert_eq!(sha256_file(d.join("a/data.jsonl")).unwrap(), sha256_file(d.join("b/data.jsonl")).unwrap());
    ok(d, &["datagen", "--kind", "rps", "--n", "300", "--seed", "6", "--out", "c"]);
    assert_ne!(sha256_file(d.join("a/data.jsonl")).unwrap(), sha256_file(d.join("c/data.jsonl")).unwrap());
    let m = Manifest::load(d.join("a/manifest.json")).unwrap();
    assert_eq!(m.seed, 5);
    assert!(m.outputs.contains_key("data.jsonl"));
}

#[test]
fn airline_split_follows_the_eighty_twenty_rule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["datagen", "--kind", "airline", "--n", "200", "--max-set-size", "5", "--out", "air"]);
    let m = Manifest::load(d.join("air/manifest.json")).unwrap();
    assert_eq!(m.metrics["train_sessions"], 160.0);
    let lines = |f: &str| std::fs::read_to_string(d.join("air").join(f)).unwrap().lines().count();
    assert_eq!((lines("train.jsonl"), lines("test.jsonl")), (160, 40));
}

#[test]
fn uniform_on_size_26_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let schema = indexed_schema(26);
    let sessions: Vec<Session> = (0..40)
        .map(|k| Session {
            individual: vec![],
            alternatives: (0..26).map(|i| vec![FeatureValue::Cat(i.to_string())]).collect(),
            choice: k % 26,
        })
        .collect();
    schema.save(d.join("schema.json")).unwrap();
    write_sessions(d.join("data.jsonl"), &schema, &sessions).unwrap();
    ok(d, &["eval", "--model", "uniform", "--schema", "schema.json", "--data", "data.jsonl", "--out", "ev"]);
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(d.join("ev/eval.json")).unwrap()).unwrap();
    assert!((r.nll.unwrap() - 26f64.ln()).abs() < 1e-12);
    assert!((r.nll.unwrap() - 3.258).abs() < 1e-3);
    assert!(r.top1 <= r.top5);
}

#[test]
fn train_eval_heatmap_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["datagen", "--kind", "context", "--n", "400", "--seed", "2", "--out", "ctx"]);
    let data = ["--data", "ctx/data.jsonl", "--schema", "ctx/schema.json"];
    ok(d, &[&["train", "--model", "mnl", "--out", "mnl"], &data[..]].concat());
    ok(
        d,
        &[
            &["train", "--model", "pcmcnet", "--preset", "synthetic", "--epochs", "3", "--nodes", "8", "--out", "net"],
            &data[..],
        ]
        .concat(),
    );
    let m = Manifest::load(d.join("net/manifest.json")).unwrap();
    assert_eq!(m.config["max_epochs"], 3);
    assert_eq!(m.config["learning_rate"], 1e-3);

    let out = ok(d, &["eval", "--checkpoint", "net/checkpoint.json", "--data", "ctx/data.jsonl", "--out", "ev"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("pcmc-net"));
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(d.join("ev/eval.json")).unwrap()).unwrap();
    assert!(r.top1 <= r.top5 && r.top5 <= 1.0);
    assert_eq!(r.config_hash.as_deref(), Some(sha256_file(d.join("net/checkpoint.json")).unwrap().as_str()));

    let mnl_map = pcmc(d, &["heatmap", "--checkpoint", "mnl/checkpoint.json", "--grid", "16", "--out", "hm"]);
    assert!(mnl_map.status.success());
    assert!(String::from_utf8_lossy(&mnl_map.stderr).contains("constant field detected"));
    let pgm = std::fs::read(d.join("hm/heatmap.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    let net_map = ok(d, &["heatmap", "--checkpoint", "net/checkpoint.json", "--grid", "16", "--out", "hm2"]);
    assert!(!String::from_utf8_lossy(&net_map.stderr).contains("constant field"));

    // Training and evaluation rerun from their manifests to 1e-9 (training
    // losses in fact agree exactly).
    for run in ["net", "ev"] {
        ok(d, &["replay", "--manifest", &format!("{run}/manifest.json")]);
    }
    let a = Manifest::load(d.join("net/manifest.json")).unwrap();
    let b = Manifest::load(d.join("net/replay/manifest.json")).unwrap();
    assert_eq!(a.metrics["best_validation_nll"], b.metrics["best_validation_nll"]);

    // A tampered metric makes the replay fail with the numeric exit code.
    let mut bad = Manifest::load(d.join("ev/manifest.json")).unwrap();
    *bad.metrics.get_mut("nll").unwrap() += 1e-6;
    std::fs::write(d.join("ev/tampered.json"), serde_json::to_string(&bad).unwrap()).unwrap();
    let out = pcmc(d, &["replay", "--manifest", "ev/tampered.json", "--out", "ev/again"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn search_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["datagen", "--kind", "context", "--n", "120", "--out", "ctx"]);
    ok(
        d,
        &[
            "search", "--data", "ctx/data.jsonl", "--schema", "ctx/schema.json", "--budget", "25", "--epochs", "1",
            "--patience", "1", "--out", "s",
        ],
    );
    let board = std::fs::read_to_string(d.join("s/leaderboard.csv")).unwrap();
    assert_eq!(board.lines().count(), 26);
    assert!(board.starts_with("rank,trial,validation_nll"));
}

#[test]
fn gradcheck_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["gradcheck", "--trials", "5", "--out", "gc"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("pcmc-net loss"));
    assert!(std::fs::read_to_string(d.join("gc/gradcheck.csv")).unwrap().lines().all(|l| !l.ends_with("FAIL")));

    // Missing input: I/O class.
    assert_eq!(pcmc(d, &["eval", "--checkpoint", "none.json", "--data", "none.jsonl", "--out", "x"]).status.code(), Some(4));
    // Bad flag value: validation class.
    assert_eq!(pcmc(d, &["datagen", "--kind", "nope", "--n", "1", "--out", "x"]).status.code(), Some(2));
    assert_eq!(pcmc(d, &["datagen", "--kind", "rps", "--alpha", "0.3", "--n", "10", "--out", "x"]).status.code(), Some(2));

    // Schema mismatch between checkpoint and --schema.
    ok(d, &["datagen", "--kind", "context", "--n", "50", "--out", "ctx"]);
    ok(d, &["train", "--model", "mnl", "--data", "ctx/data.jsonl", "--schema", "ctx/schema.json", "--out", "mnl"]);
    airline_schema().save(d.join("airline.json")).unwrap();
    let out = pcmc(
        d,
        &["eval", "--checkpoint", "mnl/checkpoint.json", "--schema", "airline.json", "--data", "ctx/data.jsonl", "--out", "y"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["datagen", "--kind", "context", "--n", "100", "--out", "ctx"]);
    std::fs::write(d.join("cfg.json"), r#"{"hidden_layers": 1, "nodes_per_layer": 4, "max_epochs": 1, "seed": 3}"#).unwrap();
    ok(
        d,
        &[
            "--config", "cfg.json", "train", "--model", "pcmcnet", "--data", "ctx/data.jsonl", "--schema",
            "ctx/schema.json", "--nodes", "6", "--out", "t",
        ],
    );
    let m = Manifest::load(d.join("t/manifest.json")).unwrap();
    assert_eq!((m.config["hidden_layers"].as_u64(), m.config["nodes_per_layer"].as_u64()), (Some(1), Some(6)));
    assert_eq!(m.seed, 3);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tacgraph::hand::canonicalize;
use tacgraph::par::Exec;
use tacgraph::pretrain::{evaluate, load_checkpoint, EvalReport, PreparedData};
use tacgraph::synth::Dataset;
use tacgraph::Hand;

fn tacgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacgraph"))
        .args(args)
        .env("TACGRAPH_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tacgraph(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) {
    ok(&["gen-data", "--out", s(dir), "--episodes", "2", "--frames", "3", "--seed", "4"]);
}

fn small_pretrain(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["pretrain", "--out", s(dir), "--epochs", "1", "--hidden", "8", "--batch", "4", "--seed", "1"];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn gen_data_single_frame() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--out", s(dir.path()), "--episodes", "1", "--frames", "1"]);
    let text = fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(dir.path().join("run.json").is_file());
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["gen-data", "--out", s(d.path()), "--episodes", "3", "--frames", "4", "--seed", "9", "--workers", "1"]);
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("dataset.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    ok(&["gen-data", "--out", s(b.path()), "--episodes", "3", "--frames", "4", "--seed", "9", "--workers", "2"]);
    assert_eq!(read(&a), read(&b));
}

#[test]
fn gen_data_summary_matches_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gen-data", "--out", s(dir.path()), "--episodes", "4", "--frames", "5"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("mean |F| per taxel"))
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();

    // independent pass over the raw JSON lines
    let text = fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for line in text.lines().skip(1) {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        for grid in rec["forces"].as_object().unwrap().values() {
            for f in grid.as_array().unwrap() {
                let v: Vec<f64> = f.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
                sum += (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                count += 1;
            }
        }
    }
    let mean = sum / count as f64;
    assert!((printed - mean).abs() <= 1e-6 * mean.abs().max(1e-12), "{printed} vs {mean}");
}

#[test]
fn bad_flags_exit_with_usage_code() {
    for args in [
        vec!["gen-data", "--episodes", "0"],
        vec!["gen-data", "--bogus"],
        vec!["pretrain", "--mask-ratio", "1.5"],
        vec!["pretrain", "--lambda", "-1"],
        vec!["pretrain", "--local-only", "--net-only"],
        vec!["frobnicate"],
    ] {
        let out = tacgraph(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = tacgraph(&["pretrain", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn pretrain_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    small_pretrain(dir.path(), &[]);
    for f in ["checkpoint.json", "metrics.csv", "run.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,step,loss,loss_local,loss_net");
    assert_eq!(csv.lines().count(), 1 + 2);

    let again = tempfile::tempdir().unwrap();
    small_dataset(again.path());
    small_pretrain(again.path(), &[]);
    assert_eq!(csv, fs::read_to_string(again.path().join("metrics.csv")).unwrap());
}

#[test]
fn run_json_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    small_pretrain(dir.path(), &["--lambda", "0.5"]);
    let first = fs::read(dir.path().join("metrics.csv")).unwrap();
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    let argv: Vec<String> = run["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(argv.contains(&"--lambda".to_string()));
    let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
    ok(&refs);
    assert_eq!(first, fs::read(dir.path().join("metrics.csv")).unwrap());
    assert_eq!(run["resolved"]["train"]["lambda"], 0.5);
}

#[test]
fn raw_representation_ablation() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let out = small_pretrain(dir.path(), &["--no-canonical", "--local-only"]);
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("representation: raw"), "{log}");
    let run = fs::read_to_string(dir.path().join("run.json")).unwrap();
    assert!(run.contains("\"representation\": \"raw\""));
    assert!(run.contains("\"tasks\": \"local-only\""));
}

#[test]
fn hand_mismatch_is_explained() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let mut desc = Hand::default_hand().description().clone();
    desc.sensor_mounts.truncate(2);
    let hand_path = dir.path().join("hand.json");
    fs::write(&hand_path, desc.to_json_pretty()).unwrap();
    let out = tacgraph(&["pretrain", "--out", s(dir.path()), "--hand", s(&hand_path), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generated for hand"));
}

#[test]
fn eval_matches_library_and_lists_baselines() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    small_pretrain(dir.path(), &[]);
    let out = ok(&["eval", "--out", s(dir.path())]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mean") && stdout.contains("zero"));

    let report: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    let hand = Hand::default_hand();
    let ck = load_checkpoint(dir.path().join("checkpoint.json")).unwrap();
    let ds = Dataset::load(&hand, dir.path().join("dataset.jsonl")).unwrap();
    let data = PreparedData::new(&ds, &hand, &ck.config, Exec::Sequential).unwrap();
    let lib = evaluate(&ck.model().unwrap(), &data, ck.config.mask_ratio, ck.config.eval_seed, Exec::Sequential).unwrap();
    assert_eq!(report, lib);
}

#[test]
fn embed_one_frame_per_line() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    small_pretrain(dir.path(), &[]);
    ok(&["embed", "--out", s(dir.path()), "--limit", "1"]);
    let path = dir.path().join("embeddings.jsonl");
    let one = fs::read_to_string(&path).unwrap();
    assert_eq!(one.lines().count(), 1);
    let row: Vec<f64> = serde_json::from_str(one.lines().next().unwrap()).unwrap();
    assert_eq!(row.len(), 8);

    ok(&["embed", "--out", s(dir.path())]);
    let all = fs::read_to_string(&path).unwrap();
    assert_eq!(all.lines().count(), 6);
    ok(&["embed", "--out", s(dir.path()), "--workers", "1"]);
    assert_eq!(all, fs::read_to_string(&path).unwrap());
}

#[test]
fn grad_check_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["grad-check", "--out", s(dir.path()), "--seeds", "2"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("pretrain_loss"));
    assert_eq!(stdout.matches("pass").count(), 5);
    let strict = tacgraph(&["grad-check", "--out", s(dir.path()), "--seeds", "1", "--threshold", "1e-300"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn show_layout_prints_raw_and_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["show-layout", "--out", s(dir.path())]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let hand = Hand::default_hand();
    let blocks: Vec<&str> = stdout.split("\n\n").filter(|b| !b.trim().is_empty()).collect();
    assert_eq!(blocks.len(), hand.num_sensors());
    for (s_idx, block) in blocks.iter().enumerate() {
        let rows: Vec<&str> = block.lines().skip(2).collect();
        assert_eq!(rows.len(), 15);
        let layout = hand.sensor_layout(s_idx);
        let canon = canonicalize(layout);
        for (k, row) in rows.iter().enumerate() {
            let v: Vec<f64> = row.split_whitespace().skip(2).map(|x| x.parse().unwrap()).collect();
            assert_eq!(&v[..3], &layout.taxels[k].t[..]);
            assert_eq!(&v[3..], &canon.coords[k][..]);
        }
    }
}

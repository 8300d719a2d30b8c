use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deeppolar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> (String, Value) {
    let out = bin(args);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let last = stdout.lines().last().expect("summary line");
    (stdout.clone(), serde_json::from_str(last).expect("summary is json"))
}

fn kv(key: &str, p: &Path) -> String {
    format!("{key}={:?}", p.display().to_string())
}

const TINY: [&str; 7] = [
    "batch_size=64",
    "epochs=2",
    "dec_steps=3",
    "enc_steps=2",
    "enc_hidden=8",
    "dec_hidden=8",
    "seed=11",
];

#[test]
fn construct_prints_information_set() {
    let (out, summary) = ok(&["construct", "n=16", "k=8", "ell=4"]);
    assert!(out.contains("I = {7, 9, 10, 11, 12, 13, 14, 15}"), "{out}");
    assert!(out.contains("F = {0, 1, 2, 3, 4, 5, 6, 8}"), "{out}");
    assert_eq!(summary["k"], 8);
}

#[test]
fn unknown_key_is_rejected_with_its_name() {
    let out = bin(&["construct", "bogus_key=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn invalid_value_is_rejected() {
    let out = bin(&["construct", "n=15"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["inspect", &kv("checkpoint_in", &dir.path().join("nope.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn truncated_checkpoint_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train".to_string(), kv("run_dir", &run)];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&a);
    let text = std::fs::read_to_string(run.join("checkpoint.json")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, &text[..text.len() / 2]).unwrap();
    let out = bin(&["inspect", &kv("checkpoint_in", &bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_inspect_round_trip_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let mut args = vec!["train".to_string(), kv("run_dir", &train_dir)];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    let (_, summary) = ok(&a);
    assert_eq!(summary["command"], "train");
    for f in ["config.toml", "checkpoint.json", "loss.csv"] {
        assert!(train_dir.join(f).exists(), "{f}");
    }
    let ck = train_dir.join("checkpoint.json");

    let (_, info) = ok(&["inspect", &kv("checkpoint_in", &ck)]);
    assert_eq!((info["n"].as_u64(), info["k"].as_u64()), (Some(16), Some(8)));
    assert_eq!(info["seed"], 11);

    let eval_dir = dir.path().join("eval");
    let eval = |_: ()| {
        ok(&[
            "eval",
            &kv("checkpoint_in", &ck),
            &kv("run_dir", &eval_dir),
            "snrs=[0.0, 2.0]",
            "eval_batch=100",
            "max_blocks=300",
            "seed=4",
        ]);
        std::fs::read(eval_dir.join("report.csv")).unwrap()
    };
    let first = eval(());
    let second = eval(());
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("# "));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn classical_baselines_evaluate_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    for codec in ["polar_sc", "polar_sc_minsum", "polar_ml", "uncoded"] {
        let run = dir.path().join(codec);
        let (_, s) = ok(&[
            "eval",
            &format!("eval_codec={codec:?}"),
            &kv("run_dir", &run),
            "n=8",
            "k=4",
            "ell=2",
            "snrs=[1.0]",
            "eval_batch=50",
            "max_blocks=100",
        ]);
        assert_eq!(s["rows"].as_array().unwrap().len(), 1, "{codec}");
    }
}

#[test]
fn analyze_and_decode_only_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let fe = dir.path().join("fe");
    let (_, s) = ok(&[
        "analyze",
        "eval_codec=\"polar_sc\"",
        "analysis=\"first_errors\"",
        "num_blocks=2000",
        "eval_batch=500",
        &kv("run_dir", &fe),
    ]);
    assert_eq!(s["blocks"], 2000);
    assert!(fe.join("first_errors.csv").exists());

    let dist = dir.path().join("dist");
    let (_, s) = ok(&[
        "analyze",
        "eval_codec=\"polar_sc\"",
        "analysis=\"distance\"",
        "num_pairs=200",
        &kv("run_dir", &dist),
    ]);
    assert!(s["peaks"].as_u64().unwrap() >= 1);

    let dec = dir.path().join("dec");
    let mut args = vec!["decode-only".to_string(), kv("run_dir", &dec)];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    let (_, s) = ok(&a);
    assert_eq!(s["loss"]["steps"], 6);
    assert!(dec.join("checkpoint.json").exists());
}

#[test]
fn finetune_ste_marks_code_binary() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let mut args = vec!["train".to_string(), kv("run_dir", &train_dir)];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&a);
    let ft = dir.path().join("ft");
    let mut args = vec![
        "finetune".to_string(),
        "finetune_mode=\"ste\"".to_string(),
        kv("checkpoint_in", &train_dir.join("checkpoint.json")),
        kv("run_dir", &ft),
    ];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    let (_, s) = ok(&a);
    assert_eq!(s["binary"], true);
}

#[test]
fn refuses_to_overwrite_input_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train".to_string(), kv("run_dir", &run)];
    args.extend(TINY.iter().map(|s| s.to_string()));
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&a);
    let out = bin(&[
        "finetune",
        &kv("checkpoint_in", &run.join("checkpoint.json")),
        &kv("run_dir", &run),
        "finetune_steps=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "n = 8\nk = 4\nell = 2\n").unwrap();
    let (out, _) = ok(&["construct", "--config", file.to_str().unwrap(), "k=5"]);
    assert!(out.contains("I = {"), "{out}");
    let info = out.lines().next().unwrap();
    assert_eq!(info.matches(',').count(), 4, "{info}");
}

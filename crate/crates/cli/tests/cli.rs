use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use promptq::config::RunConfig;

fn promptq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny config, tiny dataset and a two-step checkpoint.
fn tiny_run(dir: &Path) {
    let mut cfg = RunConfig::tiny();
    cfg.train.steps = 2;
    cfg.train.batch_size = 1;
    fs::write(dir.join("tiny.toml"), cfg.to_toml()).unwrap();
    let out = promptq(&["gen-data", "--seed", "2", "--scenes", "2", "--config", p(&dir.join("tiny.toml")), "--out", p(&dir.join("d.jsonl"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = promptq(&["train", "--config", p(&dir.join("tiny.toml")), "--data", p(&dir.join("d.jsonl")), "--out", p(&dir.join("run"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&promptq(&[])), 1);
    assert_eq!(code(&promptq(&["train"])), 1);
    assert_eq!(code(&promptq(&["gen-data", "--seed", "x", "--scenes", "1", "--out", "o"])), 1);
    assert_eq!(code(&promptq(&["--help"])), 0);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for f in [&a, &b] {
        let out = promptq(&["gen-data", "--seed", "11", "--scenes", "2", "--out", p(f)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["scenes"], 2);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let out = promptq(&["gen-data", "--seed", "11", "--scenes", "0", "--out", p(&a)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, RunConfig::tiny().to_toml()).unwrap();
    let missing = dir.path().join("nowhere.jsonl");
    let out = promptq(&["train", "--config", p(&cfg), "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.jsonl"), "{}", stderr(&out));
    fs::write(&cfg, "[model]\nhidden_dim = \"wide\"\n").unwrap();
    let out = promptq(&["train", "--config", p(&cfg), "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_run(d);
    for f in ["model.ckpt", "loss_curve.jsonl", "metrics.json", "config.toml", "events.log"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let curve = fs::read_to_string(d.join("run/loss_curve.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), 2);

    let ckpt = d.join("run/model.ckpt");
    let out = promptq(&["eval", "--checkpoint", p(&ckpt), "--data", p(&d.join("d.jsonl")), "--reps", "V,P", "--config", p(&d.join("tiny.toml")), "--out", p(&d.join("m.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m.json")).unwrap()).unwrap();
    assert!(report["metrics"]["segment.ap25"].is_number());

    let (data, wide_cfg, w_json) = (d.join("d.jsonl"), d.join("wide.toml"), d.join("w.json"));
    let mut wide = RunConfig::tiny();
    wide.model.hidden_dim = 32;
    fs::write(&wide_cfg, wide.to_toml()).unwrap();
    let args = ["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--config", p(&wide_cfg), "--out", p(&w_json)];
    let out = promptq(&args);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));
    assert!(!w_json.exists());
    let forced: Vec<&str> = args.iter().copied().chain(["--force"]).collect();
    assert_eq!(code(&promptq(&forced)), 0);

    let out = promptq(&["infer", "--checkpoint", p(&ckpt), "--data", p(&d.join("d.jsonl")), "--scene-id", "0", "--prompt-kind", "visual", "--prompt", "chair", "--top-k", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["top"].as_array().unwrap().len(), 2);
    let out = promptq(&["infer", "--checkpoint", p(&ckpt), "--data", p(&d.join("d.jsonl")), "--scene-id", "0", "--prompt-kind", "numerical", "--prompt", "0,0,0.4,0.5,0.5,0.8"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["text"].is_string());
    let out = promptq(&["infer", "--checkpoint", p(&ckpt), "--data", p(&d.join("d.jsonl")), "--scene-id", "99", "--prompt-kind", "text", "--prompt", "chair"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sabotaged_grad_check_exits_three() {
    let out = promptq(&["grad-check", "--sabotage"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

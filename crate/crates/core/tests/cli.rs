use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trajcast"));
    cmd.args(args).env("RUST_LOG", "warn");
    match seed_env {
        Some(s) => cmd.env("TRAJCAST_SEED", s),
        None => cmd.env_remove("TRAJCAST_SEED"),
    };
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let data = d("data");
    run(&["generate", "--out", s(&data), "--count", "16", "--val-count", "6", "--seed", "3", "--format", "csv"], None);
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let config = d("train.cfg");
    std::fs::write(&config, "epochs = 2\nbatch_size = 8\nchannels = 12\n# comment\nuse_temp = true\n").unwrap();
    let train = |out: &Path, log: &Path, seed: Option<&str>| {
        run(
            &["train", "--config", s(&config), "--set", "use_spatial=false", "--data", s(&manifest), "--out", s(out), "--log", s(log)],
            seed,
        );
    };
    train(&d("a.json"), &d("a.jsonl"), None);
    train(&d("b.json"), &d("b.jsonl"), None);
    train(&d("c.json"), &d("c.jsonl"), Some("17"));
    let read = |name: &str| std::fs::read_to_string(d(name)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.json"), read("c.json"));
    let ckpt: serde_json::Value = serde_json::from_str(&read("c.json")).unwrap();
    assert_eq!(ckpt["seed"], 17);
    for line in read("a.jsonl").lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["kind"].is_string());
    }

    let ckpt_a = d("a.json");
    run(&["evaluate", "--checkpoint", s(&ckpt_a), "--data", s(&manifest), "--report", s(&d("report.json")), "--dump", s(&d("dump.jsonl"))], None);
    let report: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&read("report.json")).unwrap();
    for col in ["minADE_1", "minFDE_1", "MR_1", "minADE_6", "minFDE_6", "MR_6", "b-FDE_6"] {
        assert!(report[col].is_number(), "{col}");
    }
    assert_eq!(read("dump.jsonl").lines().count(), 6);

    let jitter = run(&["jitter", "--checkpoint", s(&ckpt_a), "--data", s(&manifest)], None);
    assert!(!String::from_utf8(jitter.stdout).unwrap().trim().is_empty());

    let ckpt_c = d("c.json");
    run(&["ensemble-dump", "--checkpoint", s(&ckpt_a), "--checkpoint", s(&ckpt_c), "--data", s(&manifest), "--split", "train", "--out", s(&d("bank.jsonl"))], None);
    run(&["cluster", "--dump", s(&d("bank.jsonl")), "-j", "3", "--out", s(&d("pseudo.jsonl"))], None);
    assert_eq!(read("pseudo.jsonl").lines().count(), 16);
    run(
        &["train", "--config", s(&config), "--set", "use_mpt=true", "--set", "pseudo_targets=3", "--data", s(&manifest), "--pseudo", s(&d("pseudo.jsonl")), "--out", s(&d("mpt.json"))],
        None,
    );

    run(&["grid", "--axis", "shift", "--config", s(&config), "--set", "epochs=1", "--data", s(&manifest), "--out", s(&d("grid.csv"))], None);
    assert_eq!(read("grid.csv").lines().count(), 5);

    run(&["report", "--log", s(&d("a.jsonl")), "--out", s(&d("a.svg"))], None);
    assert!(read("a.svg").starts_with("<svg"));
}

#[test]
fn bad_input_exits_nonzero() {
    let out = Command::new(env!("CARGO_BIN_EXE_trajcast"))
        .args(["evaluate", "--checkpoint", "/nonexistent.json", "--data", "/nonexistent"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

use std::path::Path;
use std::process::{Command, Output};

fn phystran(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phystran"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = phystran(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(phystran(&["train", "--steps", "1"]).status.code(), Some(2));
    assert_eq!(phystran(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(phystran(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.safetensors");
    let out = phystran(&[
        "eval",
        "--ckpt",
        p(&missing),
        "--out",
        p(&dir.path().join("e.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--out", p(d), "--per-type", "1", "--seed", "5"]);
    }
    let ma = std::fs::read(a.join("manifest.jsonl")).unwrap();
    let mb = std::fs::read(b.join("manifest.jsonl")).unwrap();
    assert!(!ma.is_empty());
    assert_eq!(ma, mb);
    let text = String::from_utf8(ma.clone()).unwrap();
    let record: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let schema: serde_json::Value =
        serde_json::from_str(phystran_core::assets::MANIFEST_SCHEMA).unwrap();
    let keys = |v: &serde_json::Value| {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    let mut required: Vec<String> = schema["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap().to_string())
        .collect();
    required.sort();
    assert_eq!(keys(&record), required);
    let traj: serde_json::Value =
        serde_json::from_str(phystran_core::assets::TRAJECTORY_SCHEMA).unwrap();
    assert_eq!(
        keys(&record["spec"]),
        keys(&traj["$defs"]["spec"]["properties"])
    );
    let out = ok(&["verify", "--manifest", p(&a.join("manifest.jsonl"))]);
    let lines = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        lines.lines().count(),
        String::from_utf8(ma).unwrap().lines().count()
    );
}

#[test]
fn train_edit_and_ablate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-data",
        "--out",
        p(&data),
        "--per-type",
        "1",
        "--seed",
        "3",
    ]);
    let manifest = data.join("manifest.jsonl");
    let ckpt = dir.path().join("a.safetensors");
    let trace = dir.path().join("trace.jsonl");
    ok(&[
        "train",
        "--manifest",
        p(&manifest),
        "--stage",
        "A",
        "--steps",
        "2",
        "--out",
        p(&ckpt),
        "--trace",
        p(&trace),
    ]);
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 2);
    let ckpt_b = dir.path().join("b.safetensors");
    ok(&[
        "train",
        "--manifest",
        p(&manifest),
        "--stage",
        "B",
        "--steps",
        "1",
        "--init",
        p(&ckpt),
        "--out",
        p(&ckpt_b),
    ]);

    let line = std::fs::read_to_string(&manifest).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    let src = data.join(record["source"].as_str().unwrap());
    let (e1, e2) = (dir.path().join("e1.png"), dir.path().join("e2.png"));
    for e in [&e1, &e2] {
        ok(&[
            "edit",
            "--ckpt",
            p(&ckpt_b),
            "--in",
            p(&src),
            "--instruction",
            "drop it",
            "--seed",
            "4",
            "--steps",
            "3",
            "--out",
            p(e),
        ]);
    }
    assert_eq!(std::fs::read(&e1).unwrap(), std::fs::read(&e2).unwrap());
    let bad = phystran(&[
        "edit",
        "--ckpt",
        p(&ckpt_b),
        "--in",
        p(&src),
        "--instruction",
        "paint it blue",
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let report = dir.path().join("report");
    let out = ok(&[
        "ablate",
        "--manifest",
        p(&manifest),
        "--variants",
        "sft_only,full",
        "--out",
        p(&report),
        "--steps-a",
        "2",
        "--steps-b",
        "1",
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("sft_only") && table.contains("full"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert!(report.join("report.jsonl").exists());
    let again = ok(&["report", "--input", p(&report)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), table);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cadnet::harness::MANIFEST_FILE;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cadnet"))
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cadnet-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn generate(dir: &Path, seed: &str, counts: [&str; 3]) -> Output {
    run(bin().args(["--seed", seed, "generate", "--out"]).arg(dir).args([
        "--normal",
        counts[0],
        "--point",
        counts[1],
        "--contextual",
        counts[2],
    ]))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn generate_writes_six_files_reproducibly() {
    let (a, b) = (tmp("gen-a"), tmp("gen-b"));
    assert!(generate(&a, "3", ["400", "12", "8"]).status.success());
    assert!(generate(&b, "3", ["400", "12", "8"]).status.success());
    let fa = files(&a);
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["contextual.jsonl", "manifest.json", "point.jsonl", "test.jsonl", "train.jsonl", "val.jsonl"]);
    assert_eq!(fa, files(&b));
    for d in [a, b] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn zero_counts_give_valid_empty_files() {
    let d = tmp("gen-zero");
    assert!(generate(&d, "1", ["0", "0", "0"]).status.success());
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "point.jsonl", "contextual.jsonl"] {
        let (h, s) = cadnet::dataset::read_dataset(&d.join(f)).unwrap();
        assert_eq!(h.s, 13);
        assert!(s.is_empty());
    }
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn seed_is_checked_before_any_side_effect() {
    let d = tmp("noseed");
    let out = run(bin().args(["generate", "--out"]).arg(&d));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert!(!d.exists());
    let out = run(bin().args(["--seed", "1", "ablate", "--rows", "full,nonsense", "--out"]).arg(&d));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown variant"));
    assert!(!d.exists());
}

#[test]
fn malformed_scenario_is_reported() {
    let d = tmp("badscen");
    std::fs::create_dir_all(&d).unwrap();
    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "name = 3\n").unwrap();
    let out = run(bin().args(["--seed", "1", "--config"]).arg(&cfg).args(["generate", "--out"]).arg(d.join("o")));
    assert!(!out.status.success());
    assert!(!d.join("o").exists());
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn train_infer_eval_round() {
    let d = tmp("round");
    assert!(generate(&d.join("data"), "2", ["300", "10", "10"]).status.success());
    let ck = d.join("m.ckpt");
    let out = run(bin().args(["--seed", "4", "train", "--epochs", "1", "--data"]).arg(d.join("data")).arg("--out").arg(&ck));
    assert!(out.status.success());
    assert!(ck.exists());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["runs"][0]["epochs"].as_array().unwrap().len(), 1);
    let data_manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("data").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["dataset_hashes"], data_manifest["files"]);

    // Retraining from the manifest's seed reproduces the checkpoint exactly.
    let ck2 = d.join("m2.ckpt");
    assert!(run(bin().args(["--seed", "4", "train", "--epochs", "1", "--data"]).arg(d.join("data")).arg("--out").arg(&ck2)).status.success());
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(&ck2).unwrap());

    let point = d.join("data").join("point.jsonl");
    let out = run(bin().args(["infer", "--checkpoint"]).arg(&ck).arg("--input").arg(&point));
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|r| r["threshold"] == 0.6));

    let out = run(bin().args(["infer", "--threshold", "1.0", "--checkpoint"]).arg(&ck).arg("--input").arg(&point));
    let text = String::from_utf8(out.stdout).unwrap();
    for l in text.lines() {
        let r: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(r["flagged"].as_array().unwrap().is_empty());
    }

    let out = run(bin().args(["eval", "--checkpoint"]).arg(&ck).arg("--data").arg(d.join("data")));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("reconstruction error") && text.contains("contextual accuracy"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn infer_reports_bad_records_and_continues() {
    let d = tmp("badrec");
    assert!(generate(&d.join("data"), "2", ["100", "2", "2"]).status.success());
    let ck = d.join("m.ckpt");
    assert!(run(bin().args(["--seed", "1", "train", "--epochs", "1", "--data"]).arg(d.join("data")).arg("--out").arg(&ck)).status.success());
    let src = std::fs::read_to_string(d.join("data").join("point.jsonl")).unwrap();
    let mut lines: Vec<&str> = src.lines().collect();
    lines.insert(2, "{\"id\": 1, \"nope\": true}");
    let input = d.join("mixed.jsonl");
    std::fs::write(&input, lines.join("\n")).unwrap();
    let out = run(bin().args(["infer", "--checkpoint"]).arg(&ck).arg("--input").arg(&input));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("record 2"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn ablate_filters_rows() {
    let d = tmp("ablate");
    std::fs::create_dir_all(&d).unwrap();
    let cfg = d.join("suite.toml");
    std::fs::write(&cfg, "seeds = 1\n[data]\nnormal = 300\npoint = 10\ncontextual = 10\n[train]\nmax_epochs = 1\n").unwrap();
    let out = run(bin().args(["--seed", "2", "--config"]).arg(&cfg).args(["ablate", "--rows", "full,wo-skip", "--out"]).arg(d.join("o")));
    // one epoch cannot meet the criteria; the exit code says so
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let table = std::fs::read_to_string(d.join("o").join("table.txt")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("full") && table.contains("wo-skip") && !table.contains("wo-gps"));
    assert!(stdout.contains("SKIP A5"));
    assert!(d.join("o").join("run_manifest.json").exists());
    assert!(d.join("o").join("checkpoints").join("full-0.ckpt").exists());
    std::fs::remove_dir_all(d).unwrap();
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/toy")
        .join(name)
}

fn advsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file below `dir`, by relative path.
fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().to_path_buf(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

/// Reruns `cmd` from the snapshot written by a first run and compares every
/// output byte for byte; the snapshot itself differs only in `output_dir`.
fn assert_reproducible(cmd: &str, extra: &[&str]) {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = fixture("config.json");
    let mut args = vec![cmd, "-c", s(&cfg), "-o", s(&a), "--threads", "1"];
    args.extend_from_slice(extra);
    let first = advsl(&args);
    assert!(first.status.success(), "{cmd}: {}", stderr(&first));
    let snap = a.join("resolved_config.json");
    let second = advsl(&[cmd, "-c", s(&snap), "-o", s(&b)]);
    assert!(second.status.success(), "{cmd} rerun: {}", stderr(&second));
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for ((pa, ca), (pb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        if pa == Path::new("resolved_config.json") {
            let strip = |c: &[u8]| -> String {
                String::from_utf8_lossy(c)
                    .lines()
                    .filter(|l| !l.contains("\"output_dir\""))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(ca), strip(cb), "{cmd}: snapshot");
        } else {
            assert!(ca == cb, "{cmd}: {} differs", pa.display());
        }
    }
}

#[test]
fn every_command_reproduces_from_its_snapshot() {
    assert_reproducible("train", &[]);
    assert_reproducible("selflearn", &[]);
    assert_reproducible("codeswitch", &[]);
    assert_reproducible("eval", &[]);
}

#[test]
fn toy_checkpoint_reproduces_recorded_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = advsl(&[
        "eval",
        "-c",
        s(&fixture("config.json")),
        "-o",
        s(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("expected.json")).unwrap()).unwrap();
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("eval_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["rows"][0]["accuracy"], expected["test_accuracy"]);
    assert_eq!(report["rows"][0]["n"], expected["n"]);
}

#[test]
fn retraining_the_toy_reproduces_the_fixture_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = advsl(&[
        "train",
        "-c",
        s(&fixture("config.json")),
        "-o",
        s(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(tmp.path().join("model.json")).unwrap(),
        std::fs::read(fixture("model.json")).unwrap()
    );
}

#[test]
fn corrupted_checkpoint_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let full = std::fs::read_to_string(fixture("model.json")).unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, &full[..full.len() / 2]).unwrap();
    let out = advsl(&[
        "eval",
        "-c",
        s(&fixture("config.json")),
        "-o",
        s(&tmp.path().join("o")),
        "--checkpoint",
        s(&bad),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!tmp.path().join("o").join("eval_report.json").exists());
}

#[test]
fn unlabeled_test_file_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let test = tmp.path().join("t.jsonl");
    std::fs::write(&test, "{\"text\":\"goal\",\"label\":\"sport\"}\n{\"text\":\"rain\",\"label\":\"weather\"}\n{\"text\":\"snow\"}\n").unwrap();
    let out = advsl(&[
        "eval",
        "-c",
        s(&fixture("config.json")),
        "-o",
        s(tmp.path()),
        "--test",
        s(&test),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn missing_vectors_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("config.json")).unwrap()).unwrap();
    cfg["paths"].as_object_mut().unwrap().remove("vectors");
    for key in ["train", "validation", "unlabeled", "test"] {
        cfg["paths"][key] = serde_json::Value::String(s(&fixture(&format!("{key}.jsonl"))).into());
    }
    let path = tmp.path().join("c.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let outdir = tmp.path().join("o");
    let out = advsl(&["train", "-c", s(&path), "-o", s(&outdir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("paths.vectors"), "{}", stderr(&out));
    assert!(!outdir.exists(), "nothing should be written");
}

#[test]
fn empty_pool_selflearn_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("config.json")).unwrap()).unwrap();
    cfg["paths"]["unlabeled"] = serde_json::Value::String(s(&empty).into());
    for key in ["train", "validation", "test", "vectors"] {
        let name = if key == "vectors" {
            "vectors.txt".to_string()
        } else {
            format!("{key}.jsonl")
        };
        cfg["paths"][key] = serde_json::Value::String(s(&fixture(&name)).into());
    }
    let path = tmp.path().join("c.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let (a, b) = (tmp.path().join("sl"), tmp.path().join("tr"));
    assert!(advsl(&["selflearn", "-c", s(&path), "-o", s(&a)])
        .status
        .success());
    assert!(advsl(&["train", "-c", s(&path), "-o", s(&b)])
        .status
        .success());
    assert_eq!(
        std::fs::read(a.join("model.json")).unwrap(),
        std::fs::read(b.join("model.json")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(a.join("history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn overrides_reach_the_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = advsl(&[
        "train",
        "-c",
        s(&fixture("config.json")),
        "-o",
        s(tmp.path()),
        "--epsilon",
        "10",
        "--epochs",
        "2",
        "--mode",
        "random",
        "--seed",
        "9",
        "--arch",
        "mlp1",
        "--kt",
        "30",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let snap: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("resolved_config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(snap["train"]["perturb"]["epsilon"], 10.0);
    assert_eq!(snap["train"]["perturb"]["mode"], "random");
    assert_eq!(snap["train"]["epochs"], 2);
    assert_eq!(snap["seed"], 9);
    assert_eq!(snap["model"]["arch"], "mlp1");
    assert_eq!(snap["selflearn"]["k_t"], 30);
}

#[test]
fn bad_config_field_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.json");
    std::fs::write(&path, r#"{"train": {"epochs": "five"}}"#).unwrap();
    let out = advsl(&["train", "-c", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train.epochs"), "{}", stderr(&out));
}

#[test]
fn codeswitch_writes_corpus_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = advsl(&[
        "codeswitch",
        "-c",
        s(&fixture("config.json")),
        "-o",
        s(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stats: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("switch_stats.json")).unwrap(),
    )
    .unwrap();
    let v = stats["vocab_replaced_ratio"].as_f64().unwrap();
    assert!(v > 0.0 && v < 1.0);
    let switched = std::fs::read_to_string(tmp.path().join("codeswitched.jsonl")).unwrap();
    let original = std::fs::read_to_string(fixture("test.jsonl")).unwrap();
    assert_eq!(switched.lines().count(), original.lines().count());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sdpf_core::data::load_pgm;

fn sdpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdpf")).args(args).output().expect("spawn sdpf")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = sdpf(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(args: &[&str]) -> i32 {
    sdpf(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for p in files(dir) {
        if p.is_dir() {
            out.extend(snapshot(&p));
        } else {
            out.push((p.clone(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn dict_build_verify_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("dict.txt");
    let t0 = Instant::now();
    ok(&["dict", "build", "--out", s(&d)]);
    assert!(t0.elapsed().as_secs_f64() < 5.0);
    let out = ok(&["dict", "verify", s(&d)]);
    assert!(out.contains("checks passed"), "{out}");
    assert!(!out.contains("FAIL"));

    let imgs = tmp.path().join("imgs");
    ok(&["dict", "export-images", s(&d), "--out-dir", s(&imgs), "--scale", "4"]);
    let written = files(&imgs);
    assert_eq!(written.len(), 49);
    let first = load_pgm(&written[0]).unwrap();
    assert_eq!((first.width(), first.height()), (20, 20));
    assert!(first.pixels().iter().all(|v| (0.0..=1.0).contains(v)));

    let text = fs::read_to_string(&d).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[3].split_whitespace().map(str::to_string).collect();
    let v: f64 = fields[5].parse().unwrap();
    fields[5] = format!("{}", v + 0.25);
    lines[3] = fields.join(" ");
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    assert_ne!(code(&["dict", "verify", s(&bad)]), 0);
}

#[test]
fn params_reproduce_reference_counts() {
    let out = ok(&["params", "B-C-c-C-C-C", "C-C-c-C-C-C", "B-B-c-C-C-C", "B-B-c-B-B-B"]);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows, ["arch,params", "B-C-c-C-C-C,170705", "C-C-c-C-C-C,172113", "B-B-c-C-C-C,80593", "B-B-c-B-B-B,23569"]);
    assert_eq!(ok(&["params"]).lines().count(), 33);
}

#[test]
fn invalid_arguments_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&["params", "C-C-C-C-C-C"]), 2);
    assert_eq!(code(&["train", "--arch", "B-X-c-C-C-C", "--out-dir", s(&out)]), 2);
    assert_eq!(code(&["train", "--batch-size", "0", "--out-dir", s(&out)]), 2);
    assert_eq!(code(&["train", "--lr", "-1", "--out-dir", s(&out)]), 2);
    assert_eq!(code(&["train", "--switch-epoch", "2", "--out-dir", s(&out)]), 2);
    assert_eq!(code(&["switch-train", "--epochs", "3", "--switch-epoch", "5", "--out-dir", s(&out)]), 2);
    assert_eq!(code(&["switch-train", "--arch", "C-C-c-C-C-C", "--epochs", "3", "--switch-epoch", "1", "--out-dir", s(&out)]), 2);
    assert_eq!(code(&["synth-data", "--out-dir", s(&out), "--fill", "2"]), 2);
    assert_eq!(code(&["train", "--no-such-flag"]), 2);
    assert!(!out.exists());
}

#[test]
fn runtime_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.gbck");
    assert_eq!(code(&["eval", "--checkpoint", s(&missing)]), 3);
    assert_eq!(code(&["dict", "verify", s(&missing)]), 3);
    let junk = tmp.path().join("junk.gbck");
    fs::write(&junk, b"GBCK but not really").unwrap();
    assert_eq!(code(&["inpaint", "--checkpoint", s(&junk), s(&junk), "--out-dir", s(&tmp.path().join("o"))]), 3);
}

#[test]
fn synth_data_is_stratified_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let table = ok(&["synth-data", "--out-dir", s(&a), "--num-samples", "25", "--size", "32", "--seed", "4"]);
    ok(&["synth-data", "--out-dir", s(&b), "--num-samples", "25", "--size", "32", "--seed", "4"]);
    assert!(table.contains("total,20,5"), "{table}");
    for row in ["0-5%,4,1", "5-10%,4,1", "10-15%,4,1", "15-20%,4,1", "20-25%,4,1"] {
        assert!(table.contains(row), "{table}");
    }
    let strip = |v: Vec<(PathBuf, Vec<u8>)>, root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        v.into_iter().map(|(p, d)| (p.strip_prefix(root).unwrap().to_path_buf(), d)).filter(|(p, _)| p != Path::new("run.json")).collect()
    };
    assert_eq!(strip(snapshot(&a), &a), strip(snapshot(&b), &b));
    assert_eq!(files(&a.join("clean")).len(), 25);
}

#[test]
fn training_workflow_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    ok(&["synth-data", "--out-dir", s(&data), "--num-samples", "50", "--seed", "9"]);
    let before = snapshot(&data);

    let run = root.join("run");
    let t0 = Instant::now();
    let log = ok(&[
        "train", "--data", s(&data), "--epochs", "5", "--seed", "9", "--out-dir", s(&run), "--checkpoint-every", "2",
    ]);
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "training took {secs} s");
    assert!(log.contains("40 training and 10 test samples"), "{log}");
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 7);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 9);
    assert_eq!(manifest["config"]["arch"], "B-C-c-C-C-C");
    assert_eq!(manifest["results"]["params"], 170_705);
    let (init, fin) = (manifest["results"]["initial_train_mse"].as_f64().unwrap(), manifest["results"]["final_train_mse"].as_f64().unwrap());
    assert!(fin < init, "{init} -> {fin}");
    assert!(run.join("checkpoints/epoch_0004.gbck").exists());

    // Re-running from the manifest reproduces the artifacts.
    let again = root.join("again");
    ok(&["train", "--data", s(&data), "--epochs", "5", "--seed", "9", "--out-dir", s(&again), "--checkpoint-every", "2"]);
    assert_eq!(fs::read(run.join("history.csv")).unwrap(), fs::read(again.join("history.csv")).unwrap());
    assert_eq!(fs::read(run.join("final.gbck")).unwrap(), fs::read(again.join("final.gbck")).unwrap());

    // Resuming from epoch 4 lands on the same final checkpoint.
    let resumed = root.join("resumed");
    let ck4 = run.join("checkpoints/epoch_0004.gbck");
    ok(&["train", "--data", s(&data), "--epochs", "5", "--seed", "9", "--out-dir", s(&resumed), "--resume", s(&ck4)]);
    assert_eq!(fs::read(run.join("final.gbck")).unwrap(), fs::read(resumed.join("final.gbck")).unwrap());

    let ck = run.join("final.gbck");
    let ev = root.join("eval");
    let table = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--time", "--out-dir", s(&ev)]);
    let rows: Vec<&str> = table.lines().filter(|l| l.contains('%') || l.starts_with("total")).collect();
    assert_eq!(rows.len(), 6, "{table}");
    assert!(rows[5].starts_with("total,10,"));
    assert!(table.contains("mean forward time"));
    let cols = fs::read_to_string(ev.join("table.csv")).unwrap();
    assert!(cols.starts_with("method,metric,entire set,0-5%,5-10%,10-15%,15-20%,20-25%\n"), "{cols}");

    let inputs: Vec<PathBuf> = files(&data.join("clean")).into_iter().take(2).collect();
    let restored = root.join("restored");
    ok(&["inpaint", "--checkpoint", s(&ck), s(&inputs[0]), s(&inputs[1]), "--out-dir", s(&restored)]);
    for p in &inputs {
        let (a, b) = (load_pgm(p).unwrap(), load_pgm(restored.join(p.file_name().unwrap())).unwrap());
        assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    }

    let dump = root.join("dump");
    let out = ok(&["filter-dump", "--checkpoint", s(&ck), s(&inputs[0]), s(&inputs[1]), "--out-dir", s(&dump)]);
    assert_eq!(files(&dump.join("kernels")).len(), 64);
    assert_eq!(files(&dump.join("responses")).len(), 64 * 2);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dump.join("run.json")).unwrap()).unwrap();
    assert!(m["results"]["max_span_residual"].as_f64().unwrap() < 1e-10, "{out}");

    assert_eq!(snapshot(&data), before, "inputs were modified");
}

#[test]
fn switch_train_relaxes_to_dense() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let log = ok(&[
        "switch-train", "--epochs", "2", "--switch-epoch", "1", "--num-samples", "10", "--size", "32", "--batch-size", "5",
        "--checkpoint-every", "0", "--out-dir", s(&out),
    ]);
    assert!(log.contains("params 170705 -> 172113"), "{log}");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert!(m["results"]["switch"]["max_abs_diff"].as_f64().unwrap() < 1e-12);
    assert_eq!(m["results"]["arch"], "C-C-c-C-C-C");
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 4);
}

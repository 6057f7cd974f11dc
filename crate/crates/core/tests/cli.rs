//! The binary end to end: exit codes, help text, reproducibility records.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ssvaerr");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("SSVAERR_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_data(dir: &Path) -> String {
    let out = dir.to_str().unwrap();
    let o = run(&[
        "gen-data",
        "--clips",
        "8",
        "--frames",
        "20",
        "--size",
        "16",
        "--seed",
        "7",
        "--noise",
        "4",
        "--val-fraction",
        "0.25",
        "--test-fraction",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir.join("manifest").to_str().unwrap().to_string()
}

const SMALL_MODEL: [&str; 8] = [
    "--input-size",
    "12",
    "--widths",
    "3,4",
    "--hidden",
    "6",
    "--bins",
    "5",
];

fn train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--data",
        data,
        "--out",
        out,
        "--epochs",
        "1",
        "--batch",
        "3",
        "--segment",
        "8",
        "--seed",
        "1",
    ];
    v.extend(SMALL_MODEL);
    v
}

#[test]
fn bogus_freeze_is_a_usage_error() {
    let o = run(&["train", "--freeze", "bogus", "--data", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    for v in ["none", "frontend", "trunk"] {
        assert!(e.contains(v), "{e}");
    }
    assert_eq!(run(&["train", "--colour", "red"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn help_documents_defaults() {
    let o = run(&["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let h = stdout(&o);
    for d in [
        "[default: 0.0001]",
        "[default: 10]",
        "[default: 20]",
        "[default: 0.0003]",
        "[default: none]",
    ] {
        assert!(h.contains(d), "missing {d} in\n{h}");
    }
    for sub in [
        "gen-data",
        "pretrain",
        "train",
        "eval",
        "ablate",
        "augment-preview",
        "describe",
    ] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage:"), "{sub}");
    }
    let h = stdout(&run(&["pretrain", "--help"]));
    for d in [
        "[default: 0.996]",
        "[default: 0.1]",
        "[default: 0.04]",
        "[default: 0.9]",
    ] {
        assert!(h.contains(d), "missing {d}");
    }
}

#[test]
fn gen_data_writes_manifest_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_data(dir.path());
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 8);
    let repro: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("repro.json")).unwrap())
            .unwrap();
    assert_eq!(repro["config"]["seed"], 7);
    assert_eq!(repro["version"], env!("CARGO_PKG_VERSION"));
    assert!(dir.path().join("run.log").exists());
}

#[test]
fn runs_are_reproducible_from_their_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(&dir.path().join("data"));
    let out = dir.path().join("run");
    let o = run(&train_args(&data, out.to_str().unwrap()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let files = ["metrics.csv", "best.ssvk", "last.ssvk", "repro.json"];
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| std::fs::read(out.join(f)).unwrap())
        .collect();

    let repro: serde_json::Value = serde_json::from_slice(&first[3]).unwrap();
    assert_eq!(repro["config"]["seed"], 1);
    assert_eq!(repro["config"]["weight_decay"], 1e-4);
    let argv: Vec<String> = repro["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect();
    std::fs::remove_dir_all(&out).unwrap();
    let o = Command::new(BIN)
        .args(&argv[1..])
        .env("SSVAERR_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }

    let ev = run(&[
        "eval",
        "--checkpoint",
        out.join("best.ssvk").to_str().unwrap(),
        "--data",
        &data,
    ]);
    assert_eq!(ev.status.code(), Some(0), "{}", stderr(&ev));
    assert!(
        stdout(&ev).starts_with("val split: ccc_arousal="),
        "{}",
        stdout(&ev)
    );
}

#[test]
fn frozen_pretext_training_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(&dir.path().join("data"));
    let pre = dir.path().join("pre");
    let mut args = vec![
        "pretrain",
        "--method",
        "lira",
        "--data",
        &data,
        "--out",
        pre.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch",
        "3",
        "--segment",
        "8",
    ];
    args.extend(SMALL_MODEL);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let init = format!("pretext:{}", pre.join("trunk.ssvk").display());
    let out = dir.path().join("run");
    let mut args = train_args(&data, out.to_str().unwrap());
    args.extend(["--init", &init, "--freeze", "frontend"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    let d = run(&[
        "describe",
        "--checkpoint",
        out.join("best.ssvk").to_str().unwrap(),
    ]);
    assert_eq!(d.status.code(), Some(0));
    assert!(stdout(&d).contains("frontend.conv.weight"));
}

#[test]
fn runtime_failures_exit_one_with_cause_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("nope").join("manifest");
    let o = run(&train_args(
        missing.to_str().unwrap(),
        out.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    let last = e.lines().last().unwrap();
    assert!(
        last.starts_with("error: ") && last.contains("run.log"),
        "{e}"
    );

    let o = run(&[
        "train",
        "--data",
        "x",
        "--out",
        out.to_str().unwrap(),
        "--lr",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning rate 0.5"), "{}", stderr(&o));

    let o = run(&[
        "eval",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--data",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("(log: stderr)"));
}

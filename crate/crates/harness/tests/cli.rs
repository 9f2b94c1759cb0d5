mod common;

use std::path::Path;
use std::process::{Command, Output};

fn hcmarl(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hcmarl"));
    c.args(args).env_remove("HCMARL_OUT");
    if let Some(p) = env_out {
        c.env("HCMARL_OUT", p);
    }
    c.output().unwrap()
}

/// Asserts a failure with the given exit code and a single stderr line
/// carrying the error class.
fn assert_fails(out: &Output, code: i32, class: &str) {
    assert_eq!(out.status.code(), Some(code), "{out:?}");
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(
        lines[0].starts_with(&format!("error class={class} ")),
        "{err}"
    );
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn train_eval_verify_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), common::TINY);
    let out = tmp.path().join("out");
    let o = hcmarl(
        &[
            "train",
            "--config",
            &cfg,
            "--seeds",
            "1,2",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{o:?}");
    let ck = out.join("run1_seed2").join("checkpoint.ckpt");
    assert!(ck.exists());
    assert!(out.join("aggregate.csv").exists());

    let o = hcmarl(&["verify-checkpoint", ck.to_str().unwrap()], None);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok "));

    let ev = tmp.path().join("ev");
    let o = hcmarl(
        &[
            "eval",
            ck.to_str().unwrap(),
            "--episodes",
            "3",
            "--greedy",
            "--out",
            ev.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{o:?}");
    let line = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(line.starts_with("format_version=1 episodes=3 greedy=1 "));
    assert_eq!(std::fs::read_to_string(ev.join("eval.txt")).unwrap(), line);

    let o = hcmarl(
        &[
            "train",
            "--resume",
            ck.to_str().unwrap(),
            "--iterations",
            "4",
        ],
        None,
    );
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(out.join("run1_seed2").join("metrics.txt")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn environment_variable_sets_default_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), common::TINY);
    let root = tmp.path().join("from_env");
    let o = hcmarl(
        &[
            "train",
            "--config",
            &cfg,
            "--seed",
            "4",
            "--iterations",
            "1",
        ],
        Some(&root),
    );
    assert!(o.status.success(), "{o:?}");
    assert!(root.join("run0_seed4").join("metrics.txt").exists());
}

#[test]
fn ablate_writes_a_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), common::TINY);
    let out = tmp.path().join("sweep");
    let o = hcmarl(
        &[
            "ablate",
            "--config",
            &cfg,
            "--axis",
            "m",
            "--values",
            "1,3",
            "--iterations",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{o:?}");
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    assert!(out.join("sweep.csv").exists());
}

#[test]
fn failures_print_one_classified_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "format_version = 1\ntrain.actr_lr = 1\n");
    let o = hcmarl(&["train", "--config", &bad], None);
    assert_fails(&o, 3, "config_error");
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.actr_lr"));

    assert_fails(
        &hcmarl(&["train", "--config", "/nonexistent.conf"], None),
        4,
        "io_error",
    );
    assert_fails(&hcmarl(&["train", "--bogus"], None), 2, "usage_error");
    assert_fails(&hcmarl(&["frobnicate"], None), 2, "usage_error");

    let good = write_config(tmp.path(), common::TINY);
    let out = tmp.path().join("o");
    let o = hcmarl(
        &[
            "train",
            "--config",
            &good,
            "--iterations",
            "0",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success());
    let ck = out.join("run0_seed7").join("checkpoint.ckpt");
    assert_fails(
        &hcmarl(&["eval", ck.to_str().unwrap(), "--episodes", "0"], None),
        2,
        "usage_error",
    );
    assert_fails(
        &hcmarl(&["ablate", "--config", &good, "--axis", "z"], None),
        2,
        "usage_error",
    );

    let bytes = std::fs::read(&ck).unwrap();
    std::fs::write(&ck, &bytes[..bytes.len() / 3]).unwrap();
    assert_fails(
        &hcmarl(&["verify-checkpoint", ck.to_str().unwrap()], None),
        5,
        "integrity_error",
    );
    assert_fails(
        &hcmarl(&["eval", ck.to_str().unwrap()], None),
        5,
        "integrity_error",
    );

    let text = String::from_utf8_lossy(&bytes).replacen("format_version=1", "format_version=9", 1);
    std::fs::write(&ck, text).unwrap();
    assert_fails(
        &hcmarl(&["verify-checkpoint", ck.to_str().unwrap()], None),
        6,
        "version_error",
    );
}

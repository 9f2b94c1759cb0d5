mod common;

use hcmarl_core::hierarchy::LayerSpec;
use hcmarl_harness::config::CONFIG_VERSION;
use hcmarl_harness::{HarnessError, RunConfig};

fn err(text: &str) -> HarnessError {
    RunConfig::parse(text).unwrap_err()
}

#[test]
fn sections_and_dotted_keys_agree() {
    let a = RunConfig::parse("format_version = 1\n[train]\nactor_lr = 0.002\n[env]\nagents = 5\n")
        .unwrap();
    let b = RunConfig::parse(
        "format_version = 1\ntrain.actor_lr = 0.002 # inline comment\nenv.agents = 5\n",
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train.actor_lr, 0.002);
    assert_eq!(a.env.agents, 5);
}

#[test]
fn tiny_config_values() {
    let c = common::tiny();
    assert_eq!(c.seeds, vec![7]);
    assert_eq!(
        c.hierarchy.layers,
        vec![LayerSpec::new(1, 1).unwrap(), LayerSpec::new(3, 2).unwrap()]
    );
    assert_eq!(c.hierarchy.consensus.categories, 4);
    assert_eq!(c.train.hidden, vec![8]);
}

#[test]
fn render_parses_back_to_the_same_config() {
    let mut c = common::tiny();
    c.set("train.actor_lr", "0.00000123").unwrap();
    c.set("env.obstacles", "").unwrap();
    c.set("train.hidden", "").unwrap();
    c.set("hierarchy.student_temperature", "0.30000000000000004")
        .unwrap();
    c.set("out", "some/dir").unwrap();
    let text = c.render();
    assert!(text.starts_with(&format!("format_version = {CONFIG_VERSION}\n")));
    assert_eq!(RunConfig::parse(&text).unwrap(), c);
    let d = RunConfig::default();
    assert_eq!(RunConfig::parse(&d.render()).unwrap(), d);
}

#[test]
fn every_rendered_key_is_settable() {
    let c = RunConfig::default();
    let mut other = RunConfig::default();
    for (k, v) in c.entries() {
        other.set(&k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
    }
    assert_eq!(other, c);
}

#[test]
fn unknown_key_is_named() {
    let e = err("format_version = 1\n[train]\nactr_lr = 0.1\n");
    assert_eq!(e.class(), "config_error");
    assert!(e.to_string().contains("train.actr_lr"), "{e}");
}

#[test]
fn bad_values_name_their_key() {
    for (text, key) in [
        ("env.agents = three", "env.agents"),
        ("train.gamma = 1.5", "train.gamma"),
        ("hierarchy.layers = 1-1", "hierarchy.layers"),
        ("hierarchy.layers = 0:1", "hierarchy.layers"),
        ("task = soccer", "task"),
        ("train.objective = ppo9", "train.objective"),
        ("seeds = ", "seeds"),
        ("eval_episodes = 0", "eval_episodes"),
        ("train.consensus = maybe", "train.consensus"),
    ] {
        let e = err(&format!("format_version = 1\n{text}\n"));
        assert_eq!(e.class(), "config_error", "{text}");
        assert!(e.to_string().contains(key), "{text}: {e}");
    }
}

#[test]
fn format_version_must_lead() {
    assert_eq!(
        err("task = rendezvous\nformat_version = 1\n").class(),
        "config_error"
    );
    assert_eq!(err("# only a comment\n").class(), "config_error");
    assert_eq!(err("format_version = 2\n").class(), "version_error");
}

#[test]
fn duplicate_keys_rejected() {
    let e = err("format_version = 1\niterations = 3\niterations = 4\n");
    assert!(e.to_string().contains("duplicate"));
}

#[test]
fn malformed_lines_rejected() {
    assert_eq!(
        err("format_version = 1\njust words\n").class(),
        "config_error"
    );
    assert_eq!(err("format_version = 1\n[train\n").class(), "config_error");
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        RunConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 2);
}

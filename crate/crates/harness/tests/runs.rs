mod common;

use std::path::Path;

use hcmarl_core::marl::{parameter_snapshot, MetricsRecord, Trainer};
use hcmarl_harness::metrics::{mean_stderr, read_metrics, METRICS_FILE};
use hcmarl_harness::ops::*;
use hcmarl_harness::{Checkpoint, RunConfig};

fn reg() -> Registries {
    Registries::default()
}

fn deterministic(ms: &[MetricsRecord]) -> Vec<MetricsRecord> {
    ms.iter().map(MetricsRecord::deterministic).collect()
}

fn fresh_trainer(cfg: &RunConfig, seed: u64) -> Trainer {
    let r = reg();
    Trainer::new(
        &cfg.task,
        cfg.env.clone(),
        cfg.train.clone(),
        &cfg.hierarchy,
        seed,
        &r.tasks,
        &r.objectives,
    )
    .unwrap()
}

/// Parses a CSV written by the harness into a header and numeric rows.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn zero_iterations_give_empty_metrics_and_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.iterations = 0;
    let s = run_train(&cfg, tmp.path(), &reg()).unwrap();
    let run = &s.runs[0];
    assert!(run.metrics.is_empty());
    assert_eq!(
        std::fs::read_to_string(run.dir.join(METRICS_FILE)).unwrap(),
        ""
    );
    let ck = Checkpoint::load(&run.checkpoint).unwrap();
    assert_eq!(ck.state.iteration, 0);
    assert_eq!(
        parameter_snapshot(&ck.state),
        parameter_snapshot(&fresh_trainer(&cfg, 7).state)
    );
}

#[test]
fn repeated_seed_gives_identical_streams() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.seeds = vec![1, 1];
    let s = run_train(&cfg, tmp.path(), &reg()).unwrap();
    assert_eq!(s.runs.len(), 2);
    assert_ne!(s.runs[0].dir, s.runs[1].dir);
    assert_eq!(
        deterministic(&s.runs[0].metrics),
        deterministic(&s.runs[1].metrics)
    );
    let txt = |r: &SeedRun| read_metrics(&r.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(
        deterministic(&txt(&s.runs[0])),
        deterministic(&txt(&s.runs[1]))
    );
    // standard errors of identical streams are zero
    for row in &s.aggregate {
        assert_eq!(row.get("mean_episode_reward_stderr"), Some(0.0));
    }
}

#[test]
fn metrics_files_are_versioned_and_schema_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run_train(&common::tiny(), tmp.path(), &reg()).unwrap();
    let dir = &s.runs[0].dir;
    let text = std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
    let mut keys = None;
    for line in text.lines() {
        assert!(line.starts_with("format_version=1 "));
        let k: Vec<&str> = line
            .split(' ')
            .map(|f| f.split('=').next().unwrap())
            .collect();
        assert_eq!(*keys.get_or_insert(k.clone()), k);
    }
    let (header, rows) = read_csv(&dir.join("metrics.csv"));
    assert_eq!(header[0], "format_version");
    assert_eq!(rows.len(), 3);
    // the CSV mirror holds the same numbers as the text stream
    let recs = read_metrics(&dir.join(METRICS_FILE)).unwrap();
    for (row, rec) in rows.iter().zip(&recs) {
        assert_eq!(row[0], 1.0);
        let vals: Vec<f64> = rec.0.iter().map(|(_, v)| *v).collect();
        assert_eq!(&row[1..], vals.as_slice());
    }
    assert!(std::fs::read_to_string(tmp.path().join(CONFIG_FILE))
        .unwrap()
        .starts_with("format_version = 1"));
}

#[test]
fn aggregate_recomputes_from_per_seed_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.seeds = vec![0, 1, 2];
    let s = run_train(&cfg, tmp.path(), &reg()).unwrap();
    let streams: Vec<_> = s
        .runs
        .iter()
        .map(|r| read_metrics(&r.dir.join(METRICS_FILE)).unwrap())
        .collect();
    let (header, rows) = read_csv(&tmp.path().join(AGGREGATE_FILE));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        for key in ["mean_episode_reward", "agreement_rate", "critic_loss"] {
            let xs: Vec<f64> = streams.iter().map(|s| s[i].get(key).unwrap()).collect();
            let (m, se) = mean_stderr(&xs);
            assert_eq!(row[col(&format!("{key}_mean"))], m);
            assert_eq!(row[col(&format!("{key}_stderr"))], se);
        }
        assert_eq!(row[col("seeds")], 3.0);
    }
    let (ch, crow) = read_csv_mixed(&tmp.path().join(CURVES_FILE));
    assert_eq!(ch, "format_version,variant,metric,iteration,mean,stderr");
    assert_eq!(crow.len(), 3 * CURVE_METRICS.len());
    assert!(crow.iter().all(|r| r.starts_with("1,hc_marl,")));
}

fn read_csv_mixed(path: &Path) -> (String, Vec<String>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(String::from);
    (lines.next().unwrap(), lines.collect())
}

#[test]
fn mean_stderr_by_hand() {
    let (m, se) = mean_stderr(&[1.0, 2.0, 6.0]);
    assert_eq!(m, 3.0);
    // sample variance 7, stderr sqrt(7 / 3)
    assert!((se - (7.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
}

#[test]
fn split_run_equals_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_with(&[("task", "predator_prey"), ("checkpoint_every", "2")]);
    cfg.iterations = 4;
    let straight = train_seed(&cfg, 5, &tmp.path().join("straight"), &reg()).unwrap();

    cfg.iterations = 2;
    let dir = tmp.path().join("split");
    let half = train_seed(&cfg, 5, &dir, &reg()).unwrap();
    // an interrupted run may have logged past its last checkpoint
    let mut stale = std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
    stale.push_str(
        &hcmarl_harness::metrics::format_record(&straight.metrics[0].clone())
            .replace("iteration=0", "iteration=2"),
    );
    stale.push('\n');
    std::fs::write(dir.join(METRICS_FILE), stale).unwrap();

    let resumed = resume(&half.checkpoint, Some(4), &reg()).unwrap();
    assert_eq!(
        deterministic(&resumed.metrics),
        deterministic(&straight.metrics)
    );
    assert_eq!(
        deterministic(&read_metrics(&dir.join(METRICS_FILE)).unwrap()),
        deterministic(&straight.metrics)
    );
    let a = Checkpoint::load(&straight.checkpoint).unwrap();
    let b = Checkpoint::load(&resumed.checkpoint).unwrap();
    assert_eq!(a.state, b.state);
}

#[test]
fn evaluation_reports_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_with(&[("task", "navigation"), ("env.step_limit", "60")]);
    cfg.iterations = 0;
    let ck = train_seed(&cfg, 0, tmp.path(), &reg()).unwrap().checkpoint;
    let e = run_eval(&ck, 0, true, 0, &reg()).unwrap_err();
    assert_eq!(e.class(), "usage_error");
    let r = run_eval(&ck, 4, true, 1, &reg()).unwrap();
    assert_eq!(r.episodes, 4);
    assert_eq!(r.success_rate, 0.0);
    assert_eq!(r.steps_mean, 60.0);
    assert_eq!(r.steps_stderr, 0.0);
    assert_eq!(run_eval(&ck, 4, true, 1, &reg()).unwrap(), r);
    let keys: Vec<String> = r.to_record().keys().map(String::from).collect();
    assert!(keys.contains(&"steps_to_complete_stderr".to_string()));
}

#[test]
fn ablation_rows_cover_values_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.iterations = 2;
    cfg.seeds = vec![0, 1];
    let s = run_ablation(&cfg, Axis::K, &[1, 4], tmp.path(), &reg()).unwrap();
    assert_eq!(s.rows.len(), 4);
    assert_eq!(s.per_value.len(), 2);
    let sweep = std::fs::read_to_string(tmp.path().join(SWEEP_FILE)).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 4);
    assert!(sweep.lines().skip(1).all(|l| l.starts_with("1,k,")));
    let summary = std::fs::read_to_string(tmp.path().join(SWEEP_SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
    // k = 1 agrees trivially
    for r in s.rows.iter().filter(|r| r.value == 1) {
        assert_eq!(r.final_agreement, 1.0);
    }
    assert!(tmp.path().join("k=4").join(AGGREGATE_FILE).exists());
}

#[test]
fn single_value_ablation_is_one_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny();
    cfg.iterations = 1;
    let s = run_ablation(&cfg, Axis::M, &[5], tmp.path(), &reg()).unwrap();
    assert_eq!(s.rows.len(), 1);
}

#[test]
fn m_axis_replaces_hierarchy_with_one_layer() {
    let cfg = common::tiny();
    for m in [1, 3, 5, 10] {
        let v = variant_config(&cfg, Axis::M, m).unwrap();
        assert_eq!(v.hierarchy.layers.len(), 1);
        assert_eq!(v.hierarchy.layers[0].window, m);
        // stride of the base's longest-window layer (3:2)
        assert_eq!(v.hierarchy.layers[0].stride, 2);
    }
    let k = variant_config(&cfg, Axis::K, 16).unwrap();
    assert_eq!(k.hierarchy.consensus.categories, 16);
    assert_eq!(k.hierarchy.layers, cfg.hierarchy.layers);
    assert_eq!(
        variant_config(&cfg, Axis::K, 0).unwrap_err().class(),
        "usage_error"
    );
    let off = common::tiny_with(&[("train.consensus", "false")]);
    assert_eq!(
        variant_config(&off, Axis::K, 4).unwrap_err().class(),
        "config_error"
    );
    assert!("q".parse::<Axis>().is_err());
}

#[test]
fn single_category_consensus_is_constant_on_the_buffer() {
    let cfg = variant_config(&common::tiny(), Axis::K, 1).unwrap();
    let mut tr = fresh_trainer(&cfg, 2);
    tr.train_iteration().unwrap();
    let buf = tr.collect_rollout().unwrap();
    assert!(!buf.is_empty());
    assert!(consensus_is_constant(&buf));
    // with more categories the categories do vary
    let cfg = variant_config(&common::tiny(), Axis::K, 8).unwrap();
    let buf = fresh_trainer(&cfg, 2).collect_rollout().unwrap();
    assert!(!consensus_is_constant(&buf));
}

#[test]
fn output_root_precedence() {
    let mut cfg = common::tiny();
    assert_eq!(
        output_root(Some(Path::new("a")), Some(&cfg)),
        Path::new("a")
    );
    cfg.out = Some("b".into());
    assert_eq!(output_root(None, Some(&cfg)), Path::new("b"));
}

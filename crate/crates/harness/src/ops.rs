use std::path::{Path, PathBuf};
use std::str::FromStr;

use hcmarl_core::envs::TaskRegistry;
use hcmarl_core::hierarchy::LayerSpec;
use hcmarl_core::marl::{MetricsRecord, ObjectiveRegistry, RolloutBuffer, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{
    aggregate, final_window_mean, mean_stderr, read_metrics, write_curves, write_records_csv,
    MetricsWriter, METRICS_FILE, METRICS_VERSION,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const CONFIG_FILE: &str = "config.txt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const EVAL_FILE: &str = "eval.txt";

/// Metrics plotted as learning curves.
pub const CURVE_METRICS: &[&str] = &[
    "mean_episode_reward",
    "mean_steps_to_complete",
    "success_rate",
    "agreement_rate",
];

/// Tasks and policy objectives available to a run, selected by name.
pub struct Registries {
    pub tasks: TaskRegistry,
    pub objectives: ObjectiveRegistry,
}

impl Default for Registries {
    fn default() -> Self {
        Self {
            tasks: TaskRegistry::with_builtins(),
            objectives: ObjectiveRegistry::with_builtins(),
        }
    }
}

/// Root directory for outputs: explicit flag, then the config's `out`, then
/// `$HCMARL_OUT`, then `runs`.
pub fn output_root(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = cfg.and_then(|c| c.out.clone()) {
        return p;
    }
    match std::env::var_os("HCMARL_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("runs"),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| HarnessError::io(p, e))
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<MetricsRecord>,
}

pub fn variant_name(cfg: &RunConfig) -> &'static str {
    if cfg.train.consensus {
        "hc_marl"
    } else {
        "baseline"
    }
}

/// One training run per seed under `out`, then cross-seed aggregates.
pub fn run_train(cfg: &RunConfig, out: &Path, reg: &Registries) -> Result<TrainSummary> {
    cfg.validate()?;
    mkdir(out)?;
    write(&out.join(CONFIG_FILE), &cfg.render())?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let dir = out.join(format!("run{i}_seed{seed}"));
        runs.push(train_seed(cfg, seed, &dir, reg)?);
    }
    let agg = write_aggregates(out, variant_name(cfg), &runs)?;
    Ok(TrainSummary {
        runs,
        aggregate: agg,
    })
}

/// Recomputes the aggregate from the per-seed metrics files on disk.
fn write_aggregates(out: &Path, variant: &str, runs: &[SeedRun]) -> Result<Vec<MetricsRecord>> {
    let streams = runs
        .iter()
        .map(|r| read_metrics(&r.dir.join(METRICS_FILE)))
        .collect::<Result<Vec<_>>>()?;
    let agg = aggregate(&streams);
    write_records_csv(&out.join(AGGREGATE_FILE), &agg)?;
    write_curves(
        &out.join(CURVES_FILE),
        &[(variant.to_string(), agg.clone())],
        CURVE_METRICS,
    )?;
    Ok(agg)
}

pub fn train_seed(cfg: &RunConfig, seed: u64, dir: &Path, reg: &Registries) -> Result<SeedRun> {
    mkdir(dir)?;
    let trainer = Trainer::new(
        &cfg.task,
        cfg.env.clone(),
        cfg.train.clone(),
        &cfg.hierarchy,
        seed,
        &reg.tasks,
        &reg.objectives,
    )?;
    continue_run(trainer, cfg, seed, dir, vec![])
}

fn continue_run(
    mut trainer: Trainer,
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
    mut metrics: Vec<MetricsRecord>,
) -> Result<SeedRun> {
    let path = dir.join(CHECKPOINT_FILE);
    let echo = cfg.render();
    let save = |t: &Trainer| Checkpoint::new(seed, echo.clone(), t.state.clone()).save(&path);
    let mut writer = MetricsWriter::create(dir, &metrics)?;
    save(&trainer)?;
    while (trainer.state.iteration as usize) < cfg.iterations {
        let rec = trainer.train_iteration()?;
        writer.append(&rec)?;
        metrics.push(rec);
        let it = trainer.state.iteration as usize;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            save(&trainer)?;
        }
    }
    save(&trainer)?;
    Ok(SeedRun {
        seed,
        dir: dir.to_path_buf(),
        metrics,
        checkpoint: path,
    })
}

/// Continues the run a checkpoint belongs to, up to `iterations` in total
/// (default: the budget recorded in the checkpoint). Metrics records past the
/// checkpoint are dropped before training resumes.
pub fn resume(checkpoint: &Path, iterations: Option<usize>, reg: &Registries) -> Result<SeedRun> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = RunConfig::parse(&ck.config)?;
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    let dir = checkpoint
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let done = ck.state.iteration as f64;
    let mpath = dir.join(METRICS_FILE);
    let existing = if mpath.exists() {
        read_metrics(&mpath)?
            .into_iter()
            .filter(|r| r.get("iteration").is_some_and(|i| i < done))
            .collect()
    } else {
        vec![]
    };
    let trainer = Trainer::from_state(ck.state, &reg.tasks, &reg.objectives)?;
    continue_run(trainer, &cfg, ck.seed, &dir, existing)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub greedy: bool,
    pub success_rate: f64,
    pub steps_mean: f64,
    pub steps_stderr: f64,
    pub reward_mean: f64,
    pub reward_stderr: f64,
}

impl EvalReport {
    pub fn to_record(&self) -> MetricsRecord {
        let mut r = MetricsRecord::default();
        r.push("episodes", self.episodes as f64);
        r.push("greedy", if self.greedy { 1.0 } else { 0.0 });
        r.push("success_rate", self.success_rate);
        r.push("steps_to_complete_mean", self.steps_mean);
        r.push("steps_to_complete_stderr", self.steps_stderr);
        r.push("episode_reward_mean", self.reward_mean);
        r.push("episode_reward_stderr", self.reward_stderr);
        r
    }
}

/// Evaluates a checkpoint's policy with decentralized execution.
pub fn run_eval(
    checkpoint: &Path,
    episodes: usize,
    greedy: bool,
    seed: u64,
    reg: &Registries,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(HarnessError::Usage("--episodes must be at least 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let trainer = Trainer::from_state(ck.state, &reg.tasks, &reg.objectives)?;
    let res = trainer.evaluate(episodes, greedy, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let steps: Vec<f64> = res.iter().map(|e| e.steps_to_complete as f64).collect();
    let rewards: Vec<f64> = res.iter().map(|e| e.total_reward).collect();
    let (steps_mean, steps_stderr) = mean_stderr(&steps);
    let (reward_mean, reward_stderr) = mean_stderr(&rewards);
    Ok(EvalReport {
        episodes,
        greedy,
        success_rate: res.iter().filter(|e| e.success).count() as f64 / episodes as f64,
        steps_mean,
        steps_stderr,
        reward_mean,
        reward_stderr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Consensus category count.
    K,
    /// Window length of a single consensus layer.
    M,
}

impl Axis {
    pub fn default_values(self) -> &'static [usize] {
        match self {
            Axis::K => &[1, 4, 8, 16],
            Axis::M => &[1, 3, 5, 10],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::K => "k",
            Axis::M => "m",
        }
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(Axis::K),
            "m" => Ok(Axis::M),
            _ => Err(HarnessError::Usage(format!(
                "unknown ablation axis `{s}` (expected k or m)"
            ))),
        }
    }
}

/// The base config with one axis value applied. An `m` value replaces the
/// hierarchy with one layer of window `m`, keeping the stride of the base
/// config's longest-window layer.
pub fn variant_config(base: &RunConfig, axis: Axis, value: usize) -> Result<RunConfig> {
    if value == 0 {
        return Err(HarnessError::Usage(format!(
            "ablation value for {} must be >= 1",
            axis.name()
        )));
    }
    if !base.train.consensus {
        return Err(HarnessError::config(
            "train.consensus",
            "ablation sweeps need the consensus path enabled",
        ));
    }
    let mut cfg = base.clone();
    match axis {
        Axis::K => cfg.hierarchy.consensus.categories = value,
        Axis::M => {
            let stride = base
                .hierarchy
                .layers
                .iter()
                .max_by_key(|l| l.window)
                .map_or(1, |l| l.stride);
            cfg.hierarchy.layers = vec![LayerSpec::new(value, stride)?];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub seed: u64,
    pub final_reward: f64,
    pub final_steps: f64,
    pub final_success_rate: f64,
    pub final_agreement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
    /// Per value: mean and standard error of the final-window reward.
    pub per_value: Vec<(usize, f64, f64)>,
}

/// One training run per value and seed, summarized by final-window metrics.
pub fn run_ablation(
    base: &RunConfig,
    axis: Axis,
    values: &[usize],
    out: &Path,
    reg: &Registries,
) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(HarnessError::Usage("--values must not be empty".into()));
    }
    let variants = values
        .iter()
        .map(|&v| variant_config(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    mkdir(out)?;
    let mut rows = vec![];
    let mut curves = vec![];
    let mut per_value = vec![];
    for (&value, cfg) in values.iter().zip(&variants) {
        let name = format!("{}={value}", axis.name());
        let summary = run_train(cfg, &out.join(&name), reg)?;
        let w = cfg.final_window;
        let start = rows.len();
        for run in &summary.runs {
            rows.push(SweepRow {
                value,
                seed: run.seed,
                final_reward: final_window_mean(&run.metrics, "mean_episode_reward", w),
                final_steps: final_window_mean(&run.metrics, "mean_steps_to_complete", w),
                final_success_rate: final_window_mean(&run.metrics, "success_rate", w),
                final_agreement: final_window_mean(&run.metrics, "agreement_rate", w),
            });
        }
        let rewards: Vec<f64> = rows[start..].iter().map(|r| r.final_reward).collect();
        let (m, se) = mean_stderr(&rewards);
        per_value.push((value, m, se));
        curves.push((name, summary.aggregate));
    }
    let v = METRICS_VERSION;
    let a = axis.name();
    let mut sweep = vec![format!(
        "format_version,axis,value,seed,final_reward,final_steps,final_success_rate,final_agreement"
    )];
    sweep.extend(rows.iter().map(|r| {
        format!(
            "{v},{a},{},{},{},{},{},{}",
            r.value, r.seed, r.final_reward, r.final_steps, r.final_success_rate, r.final_agreement
        )
    }));
    write(&out.join(SWEEP_FILE), &(sweep.join("\n") + "\n"))?;
    let mut summary =
        vec!["format_version,axis,value,seeds,final_reward_mean,final_reward_stderr".to_string()];
    summary.extend(
        per_value
            .iter()
            .map(|(val, m, se)| format!("{v},{a},{val},{},{m},{se}", base.seeds.len())),
    );
    write(&out.join(SWEEP_SUMMARY_FILE), &(summary.join("\n") + "\n"))?;
    write_curves(&out.join(CURVES_FILE), &curves, CURVE_METRICS)?;
    Ok(SweepSummary {
        axis,
        rows,
        per_value,
    })
}

/// True when every stored consensus category is 0 and every agent's c_att
/// is the same vector at every step.
pub fn consensus_is_constant(buf: &RolloutBuffer) -> bool {
    let cats_zero = buf
        .categories
        .iter()
        .chain(&buf.next_categories)
        .all(|c| c.iter().all(|k| k.0 == 0));
    let first = match buf.c_att.first() {
        Some(c) => c,
        None => return cats_zero,
    };
    cats_zero && buf.c_att.iter().chain(&buf.next_c_att).all(|c| c == first)
}

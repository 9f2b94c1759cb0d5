use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{verify_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{format_record, METRICS_VERSION};
use crate::ops::{self, output_root, Axis, Registries};

#[derive(Debug, Parser)]
#[command(
    name = "hcmarl",
    version,
    about = "Hierarchical consensus MARL experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run per seed and write metrics, aggregates and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint's policy.
    Eval(EvalArgs),
    /// Sweep the category count (k) or the layer window (m).
    Ablate(AblateArgs),
    /// Load a checkpoint, re-save it in memory and byte-compare.
    VerifyCheckpoint(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Single seed, overriding the config's seed list.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seed list, overriding the config's.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

impl SeedArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Output root; defaults to the config's `out`, then $HCMARL_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Iteration budget, overriding the config's.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Continue the run that wrote this checkpoint.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Episode count; defaults to the config's `eval_episodes`.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Act greedily instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    /// Seed of the evaluation episodes; defaults to the checkpoint's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory to write the report to, in addition to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values; defaults to 1,4,8,16 for k and 1,3,5,10 for m.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<usize>>,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub checkpoint: PathBuf,
}

fn load_config(path: &Path, seeds: &SeedArgs, iterations: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path)?;
    seeds.apply(&mut cfg);
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command, printing results to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let reg = Registries::default();
    match cli.command {
        Command::Train(a) => {
            if let Some(ck) = &a.resume {
                let run = ops::resume(ck, a.iterations, &reg)?;
                println!(
                    "seed={} iterations={} dir={}",
                    run.seed,
                    run.metrics.len(),
                    run.dir.display()
                );
                return Ok(());
            }
            let path = a.config.as_ref().expect("clap requires --config");
            let cfg = load_config(path, &a.seeds, a.iterations)?;
            let out = output_root(a.out.as_deref(), Some(&cfg));
            let summary = ops::run_train(&cfg, &out, &reg)?;
            for run in &summary.runs {
                println!(
                    "seed={} iterations={} dir={}",
                    run.seed,
                    run.metrics.len(),
                    run.dir.display()
                );
            }
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let episodes = match a.episodes {
                Some(n) => n,
                None => RunConfig::parse(&ck.config)?.eval_episodes,
            };
            let seed = a.seed.unwrap_or(ck.seed);
            let report = ops::run_eval(&a.checkpoint, episodes, a.greedy, seed, &reg)?;
            let line = format_record(&report.to_record());
            println!("{line}");
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
                let p = dir.join(ops::EVAL_FILE);
                std::fs::write(&p, line + "\n").map_err(|e| HarnessError::io(&p, e))?;
            }
        }
        Command::Ablate(a) => {
            let axis: Axis = a.axis.parse()?;
            let cfg = load_config(&a.config, &a.seeds, a.iterations)?;
            let values = a
                .values
                .clone()
                .unwrap_or_else(|| axis.default_values().to_vec());
            let out = output_root(a.out.as_deref(), Some(&cfg));
            let s = ops::run_ablation(&cfg, axis, &values, &out, &reg)?;
            for (v, m, se) in &s.per_value {
                println!(
                    "format_version={METRICS_VERSION} axis={} value={v} final_reward_mean={m} final_reward_stderr={se}",
                    axis.name()
                );
            }
        }
        Command::VerifyCheckpoint(a) => {
            let ck = verify_checkpoint(&a.checkpoint)?;
            println!(
                "ok path={} format_version={} seed={} iteration={}",
                a.checkpoint.display(),
                ck.format_version,
                ck.seed,
                ck.state.iteration
            );
        }
    }
    Ok(())
}

/// The single line printed on failure: the error class, then the message
/// with line breaks flattened.
pub fn error_line(class: &str, msg: &str) -> String {
    let flat: Vec<&str> = msg
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    format!("error class={class} message={}", flat.join(" | "))
}

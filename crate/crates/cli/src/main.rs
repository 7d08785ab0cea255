//! `steproute`: command-line pipeline for stepwise-routing experiments.
//!
//! Stages: `gen-world` → `collect` → `pairs` → `warm-judge` → `alternate`
//! → `train-router` → `sweep` → `eval-ba`, plus `route` for trajectory
//! dumps and `report` for plot data. Exit codes: 0 success, 1 usage error,
//! 2 precondition failure, 3 backend/transport failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "steproute", version, about = "Stepwise SRM/LRM routing pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread bound override (0 = available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/heldout query sets.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect per-query trajectory pools across the collection policies.
    Collect {
        #[arg(long)]
        dataset: PathBuf,
        /// Trained router checkpoint for the sixth collection policy.
        #[arg(long)]
        router: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build rule-based preference pairs over collected pools.
    Pairs {
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm-start the judge on seed-rubric preference pairs.
    WarmJudge {
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating rubricor/judge optimization with the validation gate.
    Alternate {
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        heldout_pools: PathBuf,
        #[arg(long)]
        heldout_pairs: PathBuf,
        /// Warm-started judge checkpoint.
        #[arg(long)]
        judge: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// GRPO router training (process rewards, or --outcome-only).
    TrainRouter {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rubricor: Option<PathBuf>,
        #[arg(long)]
        judge: Option<PathBuf>,
        #[arg(long)]
        heldout_pools: Option<PathBuf>,
        #[arg(long)]
        heldout_pairs: Option<PathBuf>,
        /// Train with outcome reward and cost penalty only (β = 0).
        #[arg(long)]
        outcome_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Route a dataset under one policy and dump trajectories.
    Route {
        #[arg(long)]
        dataset: PathBuf,
        /// srm_only | lrm_only | random:P | entropy:T | confidence:T |
        /// learned:CKPT[:THRESHOLD]
        #[arg(long)]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// 21-point threshold sweep with same-run LRM/SRM-only references.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        /// learned:CKPT | entropy | confidence | random
        #[arg(long)]
        policy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Budgeted accuracy from a sweep artifact.
    EvalBa {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot data: frontiers, difficulty buckets, signal grid, latency.
    Report {
        /// Sweep artifacts as LABEL=PATH (repeatable).
        #[arg(long = "sweep", value_parser = parse_labeled)]
        sweeps: Vec<(String, PathBuf)>,
        /// Trajectory dump for bucket/latency analysis.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Dataset supplying difficulty labels for the buckets.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_labeled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) => Ok((label.to_string(), PathBuf::from(path))),
        None => Ok(("sweep".to_string(), PathBuf::from(s))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())
        .map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.global.workers {
        cfg.workers = workers;
    }
    // Stage seeds flow from the global seed unless the config pins them.
    cfg.grpo.seed = cfg.seed;
    cfg.alternate.seed = cfg.seed;

    match &cli.command {
        Command::GenWorld { out } => commands::gen_world(&cfg, out),
        Command::Collect { dataset, router, out } => {
            commands::collect(&cfg, dataset, router.as_deref(), out)
        }
        Command::Pairs { pools, out } => commands::pairs_cmd(&cfg, pools, out),
        Command::WarmJudge { pools, pairs, out } => commands::warm_judge(&cfg, pools, pairs, out),
        Command::Alternate {
            pools,
            pairs,
            heldout_pools,
            heldout_pairs,
            judge,
            out,
        } => commands::alternate_cmd(&cfg, pools, pairs, heldout_pools, heldout_pairs, judge, out),
        Command::TrainRouter {
            dataset,
            rubricor,
            judge,
            heldout_pools,
            heldout_pairs,
            outcome_only,
            out,
        } => commands::train_router_cmd(
            &cfg,
            dataset,
            rubricor.as_deref(),
            judge.as_deref(),
            heldout_pools.as_deref(),
            heldout_pairs.as_deref(),
            *outcome_only,
            out,
        ),
        Command::Route { dataset, policy, out } => commands::route_cmd(&cfg, dataset, policy, out),
        Command::Sweep { dataset, policy, out } => commands::sweep_cmd(&cfg, dataset, policy, out),
        Command::EvalBa { sweep, out } => commands::eval_ba(&cfg, sweep, out),
        Command::Report {
            sweeps,
            trajectories,
            dataset,
            out,
        } => commands::report_cmd(&cfg, sweeps, trajectories.as_deref(), dataset.as_deref(), out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful exits; anything else is a
            // usage error (code 1).
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

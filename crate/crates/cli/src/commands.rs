//! Pipeline subcommand implementations.
//!
//! Every command reads only its declared inputs, writes its outputs
//! atomically, and drops a manifest (config hash, seed, input hashes, tool
//! version — no timestamps) next to them, so identical inputs and seed
//! reproduce byte-identical artifacts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use steproute::backends::remote::RemoteBackend;
use steproute::backends::simulated::SimulatedBackend;
use steproute::backends::{Backend, BackendKind};
use steproute::error::Error as CoreError;
use steproute::eval::{
    budgeted_accuracy, difficulty_usage, latency_report_simulated, pareto_frontier, sweep,
    OutcomeEstimator, SweepPoint, SweepPolicy,
};
use steproute::gate::HeldoutSet;
use steproute::grpo::{train_router, IterationRow, RewardSource, TrainInputs};
use steproute::io::{read_jsonl, write_jsonl, Manifest};
use steproute::prefdata::{build_pairs, collect_pool, PersistedPair, TrajectoryPool};
use steproute::routing::{PolicyKind, RouterPolicy};
use steproute::rubric::alternate::{alternate, AlternateConfig, QueryPairs};
use steproute::rubric::judge::{warm_start_judge, FeaturePair, JudgeModel};
use steproute::rubric::rubricor::RubricorModel;
use steproute::rubric::seed_rubric;
use steproute::synthworld::{generate_dataset, SyntheticQuery};
use steproute::types::{QueryRecord, RoutingTrajectory, SignalKind};

use crate::config::RunConfig;

/// Command failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: msg.into(),
        }
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: msg.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Transport { .. } => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CmdResult = Result<(), CliError>;

fn io_err(e: CoreError) -> CliError {
    CliError::from(e)
}

// ───────────────────────── shared plumbing ─────────────────────────

pub fn load_synthetic_dataset(path: &Path) -> Result<Vec<SyntheticQuery>, CliError> {
    read_jsonl::<SyntheticQuery>(path).map_err(io_err)
}

pub struct Backends {
    pub srm: Box<dyn Backend>,
    pub lrm: Box<dyn Backend>,
}

/// Build the SRM/LRM pair; simulated backends need the full query set for
/// the world model.
pub fn build_backends(cfg: &RunConfig, dataset: &[SyntheticQuery]) -> Result<Backends, CliError> {
    let make = |spec: &steproute::backends::BackendSpec| -> Result<Box<dyn Backend>, CliError> {
        match spec.kind {
            BackendKind::Simulated => Ok(Box::new(
                SimulatedBackend::new(spec.clone(), cfg.world.clone(), dataset).map_err(io_err)?,
            )),
            BackendKind::Remote => Ok(Box::new(RemoteBackend::new(spec.clone()).map_err(io_err)?)),
        }
    };
    Ok(Backends {
        srm: make(&cfg.backends.srm)?,
        lrm: make(&cfg.backends.lrm)?,
    })
}

/// Group trajectory rows into per-query pools, preserving line order.
pub fn group_pools(trajectories: Vec<RoutingTrajectory>) -> Vec<TrajectoryPool> {
    let mut pools: Vec<TrajectoryPool> = Vec::new();
    for traj in trajectories {
        match pools.last_mut() {
            Some(pool) if pool.query_id == traj.query_id => pool.trajectories.push(traj),
            _ => pools.push(TrajectoryPool {
                query_id: traj.query_id.clone(),
                trajectories: vec![traj],
            }),
        }
    }
    pools
}

pub fn load_pools(path: &Path) -> Result<Vec<TrajectoryPool>, CliError> {
    Ok(group_pools(read_jsonl(path).map_err(io_err)?))
}

/// Align persisted pairs with their pools by query id.
pub fn load_pairs_for(
    path: &Path,
    pools: &[TrajectoryPool],
) -> Result<Vec<Vec<steproute::prefdata::PreferencePair>>, CliError> {
    let rows: Vec<PersistedPair> = read_jsonl(path).map_err(io_err)?;
    let mut by_query: std::collections::HashMap<&str, Vec<steproute::prefdata::PreferencePair>> =
        std::collections::HashMap::new();
    for row in &rows {
        by_query
            .entry(row.query_id.as_str())
            .or_default()
            .push(steproute::prefdata::PreferencePair {
                winner_idx: row.winner_idx,
                loser_idx: row.loser_idx,
                rule: row.rule,
            });
    }
    Ok(pools
        .iter()
        .map(|p| by_query.get(p.query_id.as_str()).cloned().unwrap_or_default())
        .collect())
}

/// Parse a policy spec: `srm_only`, `lrm_only`, `random:P`,
/// `entropy:T`, `confidence:T`, or `learned:CKPT[:THRESHOLD]`.
pub fn parse_policy(spec: &str) -> Result<PolicyKind, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::usage(format!("unrecognized policy spec `{spec}`"));
    match parts[0] {
        "srm_only" => Ok(PolicyKind::SrmOnly),
        "lrm_only" => Ok(PolicyKind::LrmOnly),
        "random" => {
            let p: f64 = parts.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok(PolicyKind::Random { p })
        }
        "entropy" => {
            let t: f64 = parts.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok(PolicyKind::EntropyThreshold { threshold: t })
        }
        "confidence" => {
            let t: f64 = parts.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok(PolicyKind::ConfidenceThreshold { threshold: t })
        }
        "learned" => {
            let path = parts.get(1).ok_or_else(bad)?;
            let threshold: f64 = parts.get(2).map_or(Ok(0.5), |t| t.parse()).map_err(|_| bad())?;
            let policy = RouterPolicy::load(Path::new(path)).map_err(io_err)?;
            Ok(PolicyKind::Learned {
                policy: Arc::new(policy),
                decision_threshold: threshold,
                sample: false,
            })
        }
        _ => Err(bad()),
    }
}

/// Parse a sweep family: `learned:CKPT`, `entropy`, `confidence`, `random`.
pub fn parse_sweep_policy(spec: &str, cfg: &RunConfig) -> Result<SweepPolicy, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[0] {
        "learned" => {
            let path = parts
                .get(1)
                .ok_or_else(|| CliError::usage("learned sweep needs a checkpoint path"))?;
            let policy = RouterPolicy::load(Path::new(path)).map_err(io_err)?;
            Ok(SweepPolicy::Learned(Arc::new(policy)))
        }
        "entropy" => Ok(SweepPolicy::EntropyBaseline {
            scale: cfg.eval.entropy_scale,
        }),
        "confidence" => Ok(SweepPolicy::ConfidenceBaseline),
        "random" => Ok(SweepPolicy::RandomBaseline),
        other => Err(CliError::usage(format!("unrecognized sweep policy `{other}`"))),
    }
}

fn manifest_for(
    command: &str,
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[&str],
) -> Result<Manifest, CliError> {
    let mut m = Manifest::new(command, cfg.seed, cfg.hash());
    for path in inputs {
        m.add_input(path).map_err(io_err)?;
    }
    for o in outputs {
        m.add_output(o);
    }
    Ok(m)
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    steproute::io::atomic_write(path, text.as_bytes()).map_err(io_err)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

// ───────────────────────── subcommands ─────────────────────────

/// `gen-world`: synthesize the train and heldout query sets.
pub fn gen_world(cfg: &RunConfig, out: &Path) -> CmdResult {
    let train = generate_dataset(&cfg.world, cfg.dataset.train_size, cfg.seed).map_err(io_err)?;
    // Heldout ids must not collide with train ids: offset the stream.
    let heldout_all = generate_dataset(
        &cfg.world,
        cfg.dataset.train_size + cfg.dataset.heldout_size,
        cfg.seed.wrapping_add(1),
    )
    .map_err(io_err)?;
    let heldout: Vec<SyntheticQuery> = heldout_all
        .into_iter()
        .skip(cfg.dataset.train_size)
        .collect();
    write_jsonl(&out.join("train.jsonl"), &train).map_err(io_err)?;
    write_jsonl(&out.join("heldout.jsonl"), &heldout).map_err(io_err)?;
    let world_json = serde_json::to_vec_pretty(&cfg.world).map_err(|e| io_err(e.into()))?;
    steproute::io::atomic_write(&out.join("world.json"), &world_json).map_err(io_err)?;
    manifest_for("gen-world", cfg, &[], &["train.jsonl", "heldout.jsonl", "world.json"])?
        .write(out)
        .map_err(io_err)?;
    println!(
        "gen-world: {} train + {} heldout queries -> {}",
        cfg.dataset.train_size,
        cfg.dataset.heldout_size,
        out.display()
    );
    Ok(())
}

/// The collection policy set; `router` adds the trained outcome-only policy.
fn collection_policies(cfg: &RunConfig, router: Option<&Path>) -> Result<Vec<PolicyKind>, CliError> {
    let mut policies = vec![
        PolicyKind::SrmOnly,
        PolicyKind::LrmOnly,
        PolicyKind::Random {
            p: cfg.collect.random_p,
        },
        PolicyKind::EntropyThreshold {
            threshold: cfg.collect.entropy_threshold,
        },
        PolicyKind::ConfidenceThreshold {
            threshold: cfg.collect.confidence_threshold,
        },
    ];
    if let Some(path) = router {
        let policy = RouterPolicy::load(path).map_err(io_err)?;
        policies.push(PolicyKind::Learned {
            policy: Arc::new(policy),
            decision_threshold: 0.5,
            sample: true,
        });
    }
    Ok(policies)
}

/// `collect`: per-query trajectory pools across the collection policies.
pub fn collect(cfg: &RunConfig, dataset_path: &Path, router: Option<&Path>, out: &Path) -> CmdResult {
    let dataset = load_synthetic_dataset(dataset_path)?;
    let backends = build_backends(cfg, &dataset)?;
    let policies = collection_policies(cfg, router)?;
    let workers = cfg.effective_workers();
    let pools: Vec<TrajectoryPool> =
        steproute::parallel::parallel_map_indexed(dataset.len(), workers, |i| {
            collect_pool(
                &dataset[i].record,
                &policies,
                cfg.collect.per_policy_count,
                backends.srm.as_ref(),
                backends.lrm.as_ref(),
                &cfg.limits,
                cfg.signal,
                cfg.seed,
            )
        });
    let mut rows: Vec<RoutingTrajectory> = Vec::new();
    let mut skipped = 0usize;
    for pool in pools {
        if pool.trajectories.len() < TrajectoryPool::MIN_SIZE {
            log::warn!("pool {} below minimum size; query skipped", pool.query_id);
            skipped += 1;
            continue;
        }
        rows.extend(pool.trajectories);
    }
    write_jsonl(&out.join("pools.jsonl"), &rows).map_err(io_err)?;
    let mut inputs: Vec<&Path> = vec![dataset_path];
    if let Some(r) = router {
        inputs.push(r);
    }
    manifest_for("collect", cfg, &inputs, &["pools.jsonl"])?
        .write(out)
        .map_err(io_err)?;
    println!(
        "collect: {} trajectories over {} queries ({} skipped) -> {}",
        rows.len(),
        cfg_dataset_len(&rows),
        skipped,
        out.display()
    );
    Ok(())
}

fn cfg_dataset_len(rows: &[RoutingTrajectory]) -> usize {
    let mut n = 0;
    let mut last: Option<&str> = None;
    for r in rows {
        if last != Some(r.query_id.as_str()) {
            n += 1;
            last = Some(r.query_id.as_str());
        }
    }
    n
}

/// `pairs`: rule-based preference pairs over collected pools.
pub fn pairs_cmd(cfg: &RunConfig, pools_path: &Path, out: &Path) -> CmdResult {
    let pools = load_pools(pools_path)?;
    let seed = seed_rubric();
    let scorer = |t: &RoutingTrajectory| seed.score(t);
    let mut rows: Vec<PersistedPair> = Vec::new();
    for pool in &pools {
        if pool.trajectories.len() < TrajectoryPool::MIN_SIZE {
            continue;
        }
        let pairs =
            build_pairs(pool, &scorer, cfg.pairs.cost_sim_tol, cfg.pairs.score_gap_min)
                .map_err(io_err)?;
        rows.extend(pairs.into_iter().map(|p| PersistedPair {
            query_id: pool.query_id.clone(),
            winner_idx: p.winner_idx,
            loser_idx: p.loser_idx,
            rule: p.rule,
        }));
    }
    write_jsonl(&out.join("pairs.jsonl"), &rows).map_err(io_err)?;
    manifest_for("pairs", cfg, &[pools_path], &["pairs.jsonl"])?
        .write(out)
        .map_err(io_err)?;
    println!("pairs: {} preference pairs -> {}", rows.len(), out.display());
    Ok(())
}

/// `warm-judge`: Bradley–Terry warm start under the seed rubric.
pub fn warm_judge(cfg: &RunConfig, pools_path: &Path, pairs_path: &Path, out: &Path) -> CmdResult {
    let pools = load_pools(pools_path)?;
    let pairs = load_pairs_for(pairs_path, &pools)?;
    let seed = seed_rubric();
    let mut grouped = Vec::new();
    for (pool, pool_pairs) in pools.iter().zip(&pairs) {
        if pool_pairs.is_empty() {
            continue;
        }
        let items: Vec<(RoutingTrajectory, RoutingTrajectory)> = pool_pairs
            .iter()
            .map(|p| {
                (
                    pool.trajectories[p.winner_idx].clone(),
                    pool.trajectories[p.loser_idx].clone(),
                )
            })
            .collect();
        grouped.push((seed.clone(), items));
    }
    if grouped.is_empty() {
        return Err(CliError::precondition("no preference pairs to warm-start on"));
    }
    let mut judge = JudgeModel::new();
    let curve =
        warm_start_judge(&mut judge, &grouped, cfg.warm_judge.epochs, cfg.warm_judge.lr)
            .map_err(io_err)?;
    judge.save(&out.join("judge.ckpt")).map_err(io_err)?;
    let rows: Vec<String> = curve
        .iter()
        .enumerate()
        .map(|(e, l)| format!("{e},{l}"))
        .collect();
    write_csv(&out.join("warm_loss.csv"), "epoch,mean_bt_loss", &rows)?;
    manifest_for(
        "warm-judge",
        cfg,
        &[pools_path, pairs_path],
        &["judge.ckpt", "warm_loss.csv"],
    )?
    .write(out)
    .map_err(io_err)?;
    println!(
        "warm-judge: final mean loss {:.4} -> {}",
        curve.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// `alternate`: rubricor/judge alternating optimization with the gate.
#[allow(clippy::too_many_arguments)]
pub fn alternate_cmd(
    cfg: &RunConfig,
    pools_path: &Path,
    pairs_path: &Path,
    heldout_pools_path: &Path,
    heldout_pairs_path: &Path,
    judge_path: &Path,
    out: &Path,
) -> CmdResult {
    let pools = load_pools(pools_path)?;
    let pairs = load_pairs_for(pairs_path, &pools)?;
    let heldout_pools = load_pools(heldout_pools_path)?;
    let heldout_pairs = load_pairs_for(heldout_pairs_path, &heldout_pools)?;
    let heldout = HeldoutSet::from_pools(&heldout_pools, &heldout_pairs).map_err(io_err)?;

    let mut judge = JudgeModel::load(judge_path).map_err(io_err)?;
    let mut rubricor = RubricorModel::default();

    let seed = seed_rubric();
    let mut eval_pairs = Vec::new();
    for (pool, pool_pairs) in heldout_pools.iter().zip(&heldout_pairs) {
        for p in pool_pairs {
            eval_pairs.push(
                FeaturePair::build(
                    &seed,
                    &pool.trajectories[p.winner_idx],
                    &pool.trajectories[p.loser_idx],
                )
                .map_err(io_err)?,
            );
        }
    }

    let data: Vec<QueryPairs<'_>> = pools
        .iter()
        .zip(&pairs)
        .map(|(pool, pairs)| QueryPairs {
            pool,
            pairs: pairs.as_slice(),
        })
        .collect();
    let alt_cfg = AlternateConfig {
        seed: cfg.seed,
        ..cfg.alternate.clone()
    };
    let metrics = alternate(
        &mut rubricor,
        &mut judge,
        &data,
        &heldout,
        &cfg.gate,
        &eval_pairs,
        &alt_cfg,
    )
    .map_err(io_err)?;

    rubricor.save(&out.join("rubricor.ckpt")).map_err(io_err)?;
    judge.save(&out.join("judge.ckpt")).map_err(io_err)?;
    let rows: Vec<String> = metrics
        .iter()
        .map(|m| {
            format!(
                "{},{},{},{},{}",
                m.round, m.mean_rho, m.discard_rate, m.judge_heldout_accuracy, m.phase2_skipped
            )
        })
        .collect();
    write_csv(
        &out.join("rounds.csv"),
        "round,mean_rho,discard_rate,judge_heldout_accuracy,phase2_skipped",
        &rows,
    )?;
    manifest_for(
        "alternate",
        cfg,
        &[pools_path, pairs_path, heldout_pools_path, heldout_pairs_path, judge_path],
        &["rubricor.ckpt", "judge.ckpt", "rounds.csv"],
    )?
    .write(out)
    .map_err(io_err)?;
    for m in &metrics {
        println!(
            "alternate round {}: mean_rho {:.4}, discard {:.1}%, judge acc {:.3}",
            m.round,
            m.mean_rho,
            m.discard_rate * 100.0,
            m.judge_heldout_accuracy
        );
    }
    Ok(())
}

/// `train-router`: GRPO optimization of the routing policy.
#[allow(clippy::too_many_arguments)]
pub fn train_router_cmd(
    cfg: &RunConfig,
    dataset_path: &Path,
    rubricor_path: Option<&Path>,
    judge_path: Option<&Path>,
    heldout_pools_path: Option<&Path>,
    heldout_pairs_path: Option<&Path>,
    outcome_only: bool,
    out: &Path,
) -> CmdResult {
    let dataset = load_synthetic_dataset(dataset_path)?;
    let backends = build_backends(cfg, &dataset)?;
    let queries: Vec<QueryRecord> = dataset.iter().map(|q| q.record.clone()).collect();
    let inputs = TrainInputs {
        queries: &queries,
        srm: backends.srm.as_ref(),
        lrm: backends.lrm.as_ref(),
        limits: &cfg.limits,
        signal: cfg.signal,
    };
    let mut grpo_cfg = cfg.grpo.clone();
    grpo_cfg.seed = cfg.seed;

    let mut manifest_inputs: Vec<&Path> = vec![dataset_path];
    let (policy, rows) = if outcome_only {
        let mut c = grpo_cfg.clone();
        c.beta_process = 0.0;
        train_router(&c, &inputs, &RewardSource::OutcomeOnly, cfg.probe_every, None)
            .map_err(io_err)?
    } else {
        let rubricor_path = rubricor_path.ok_or_else(|| {
            CliError::precondition(
                "train-router needs --rubricor (or pass --outcome-only): missing rubricor checkpoint",
            )
        })?;
        let judge_path = judge_path.ok_or_else(|| {
            CliError::precondition(
                "train-router needs --judge (or pass --outcome-only): missing judge checkpoint",
            )
        })?;
        let hp = heldout_pools_path.ok_or_else(|| {
            CliError::precondition("train-router needs --heldout-pools for the validation gate")
        })?;
        let hq = heldout_pairs_path.ok_or_else(|| {
            CliError::precondition("train-router needs --heldout-pairs for the validation gate")
        })?;
        manifest_inputs.extend([rubricor_path, judge_path, hp, hq]);
        let rubricor = RubricorModel::load(rubricor_path).map_err(io_err)?;
        let judge = JudgeModel::load(judge_path).map_err(io_err)?;
        let heldout_pools = load_pools(hp)?;
        let heldout_pairs = load_pairs_for(hq, &heldout_pools)?;
        let heldout = HeldoutSet::from_pools(&heldout_pools, &heldout_pairs).map_err(io_err)?;
        let source = RewardSource::Process {
            rubricor: &rubricor,
            judge: &judge,
            heldout: &heldout,
            gate: &cfg.gate,
        };
        train_router(&grpo_cfg, &inputs, &source, cfg.probe_every, None).map_err(io_err)?
    };

    policy.save(&out.join("router.ckpt")).map_err(io_err)?;
    write_curves(&out.join("curves.csv"), &rows)?;
    manifest_for("train-router", cfg, &manifest_inputs, &["router.ckpt", "curves.csv"])?
        .write(out)
        .map_err(io_err)?;
    let final_reward = rows.last().map(|r| r.mean_reward).unwrap_or(f64::NAN);
    println!(
        "train-router: {} iterations, final mean reward {:.4} -> {}",
        rows.len(),
        final_reward,
        out.display()
    );
    Ok(())
}

fn write_curves(path: &Path, rows: &[IterationRow]) -> Result<(), CliError> {
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.iteration,
                r.mean_reward,
                fmt_opt(r.ba_probe),
                r.lrm_usage,
                r.clip_fraction,
                r.discarded_groups
            )
        })
        .collect();
    write_csv(
        path,
        "iteration,mean_reward,ba_probe,lrm_usage,clip_fraction,discarded_groups",
        &lines,
    )
}

/// `route`: dump trajectories for one policy over a dataset.
pub fn route_cmd(cfg: &RunConfig, dataset_path: &Path, policy_spec: &str, out: &Path) -> CmdResult {
    let dataset = load_synthetic_dataset(dataset_path)?;
    let backends = build_backends(cfg, &dataset)?;
    let pk = parse_policy(policy_spec)?;
    let queries: Vec<QueryRecord> = dataset.iter().map(|q| q.record.clone()).collect();
    let rollouts = steproute::eval::rollout_dataset(
        &pk,
        &queries,
        backends.srm.as_ref(),
        backends.lrm.as_ref(),
        &cfg.limits,
        cfg.signal,
        cfg.seed,
        cfg.effective_workers(),
    );
    let trajectories: Vec<RoutingTrajectory> = rollouts
        .into_iter()
        .flatten()
        .map(|r| r.trajectory)
        .collect();
    write_jsonl(&out.join("trajectories.jsonl"), &trajectories).map_err(io_err)?;
    manifest_for("route", cfg, &[dataset_path], &["trajectories.jsonl"])?
        .write(out)
        .map_err(io_err)?;
    println!(
        "route: {} trajectories under `{}` -> {}",
        trajectories.len(),
        policy_spec,
        out.display()
    );
    Ok(())
}

/// Persisted sweep artifact: the 21 points plus the same-run references.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub policy: String,
    pub signal: SignalKind,
    pub points: Vec<SweepPoint>,
    pub lrm_only: SweepPoint,
    pub srm_only: SweepPoint,
}

/// `sweep`: 21-threshold evaluation plus LRM-only/SRM-only references.
pub fn sweep_cmd(cfg: &RunConfig, dataset_path: &Path, policy_spec: &str, out: &Path) -> CmdResult {
    let dataset = load_synthetic_dataset(dataset_path)?;
    let backends = build_backends(cfg, &dataset)?;
    let family = parse_sweep_policy(policy_spec, cfg)?;
    let queries: Vec<QueryRecord> = dataset.iter().map(|q| q.record.clone()).collect();
    let fm = steproute::flops::FlopsModel::new(
        cfg.backends.srm.param_count,
        cfg.backends.lrm.param_count,
    )
    .map_err(io_err)?;
    let estimator = if cfg.eval.expected_accuracy {
        OutcomeEstimator::ExpectedSynthetic {
            world: &cfg.world,
            queries: &dataset,
        }
    } else {
        OutcomeEstimator::Realized
    };
    let workers = cfg.effective_workers();
    let mut points = sweep(
        &family,
        &queries,
        backends.srm.as_ref(),
        backends.lrm.as_ref(),
        &cfg.limits,
        cfg.signal,
        &fm,
        estimator,
        cfg.seed,
        workers,
    )
    .map_err(io_err)?;
    let reference = |pk: PolicyKind| {
        steproute::eval::evaluate_policy(
            &pk,
            &queries,
            backends.srm.as_ref(),
            backends.lrm.as_ref(),
            &cfg.limits,
            cfg.signal,
            &fm,
            estimator,
            cfg.seed,
            workers,
        )
    };
    let mut lrm_only = reference(PolicyKind::LrmOnly);
    lrm_only.threshold = 0.0; // always-regenerate end of the grid
    let mut srm_only = reference(PolicyKind::SrmOnly);
    srm_only.threshold = 1.0; // never-regenerate end of the grid
    if !cfg.eval.record_wall_time {
        for p in points.iter_mut() {
            p.wall_time_s = 0.0;
        }
        lrm_only.wall_time_s = 0.0;
        srm_only.wall_time_s = 0.0;
    }
    let artifact = SweepArtifact {
        policy: policy_spec.to_string(),
        signal: cfg.signal,
        points,
        lrm_only,
        srm_only,
    };
    let json = serde_json::to_vec_pretty(&artifact).map_err(|e| io_err(e.into()))?;
    steproute::io::atomic_write(&out.join("sweep.json"), &json).map_err(io_err)?;
    manifest_for("sweep", cfg, &[dataset_path], &["sweep.json"])?
        .write(out)
        .map_err(io_err)?;
    println!(
        "sweep: {} points, lrm_only flops {:.3e} -> {}",
        artifact.points.len(),
        artifact.lrm_only.total_flops,
        out.display()
    );
    Ok(())
}

/// `eval-ba`: budgeted accuracy from a sweep artifact.
pub fn eval_ba(cfg: &RunConfig, sweep_path: &Path, out: &Path) -> CmdResult {
    let text = std::fs::read_to_string(sweep_path)
        .map_err(|e| CliError::precondition(format!("{}: {e}", sweep_path.display())))?;
    let artifact: SweepArtifact =
        serde_json::from_str(&text).map_err(|e| CliError::precondition(e.to_string()))?;
    let mut reports = Vec::new();
    for pct in &cfg.eval.budgets {
        reports.push(
            budgeted_accuracy(
                &artifact.points,
                artifact.lrm_only.total_flops,
                *pct,
                Some(&artifact.srm_only),
            )
            .map_err(io_err)?,
        );
    }
    let json = serde_json::to_vec_pretty(&reports).map_err(|e| io_err(e.into()))?;
    steproute::io::atomic_write(&out.join("ba.json"), &json).map_err(io_err)?;
    manifest_for("eval-ba", cfg, &[sweep_path], &["ba.json"])?
        .write(out)
        .map_err(io_err)?;
    for r in &reports {
        println!(
            "BA@{:.0}: {}",
            r.budget_pct,
            r.ba.map(|b| format!("{b:.4}")).unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(())
}

/// `report`: frontier, difficulty buckets, per-signal grid, and latency.
pub fn report_cmd(
    cfg: &RunConfig,
    sweeps: &[(String, PathBuf)],
    trajectories_path: Option<&Path>,
    dataset_path: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let mut manifest_inputs: Vec<PathBuf> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();

    // Accuracy–FLOPs frontier per sweep.
    let mut signal_entries = Vec::new();
    for (label, path) in sweeps {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::precondition(format!("{}: {e}", path.display())))?;
        let artifact: SweepArtifact =
            serde_json::from_str(&text).map_err(|e| CliError::precondition(e.to_string()))?;
        let frontier = pareto_frontier(&artifact.points);
        let rows: Vec<String> = frontier
            .iter()
            .map(|p| format!("{},{},{}", p.threshold, p.total_flops, p.accuracy))
            .collect();
        let name = format!("frontier_{label}.csv");
        write_csv(&out.join(&name), "threshold,total_flops,accuracy", &rows)?;
        outputs.push(name);
        signal_entries.push((artifact.signal, artifact.points, artifact.lrm_only.total_flops));
        manifest_inputs.push(path.clone());
    }

    // Per-signal budgeted-accuracy grid.
    if !signal_entries.is_empty() {
        let rows_data = steproute::eval::signal_comparison(&signal_entries).map_err(io_err)?;
        let rows: Vec<String> = rows_data
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{}",
                    r.signal.name(),
                    fmt_opt(r.ba20),
                    fmt_opt(r.ba40),
                    fmt_opt(r.ba60)
                )
            })
            .collect();
        write_csv(&out.join("signals.csv"), "signal,ba20,ba40,ba60", &rows)?;
        outputs.push("signals.csv".into());
    }

    // Difficulty-bucketed usage and simulated latency over a trace dump.
    if let Some(traj_path) = trajectories_path {
        let trajectories: Vec<RoutingTrajectory> = read_jsonl(traj_path).map_err(io_err)?;
        manifest_inputs.push(traj_path.to_path_buf());
        let difficulties: std::collections::HashMap<String, f64> = match dataset_path {
            Some(dp) => {
                manifest_inputs.push(dp.to_path_buf());
                load_synthetic_dataset(dp)?
                    .into_iter()
                    .filter_map(|q| q.record.difficulty.map(|d| (q.record.id, d)))
                    .collect()
            }
            None => Default::default(),
        };
        let items: Vec<(Option<f64>, &RoutingTrajectory)> = trajectories
            .iter()
            .map(|t| (difficulties.get(&t.query_id).copied(), t))
            .collect();
        let usage = difficulty_usage(&items);
        let bucket_rows = vec![
            format!("easy,{},{}", usage.easy.count, fmt_opt(usage.easy.mean_usage)),
            format!("medium,{},{}", usage.medium.count, fmt_opt(usage.medium.mean_usage)),
            format!("hard,{},{}", usage.hard.count, fmt_opt(usage.hard.mean_usage)),
            format!(
                "extra_hard,{},{}",
                usage.extra_hard.count,
                fmt_opt(usage.extra_hard.mean_usage)
            ),
            format!("skipped,{},", usage.skipped),
        ];
        write_csv(&out.join("buckets.csv"), "bucket,count,mean_lrm_usage", &bucket_rows)?;
        outputs.push("buckets.csv".into());

        let latency = latency_report_simulated(
            &trajectories,
            cfg.eval.srm_ms_per_step,
            cfg.eval.lrm_ms_per_step,
        )
        .map_err(io_err)?;
        let json = serde_json::to_vec_pretty(&latency).map_err(|e| io_err(e.into()))?;
        steproute::io::atomic_write(&out.join("latency.json"), &json).map_err(io_err)?;
        outputs.push("latency.json".into());
    }

    let input_refs: Vec<&Path> = manifest_inputs.iter().map(|p| p.as_path()).collect();
    let output_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
    manifest_for("report", cfg, &input_refs, &output_refs)?
        .write(out)
        .map_err(io_err)?;
    println!("report: {} artifacts -> {}", outputs.len(), out.display());
    Ok(())
}

//! Group-relative policy optimization for the router: combined rewards,
//! group-normalized advantages, and the clipped surrogate update.
//!
//! Every decision in a trajectory shares the trajectory-level advantage
//! `(R − μ)/(σ + ε)` computed within its rollout group with the population
//! standard deviation. The update maximizes the clipped surrogate
//! `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)` with one gradient step per call; there
//! is no KL-to-reference term because the router is a small from-scratch
//! policy with no reference model.

use serde::{Deserialize, Serialize};

use crate::backends::Backend;
use crate::error::{Error, Result};
use crate::gate::{GateConfig, HeldoutSet};
use crate::rng::derive_rng;
use crate::routing::{run_trajectory, EngineLimits, PolicyGrad, PolicyKind, Rollout, RouterPolicy};
use crate::rubric::alternate::{process_reward, ProcessRewardOutcome};
use crate::rubric::judge::JudgeModel;
use crate::rubric::rubricor::RubricorModel;
use crate::types::{QueryRecord, RoutingAction, SignalKind};

pub const ADVANTAGE_EPS_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Rollout group size K.
    pub group_size: usize,
    /// Cost weight λ on LRM generation tokens.
    pub lambda_cost: f64,
    /// Process reward weight β.
    pub beta_process: f64,
    /// Surrogate clip ε.
    pub clip_eps: f64,
    pub lr: f64,
    pub iterations: usize,
    /// Queries per iteration batch (cycled through the dataset).
    pub batch_queries: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Entropy-bonus coefficient keeping the Bernoulli policy from
    /// saturating; preserves exploration and threshold-sweepable grading.
    /// Zero (the default) recovers the pure clipped surrogate.
    #[serde(default)]
    pub entropy_coef: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            lambda_cost: 0.001,
            beta_process: 0.5,
            clip_eps: 0.2,
            lr: 0.1,
            iterations: 200,
            batch_queries: 32,
            hidden: 128,
            seed: 0,
            entropy_coef: 0.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidArgument("group_size must be >= 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidArgument("clip_eps must lie in (0,1)".into()));
        }
        if self.lambda_cost < 0.0 || self.beta_process < 0.0 {
            return Err(Error::InvalidArgument("lambda and beta must be >= 0".into()));
        }
        if self.iterations > 0 && (self.batch_queries == 0 || self.hidden == 0) {
            return Err(Error::InvalidArgument("batch and hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Combined reward: `R_outcome − λ·C + β·R_process`.
pub fn total_reward(outcome: f64, cost_tokens: u64, process: Option<f64>, cfg: &GrpoConfig) -> f64 {
    outcome - cfg.lambda_cost * cost_tokens as f64
        + cfg.beta_process * process.unwrap_or(0.0)
}

/// Per-trajectory reward decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardBundle {
    pub outcome: f64,
    pub cost_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<f64>,
    pub total: f64,
}

impl RewardBundle {
    pub fn new(outcome: f64, cost_tokens: u64, process: Option<f64>, cfg: &GrpoConfig) -> Self {
        RewardBundle {
            outcome,
            cost_tokens,
            process,
            total: total_reward(outcome, cost_tokens, process, cfg),
        }
    }
}

/// Group-normalized advantages with the population standard deviation and
/// an additive guard; all-equal groups come out all-zero.
pub fn group_advantages(rewards: &[f64], eps_guard: f64) -> Vec<f64> {
    let k = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let mean = rewards.iter().sum::<f64>() / k;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k;
    let std = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (std + eps_guard)).collect()
}

/// A sampled rollout group with rewards and advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub query_id: String,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardBundle>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(query_id: String, rollouts: Vec<Rollout>, rewards: Vec<RewardBundle>) -> Result<Self> {
        if rollouts.len() != rewards.len() {
            return Err(Error::InvalidArgument("rollouts/rewards length mismatch".into()));
        }
        if rollouts.len() < 2 {
            return Err(Error::InvalidArgument("a rollout group needs K >= 2".into()));
        }
        let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
        let advantages = group_advantages(&totals, ADVANTAGE_EPS_GUARD);
        Ok(RolloutGroup {
            query_id,
            rollouts,
            rewards,
            advantages,
        })
    }
}

/// Metrics of one gradient step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// Fraction of decisions where the clipped branch was strictly active.
    pub clip_fraction: f64,
    pub lrm_usage: f64,
    pub decisions: usize,
}

/// One clipped-surrogate ascent step over all decisions in `groups`.
pub fn grpo_update(
    policy: &mut RouterPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<UpdateMetrics> {
    cfg.validate()?;
    let mut grad = PolicyGrad::zeros(policy.hidden);
    let mut decisions = 0usize;
    let mut clipped = 0usize;
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    let mut abs_adv_sum = 0.0;
    let mut usage_sum = 0.0;
    let mut usage_count = 0usize;

    for group in groups {
        for (rollout, (reward, &advantage)) in group
            .rollouts
            .iter()
            .zip(group.rewards.iter().zip(&group.advantages))
        {
            reward_sum += reward.total;
            reward_count += 1;
            abs_adv_sum += advantage.abs();
            if let Ok(u) = rollout.trajectory.lrm_usage_rate() {
                usage_sum += u;
                usage_count += 1;
            }
            for decision in &rollout.decisions {
                decisions += 1;
                let new_lp = policy.log_prob(&decision.state, decision.action)?;
                let ratio = (new_lp - decision.behavior_log_prob).exp();
                let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let unclipped = ratio * advantage;
                let clipped_val = clipped_ratio * advantage;
                if unclipped <= clipped_val {
                    // Min selects the unclipped branch: gradient flows.
                    if advantage != 0.0 {
                        let g = policy.grad_logprob(&decision.state, decision.action)?;
                        grad.add_scaled(&g, advantage * ratio);
                    }
                } else {
                    clipped += 1;
                }
                if cfg.entropy_coef > 0.0 {
                    // ∇H(π) = −Σ_a π_a ln(π_a) ∇log π_a over the two actions.
                    let p_regen = policy.forward(&decision.state)?;
                    for (action, p) in [
                        (RoutingAction::Continue, 1.0 - p_regen),
                        (RoutingAction::Regenerate, p_regen),
                    ] {
                        if p > 0.0 {
                            let g = policy.grad_logprob(&decision.state, action)?;
                            grad.add_scaled(&g, -cfg.entropy_coef * p * p.ln());
                        }
                    }
                }
            }
        }
    }
    if decisions > 0 {
        grad.scale(1.0 / decisions as f64);
        if !grad.is_finite() {
            return Err(Error::NonFinite("GRPO gradient"));
        }
        policy.apply_ascent(&grad, cfg.lr);
    }
    Ok(UpdateMetrics {
        mean_reward: if reward_count > 0 {
            reward_sum / reward_count as f64
        } else {
            0.0
        },
        mean_abs_advantage: if reward_count > 0 {
            abs_adv_sum / reward_count as f64
        } else {
            0.0
        },
        clip_fraction: if decisions > 0 {
            clipped as f64 / decisions as f64
        } else {
            0.0
        },
        lrm_usage: if usage_count > 0 {
            usage_sum / usage_count as f64
        } else {
            0.0
        },
        decisions,
    })
}

/// Where per-trajectory process rewards come from during training.
pub enum RewardSource<'a> {
    /// β treated as 0: outcome and cost only (collection policy six).
    OutcomeOnly,
    /// Frozen rubricor + judge, gate-validated per rollout group.
    Process {
        rubricor: &'a RubricorModel,
        judge: &'a JudgeModel,
        heldout: &'a HeldoutSet,
        gate: &'a GateConfig,
    },
    /// Every trajectory gets the same constant process reward (diagnostic;
    /// group normalization cancels it).
    FixedProcess(f64),
}

/// Everything the trainer needs to roll out trajectories.
pub struct TrainInputs<'a> {
    pub queries: &'a [QueryRecord],
    pub srm: &'a dyn Backend,
    pub lrm: &'a dyn Backend,
    pub limits: &'a EngineLimits,
    pub signal: SignalKind,
}

/// One row of the training curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub mean_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ba_probe: Option<f64>,
    pub lrm_usage: f64,
    pub clip_fraction: f64,
    pub discarded_groups: usize,
}

/// Train the router with GRPO. `probe` is an optional budgeted-accuracy
/// evaluator invoked every `probe_every` iterations for curve emission.
pub fn train_router(
    cfg: &GrpoConfig,
    inputs: &TrainInputs<'_>,
    reward_source: &RewardSource<'_>,
    probe_every: usize,
    probe: Option<&dyn Fn(&RouterPolicy) -> f64>,
) -> Result<(RouterPolicy, Vec<IterationRow>)> {
    cfg.validate()?;
    if inputs.queries.is_empty() {
        return Err(Error::EmptyInput("training queries"));
    }
    let mut init_rng = derive_rng(cfg.seed, &["router-init"]);
    let mut policy = RouterPolicy::random_init(cfg.hidden, &mut init_rng);
    let mut rows = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let groups = collect_groups(&policy, cfg, inputs, reward_source, iteration)?;
        let discarded_groups = groups.iter().filter(|g| g.is_none()).count();
        let live: Vec<RolloutGroup> = groups.into_iter().flatten().collect();
        if live.is_empty() {
            log::warn!("iteration {iteration}: all rollout groups discarded; skipping");
            rows.push(IterationRow {
                iteration,
                mean_reward: f64::NAN,
                ba_probe: None,
                lrm_usage: f64::NAN,
                clip_fraction: 0.0,
                discarded_groups,
            });
            continue;
        }
        let metrics = grpo_update(&mut policy, &live, cfg)?;
        let ba_probe = match (probe, probe_every) {
            (Some(f), every) if every > 0 && iteration % every == 0 => Some(f(&policy)),
            _ => None,
        };
        rows.push(IterationRow {
            iteration,
            mean_reward: metrics.mean_reward,
            ba_probe,
            lrm_usage: metrics.lrm_usage,
            clip_fraction: metrics.clip_fraction,
            discarded_groups,
        });
    }
    Ok((policy, rows))
}

/// Sample one iteration's rollout groups; `None` marks a gate-discarded
/// group.
/// Epoch-shuffled batch selection: queries are visited in a seeded
/// permutation that reshuffles each pass, so every batch mixes the dataset
/// evenly and runs stay deterministic.
fn batch_indices(iteration: usize, n: usize, batch: usize, seed: u64) -> Vec<usize> {
    let epoch = iteration * batch / n;
    let offset = (iteration * batch) % n;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &["batch-perm", &epoch.to_string()]);
    // Fisher–Yates.
    for i in (1..n).rev() {
        let j = (rand::Rng::random_range(&mut rng, 0..=i as u64)) as usize;
        perm.swap(i, j);
    }
    (0..batch).map(|b| perm[(offset + b) % n]).collect()
}

fn collect_groups(
    policy: &RouterPolicy,
    cfg: &GrpoConfig,
    inputs: &TrainInputs<'_>,
    reward_source: &RewardSource<'_>,
    iteration: usize,
) -> Result<Vec<Option<RolloutGroup>>> {
    let n = inputs.queries.len();
    let batch = cfg.batch_queries.min(n);
    let indices = batch_indices(iteration, n, batch, cfg.seed);
    let policy_arc = std::sync::Arc::new(policy.clone());
    let mut out = Vec::with_capacity(batch);
    for &qi in &indices {
        let query = &inputs.queries[qi];
        let pk = PolicyKind::Learned {
            policy: std::sync::Arc::clone(&policy_arc),
            decision_threshold: 0.5,
            sample: true,
        };
        let mut rollouts = Vec::with_capacity(cfg.group_size);
        for k in 0..cfg.group_size {
            let mut rng = derive_rng(
                cfg.seed,
                &[
                    "grpo-rollout",
                    &iteration.to_string(),
                    &query.id,
                    &k.to_string(),
                ],
            );
            match run_trajectory(
                query,
                inputs.srm,
                inputs.lrm,
                &pk,
                inputs.limits,
                inputs.signal,
                &mut rng,
            ) {
                Ok(r) => rollouts.push(r),
                Err(e) => log::warn!("rollout failed for {}: {e}", query.id),
            }
        }
        if rollouts.len() < 2 {
            out.push(None);
            continue;
        }
        let outcomes: Vec<f64> = rollouts
            .iter()
            .map(|r| {
                r.trajectory
                    .outcome_correct
                    .map(|c| if c { 1.0 } else { 0.0 })
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("query {} lacks an outcome", query.id))
                    })
            })
            .collect::<Result<_>>()?;
        let process: Option<Vec<f64>> = match reward_source {
            RewardSource::OutcomeOnly => None,
            RewardSource::FixedProcess(v) => Some(vec![*v; rollouts.len()]),
            RewardSource::Process {
                rubricor,
                judge,
                heldout,
                gate,
            } => {
                let trajs: Vec<_> = rollouts.iter().map(|r| r.trajectory.clone()).collect();
                let mut rng = derive_rng(
                    cfg.seed,
                    &["grpo-rubric", &iteration.to_string(), &query.id],
                );
                match process_reward(rubricor, judge, heldout, gate, &trajs, &mut rng)? {
                    ProcessRewardOutcome::Scored { rewards, .. } => Some(rewards),
                    ProcessRewardOutcome::GroupDiscarded => {
                        out.push(None);
                        continue;
                    }
                }
            }
        };
        let rewards: Vec<RewardBundle> = rollouts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                RewardBundle::new(
                    outcomes[i],
                    r.trajectory.lrm_tokens,
                    process.as_ref().map(|p| p[i]),
                    cfg,
                )
            })
            .collect();
        out.push(Some(RolloutGroup::new(query.id.clone(), rollouts, rewards)?));
    }
    Ok(out)
}

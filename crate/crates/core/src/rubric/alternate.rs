//! Alternating optimization of the rubricor and the judge, and frozen-model
//! process-reward computation for router training.
//!
//! Each round has two phases. Phase 1 freezes the judge: per query, the
//! rubricor samples M candidate rubrics, each is gate-validated, validated
//! candidates earn `ρ = log σ(mean preference margin)` under the frozen
//! judge, and the rubricor takes a policy-gradient step with the batch-mean
//! baseline. Phase 2 freezes the rubricor: one validated rubric per query
//! conditions Bradley–Terry training of the judge over that query's pairs.
//!
//! Discarded rubrics earn `ρ_discard`. The default penalizes them below the
//! worst validated candidate (batch min − 0.1); the zero-reward variant is
//! available but note that valid rubrics always have ρ < 0, so a zero
//! reward would rank a discarded rubric above every valid one.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{validate_rubric, GateConfig, HeldoutSet};
use crate::prefdata::{PreferencePair, TrajectoryPool};
use crate::rng::derive_rng;
use crate::rubric::judge::{pair_accuracy, sigmoid, train_bt, FeaturePair, JudgeModel};
use crate::rubric::rubricor::RubricorModel;
use crate::rubric::Rubric;
use crate::types::RoutingTrajectory;

/// Reward assigned to gate-discarded rubric candidates during rubricor
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiscardReward {
    Zero,
    BatchMinMinus { margin: f64 },
}

impl Default for DiscardReward {
    fn default() -> Self {
        DiscardReward::BatchMinMinus { margin: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlternateConfig {
    pub rounds: usize,
    /// Candidate rubrics sampled per query in phase 1 (M).
    pub samples_per_query: usize,
    pub rubricor_lr: f64,
    pub judge_lr: f64,
    pub judge_epochs: usize,
    #[serde(default)]
    pub discard_reward: DiscardReward,
    pub seed: u64,
}

impl Default for AlternateConfig {
    fn default() -> Self {
        AlternateConfig {
            rounds: 3,
            samples_per_query: 4,
            rubricor_lr: 0.5,
            judge_lr: 0.5,
            judge_epochs: 30,
            discard_reward: DiscardReward::default(),
            seed: 0,
        }
    }
}

/// Per-round training metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean ρ over validated candidates in phase 1.
    pub mean_rho: f64,
    /// Fraction of sampled candidates discarded by the gate in phase 1.
    pub discard_rate: f64,
    /// Judge pair accuracy on the held-out pairs under the seed rubric (the
    /// fixed yardstick across rounds).
    pub judge_heldout_accuracy: f64,
    /// Queries skipped in phase 2 because their shared rubric was discarded.
    pub phase2_skipped: usize,
}

/// One query's training data: its pool and the preference pairs over it.
pub struct QueryPairs<'a> {
    pub pool: &'a TrajectoryPool,
    pub pairs: &'a [PreferencePair],
}

/// ρ = log σ(mean preference margin) of a rubric under a frozen judge.
pub fn rubric_reward(
    judge: &JudgeModel,
    rubric: &Rubric,
    pool: &TrajectoryPool,
    pairs: &[PreferencePair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("preference pairs"));
    }
    let mut sum = 0.0;
    for p in pairs {
        let winner = &pool.trajectories[p.winner_idx];
        let loser = &pool.trajectories[p.loser_idx];
        sum += judge.score(rubric, winner)? - judge.score(rubric, loser)?;
    }
    let mean_margin = sum / pairs.len() as f64;
    Ok(sigmoid(mean_margin).ln())
}

/// Alternating optimization over `cfg.rounds` rounds. Returns per-round
/// metrics; with zero rounds both models are untouched.
pub fn alternate(
    rubricor: &mut RubricorModel,
    judge: &mut JudgeModel,
    data: &[QueryPairs<'_>],
    heldout: &HeldoutSet,
    gate: &GateConfig,
    heldout_eval_pairs: &[FeaturePair],
    cfg: &AlternateConfig,
) -> Result<Vec<RoundMetrics>> {
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        // Phase 1: freeze judge, update rubricor.
        let mut sampled = 0usize;
        let mut discarded = 0usize;
        let mut rho_sum = 0.0;
        let mut rho_count = 0usize;
        for qp in data {
            if qp.pairs.is_empty() {
                continue;
            }
            let mut rng = derive_rng(
                cfg.seed,
                &["alternate", &round.to_string(), "phase1", &qp.pool.query_id],
            );
            let mut candidates: Vec<(Rubric, Option<f64>)> = Vec::new();
            for _ in 0..cfg.samples_per_query {
                let (rubric, _lp) = rubricor.sample(&mut rng)?;
                sampled += 1;
                let (validated, _report) = validate_rubric(&rubric, heldout, gate, None)?;
                match validated {
                    Some(v) => {
                        let rho = rubric_reward(judge, &v, qp.pool, qp.pairs)?;
                        rho_sum += rho;
                        rho_count += 1;
                        candidates.push((rubric, Some(rho)));
                    }
                    None => {
                        discarded += 1;
                        candidates.push((rubric, None));
                    }
                }
            }
            let valid_min = candidates
                .iter()
                .filter_map(|(_, r)| *r)
                .fold(f64::INFINITY, f64::min);
            if valid_min == f64::INFINITY {
                log::warn!(
                    "query {}: all {} rubric candidates discarded; skipping update",
                    qp.pool.query_id,
                    cfg.samples_per_query
                );
                continue;
            }
            let rho_discard = match cfg.discard_reward {
                DiscardReward::Zero => 0.0,
                DiscardReward::BatchMinMinus { margin } => valid_min - margin,
            };
            let samples: Vec<(Rubric, f64)> = candidates
                .into_iter()
                .map(|(rubric, rho)| (rubric, rho.unwrap_or(rho_discard)))
                .collect();
            rubricor.update(&samples, cfg.rubricor_lr)?;
        }

        // Phase 2: freeze rubricor, update judge on per-query shared rubrics.
        let mut feature_pairs = Vec::new();
        let mut phase2_skipped = 0usize;
        for qp in data {
            if qp.pairs.is_empty() {
                continue;
            }
            let mut rng = derive_rng(
                cfg.seed,
                &["alternate", &round.to_string(), "phase2", &qp.pool.query_id],
            );
            let (rubric, _) = rubricor.sample(&mut rng)?;
            let (validated, _) = validate_rubric(&rubric, heldout, gate, None)?;
            let Some(validated) = validated else {
                phase2_skipped += 1;
                continue;
            };
            for p in qp.pairs {
                feature_pairs.push(FeaturePair::build(
                    &validated,
                    &qp.pool.trajectories[p.winner_idx],
                    &qp.pool.trajectories[p.loser_idx],
                )?);
            }
        }
        if !feature_pairs.is_empty() {
            train_bt(judge, &feature_pairs, cfg.judge_epochs, cfg.judge_lr)?;
        }

        metrics.push(RoundMetrics {
            round,
            mean_rho: if rho_count > 0 { rho_sum / rho_count as f64 } else { f64::NAN },
            discard_rate: if sampled > 0 {
                discarded as f64 / sampled as f64
            } else {
                0.0
            },
            judge_heldout_accuracy: pair_accuracy(judge, heldout_eval_pairs),
            phase2_skipped,
        });
    }
    Ok(metrics)
}

/// Frozen-model process rewards for one GRPO rollout group.
#[derive(Debug, Clone)]
pub enum ProcessRewardOutcome {
    /// Per-trajectory rewards in [0, 1], plus the shared validated rubric.
    Scored { rewards: Vec<f64>, rubric: Rubric },
    /// The group's generated rubric failed the gate; the whole rollout
    /// group is excluded from the training step.
    GroupDiscarded,
}

/// Generate one rubric for a rollout group, gate it, and score every
/// trajectory under the shared validated rubric, squashed to [0, 1] with
/// the logistic function.
pub fn process_reward(
    rubricor: &RubricorModel,
    judge: &JudgeModel,
    heldout: &HeldoutSet,
    gate: &GateConfig,
    group: &[RoutingTrajectory],
    rng: &mut dyn RngCore,
) -> Result<ProcessRewardOutcome> {
    if group.is_empty() {
        return Err(Error::EmptyInput("rollout group"));
    }
    let Ok((rubric, _lp)) = rubricor.sample(rng) else {
        return Ok(ProcessRewardOutcome::GroupDiscarded);
    };
    let (validated, _report) = validate_rubric(&rubric, heldout, gate, None)?;
    let Some(validated) = validated else {
        return Ok(ProcessRewardOutcome::GroupDiscarded);
    };
    let mut rewards = Vec::with_capacity(group.len());
    for traj in group {
        let raw = judge.score(&validated, traj)?;
        rewards.push(sigmoid(raw));
    }
    Ok(ProcessRewardOutcome::Scored {
        rewards,
        rubric: validated,
    })
}

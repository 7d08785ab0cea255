//! Route preference data construction: per-query trajectory pools across the
//! collection policies and rule-based preference pairing.
//!
//! Pairing applies three rules in order. Outcome: exactly one trajectory
//! correct. Cost: both correct with clearly different LRM usage. Process:
//! same outcome and similar cost, broken by the seed-rubric score. "Similar"
//! cost means a relative LRM-token difference within `cost_sim_tol`;
//! both-wrong pairs are eligible for the process rule only.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::backends::Backend;
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::routing::{run_trajectory, EngineLimits, PolicyKind};
use crate::types::{QueryRecord, RoutingTrajectory, SignalKind};

/// All collected trajectories for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPool {
    pub query_id: String,
    pub trajectories: Vec<RoutingTrajectory>,
}

impl TrajectoryPool {
    /// Minimum size for pairing.
    pub const MIN_SIZE: usize = 2;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceRule {
    Outcome,
    Cost,
    Process,
}

/// A (preferred, dispreferred) pair, as indices into the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner_idx: usize,
    pub loser_idx: usize,
    pub rule: PreferenceRule,
}

/// JSONL row persisting a pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedPair {
    pub query_id: String,
    pub winner_idx: usize,
    pub loser_idx: usize,
    pub rule: PreferenceRule,
}

/// Collect `per_policy_count` rollouts per policy for one query.
///
/// Failed trajectories are dropped with a warning; duplicates by
/// (action sequence, producer sequence) are removed, keeping the first.
pub fn collect_pool(
    query: &QueryRecord,
    policies: &[PolicyKind],
    per_policy_count: usize,
    srm: &dyn Backend,
    lrm: &dyn Backend,
    limits: &EngineLimits,
    signal: SignalKind,
    seed: u64,
) -> TrajectoryPool {
    let mut trajectories = Vec::new();
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    for pk in policies {
        let tag = pk.tag();
        for rollout in 0..per_policy_count {
            let mut rng = derive_rng(seed, &["collect", &query.id, &tag, &rollout.to_string()]);
            match run_trajectory(query, srm, lrm, pk, limits, signal, &mut rng) {
                Ok(rollout) => {
                    let key = dedup_key(&rollout.trajectory);
                    if seen.insert(key) {
                        trajectories.push(rollout.trajectory);
                    }
                }
                Err(e) => {
                    log::warn!("dropping failed trajectory for {} ({tag}): {e}", query.id);
                }
            }
        }
    }
    TrajectoryPool {
        query_id: query.id.clone(),
        trajectories,
    }
}

fn dedup_key(traj: &RoutingTrajectory) -> Vec<u8> {
    traj.actions
        .iter()
        .zip(&traj.steps)
        .map(|(a, s)| {
            (match a {
                crate::types::RoutingAction::Continue => 0u8,
                crate::types::RoutingAction::Regenerate => 1u8,
            }) | (match s.producer {
                crate::types::Producer::SRM => 0u8,
                crate::types::Producer::LRM => 2u8,
            })
        })
        .collect()
}

/// Relative LRM-token difference of two trajectories.
fn relative_cost_diff(a: &RoutingTrajectory, b: &RoutingTrajectory) -> f64 {
    let (x, y) = (a.lrm_tokens as f64, b.lrm_tokens as f64);
    let denom = x.max(y);
    if denom == 0.0 {
        0.0
    } else {
        (x - y).abs() / denom
    }
}

/// Build preference pairs for every unordered pool pair.
///
/// `seed_scorer` maps a trajectory to its seed-rubric score, used by the
/// process rule; a pair is emitted only when the score gap reaches
/// `score_gap_min`.
pub fn build_pairs(
    pool: &TrajectoryPool,
    seed_scorer: &dyn Fn(&RoutingTrajectory) -> Result<f64>,
    cost_sim_tol: f64,
    score_gap_min: f64,
) -> Result<Vec<PreferencePair>> {
    for t in &pool.trajectories {
        if t.outcome_correct.is_none() {
            return Err(Error::InvalidArgument(format!(
                "pool {} has a trajectory without an outcome label",
                pool.query_id
            )));
        }
    }
    let mut pairs = Vec::new();
    let n = pool.trajectories.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = &pool.trajectories[i];
            let b = &pool.trajectories[j];
            let a_ok = a.outcome_correct.unwrap();
            let b_ok = b.outcome_correct.unwrap();
            if a_ok != b_ok {
                let (winner_idx, loser_idx) = if a_ok { (i, j) } else { (j, i) };
                pairs.push(PreferencePair {
                    winner_idx,
                    loser_idx,
                    rule: PreferenceRule::Outcome,
                });
                continue;
            }
            let rel = relative_cost_diff(a, b);
            if a_ok && b_ok && rel > cost_sim_tol {
                let (winner_idx, loser_idx) = if a.lrm_tokens < b.lrm_tokens {
                    (i, j)
                } else {
                    (j, i)
                };
                pairs.push(PreferencePair {
                    winner_idx,
                    loser_idx,
                    rule: PreferenceRule::Cost,
                });
                continue;
            }
            if rel <= cost_sim_tol {
                let score_a = seed_scorer(a)?;
                let score_b = seed_scorer(b)?;
                if (score_a - score_b).abs() >= score_gap_min {
                    let (winner_idx, loser_idx) = if score_a > score_b { (i, j) } else { (j, i) };
                    pairs.push(PreferencePair {
                        winner_idx,
                        loser_idx,
                        rule: PreferenceRule::Process,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::simulated::SimulatedBackend;
    use crate::backends::BackendSpec;
    use crate::synthworld::{generate_dataset, DifficultySpec, WorldConfig};
    use crate::types::{Producer, RoutingAction};

    fn traj(correct: bool, lrm_tokens: u64, actions: &[RoutingAction]) -> RoutingTrajectory {
        use crate::types::{ReasoningStep, SignalValues};
        let sig = SignalValues {
            avg_entropy: 0.5,
            avg_confidence: 0.6,
            avg_nll: 0.5,
            first3_entropy: 0.5,
        };
        let regen_count = actions
            .iter()
            .filter(|a| **a == RoutingAction::Regenerate)
            .count() as u64;
        let per_step = if regen_count > 0 { lrm_tokens / regen_count } else { 0 };
        let steps = actions
            .iter()
            .map(|a| ReasoningStep {
                text: "s".into(),
                producer: match a {
                    RoutingAction::Continue => Producer::SRM,
                    RoutingAction::Regenerate => Producer::LRM,
                },
                token_count: match a {
                    RoutingAction::Continue => 40,
                    RoutingAction::Regenerate => per_step,
                },
                uncertainty: sig,
                draft_uncertainty: sig,
            })
            .collect();
        RoutingTrajectory {
            query_id: "q".into(),
            steps,
            actions: actions.to_vec(),
            final_answer: Some(if correct { "a" } else { "b" }.into()),
            outcome_correct: Some(correct),
            srm_tokens: 40 * actions.len() as u64,
            lrm_tokens,
            source_policy: "fixture".into(),
        }
    }

    fn pool_of(trajs: Vec<RoutingTrajectory>) -> TrajectoryPool {
        TrajectoryPool {
            query_id: "q".into(),
            trajectories: trajs,
        }
    }

    use RoutingAction::{Continue as C, Regenerate as R};

    #[test]
    fn outcome_rule_wins_first() {
        let pool = pool_of(vec![traj(true, 80, &[R, C]), traj(false, 0, &[C, C])]);
        let pairs = build_pairs(&pool, &|_| Ok(0.5), 0.15, 0.1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].rule, PreferenceRule::Outcome);
        assert_eq!(pairs[0].winner_idx, 0);
    }

    #[test]
    fn cost_rule_on_both_correct() {
        let pool = pool_of(vec![traj(true, 100, &[R, C, C]), traj(true, 200, &[R, R, C])]);
        let pairs = build_pairs(&pool, &|_| Ok(0.5), 0.15, 0.1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].rule, PreferenceRule::Cost);
        assert_eq!(pairs[0].winner_idx, 0); // fewer LRM tokens
    }

    #[test]
    fn process_rule_on_similar_cost() {
        // Both wrong, equal cost: process rule with the scorer's gap.
        let a = traj(false, 80, &[R, C]);
        let b = traj(false, 80, &[C, R]);
        let pool = pool_of(vec![a, b]);
        let scorer = |t: &RoutingTrajectory| {
            Ok(if t.actions[0] == RoutingAction::Regenerate {
                0.8
            } else {
                0.4
            })
        };
        let pairs = build_pairs(&pool, &scorer, 0.15, 0.1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].rule, PreferenceRule::Process);
        assert_eq!(pairs[0].winner_idx, 0);
    }

    #[test]
    fn small_gap_emits_nothing() {
        let pool = pool_of(vec![traj(false, 80, &[R, C]), traj(false, 80, &[C, R])]);
        let pairs = build_pairs(&pool, &|_| Ok(0.5), 0.15, 0.1).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn both_wrong_different_cost_emits_nothing() {
        let pool = pool_of(vec![traj(false, 80, &[R, C]), traj(false, 400, &[R, R])]);
        let pairs = build_pairs(&pool, &|_| Ok(0.5), 0.15, 0.1).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn missing_outcome_errors() {
        let mut t = traj(true, 0, &[C]);
        t.outcome_correct = None;
        let pool = pool_of(vec![t, traj(true, 0, &[C])]);
        assert!(build_pairs(&pool, &|_| Ok(0.5), 0.15, 0.1).is_err());
    }

    #[test]
    fn order_swap_stable() {
        let a = traj(true, 100, &[R, C, C]);
        let b = traj(true, 200, &[R, R, C]);
        let fwd =
            build_pairs(&pool_of(vec![a.clone(), b.clone()]), &|_| Ok(0.5), 0.15, 0.1).unwrap();
        let rev = build_pairs(&pool_of(vec![b, a]), &|_| Ok(0.5), 0.15, 0.1).unwrap();
        assert_eq!(fwd.len(), 1);
        assert_eq!(rev.len(), 1);
        assert_eq!(fwd[0].rule, rev[0].rule);
        // Winner is the same trajectory under either ordering.
        assert_eq!(fwd[0].winner_idx, 0);
        assert_eq!(rev[0].winner_idx, 1);
    }

    #[test]
    fn rules_mutually_exclusive_and_counted() {
        let pool = pool_of(vec![
            traj(true, 100, &[R, C, C]),
            traj(true, 200, &[R, R, C]),
            traj(false, 0, &[C, C, C]),
        ]);
        let pairs = build_pairs(&pool, &|_| Ok(0.5), 0.15, 0.1).unwrap();
        // (0,1) cost; (0,2) and (1,2) outcome.
        assert_eq!(pairs.len(), 3);
        let outcome = pairs
            .iter()
            .filter(|p| p.rule == PreferenceRule::Outcome)
            .count();
        let cost = pairs.iter().filter(|p| p.rule == PreferenceRule::Cost).count();
        assert_eq!((outcome, cost), (2, 1));
        for p in &pairs {
            assert_ne!(p.winner_idx, p.loser_idx);
            if p.rule == PreferenceRule::Outcome {
                assert_eq!(pool.trajectories[p.winner_idx].outcome_correct, Some(true));
                assert_eq!(pool.trajectories[p.loser_idx].outcome_correct, Some(false));
            }
        }
    }

    #[test]
    fn collect_pool_counts_and_dedup() {
        let world = WorldConfig {
            difficulty: DifficultySpec::Uniform { lo: 0.0, hi: 1.0 },
            min_steps: 4,
            max_steps: 4,
            ..WorldConfig::default()
        };
        let ds = generate_dataset(&world, 2, 31).unwrap();
        let srm = SimulatedBackend::new(
            BackendSpec::simulated(Producer::SRM, 1.7e9),
            world.clone(),
            &ds,
        )
        .unwrap();
        let lrm = SimulatedBackend::new(
            BackendSpec::simulated(Producer::LRM, 14e9),
            world.clone(),
            &ds,
        )
        .unwrap();
        let policies = vec![
            PolicyKind::SrmOnly,
            PolicyKind::LrmOnly,
            PolicyKind::Random { p: 0.5 },
            PolicyKind::EntropyThreshold { threshold: 0.4 },
            PolicyKind::ConfidenceThreshold { threshold: 0.6 },
        ];
        let pool = collect_pool(
            &ds[0].record,
            &policies,
            1,
            &srm,
            &lrm,
            &EngineLimits::default(),
            SignalKind::AvgEntropy,
            77,
        );
        // Five policies × one rollout, minus any dedup collisions.
        assert!(pool.trajectories.len() >= 2 && pool.trajectories.len() <= 5);
        assert!(pool.trajectories.iter().all(|t| t.outcome_correct.is_some()));

        // srm_only twice dedups to one: the action/producer key ignores noise.
        let pool2 = collect_pool(
            &ds[0].record,
            &[PolicyKind::SrmOnly],
            2,
            &srm,
            &lrm,
            &EngineLimits::default(),
            SignalKind::AvgEntropy,
            77,
        );
        assert_eq!(pool2.trajectories.len(), 1);

        // random(0.5) with distinct rollout indices generally differs.
        let pool3 = collect_pool(
            &ds[0].record,
            &[PolicyKind::Random { p: 0.5 }],
            4,
            &srm,
            &lrm,
            &EngineLimits::default(),
            SignalKind::AvgEntropy,
            77,
        );
        assert!(pool3.trajectories.len() >= 2);
    }
}

//! Budgeted-accuracy evaluation: threshold sweeps, Pareto frontiers,
//! difficulty-bucketed LRM usage, uncertainty-signal comparison, and
//! latency/speedup reporting.
//!
//! A sweep evaluates a policy family at the 21 thresholds 0.00, 0.05, …,
//! 1.00. Budgeted accuracy at b% is the highest sweep accuracy whose total
//! FLOPs stay within b% of the LRM-only reference measured on the same
//! dataset and backends in the same run.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::Backend;
use crate::error::{Error, Result};
use crate::flops::FlopsModel;
use crate::parallel::parallel_map_indexed;
use crate::rng::derive_rng;
use crate::routing::{run_trajectory, EngineLimits, PolicyKind, Rollout, RouterPolicy};
use crate::synthworld::{expected_outcome, SyntheticQuery, WorldConfig};
use crate::types::{Producer, QueryRecord, RoutingTrajectory, SignalKind};

/// The sweep grid: exactly 21 thresholds with step 0.05.
pub fn threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// A policy family whose escalation behavior is driven by the swept
/// threshold.
#[derive(Clone)]
pub enum SweepPolicy {
    /// Learned router with the deterministic probability cutoff.
    Learned(Arc<RouterPolicy>),
    /// Entropy baseline; the unit threshold is scaled into entropy range.
    EntropyBaseline { scale: f64 },
    /// Confidence baseline (confidence is already in (0, 1]).
    ConfidenceBaseline,
    /// Random routing with escalation probability `1 − t`, so larger
    /// thresholds mean less LRM like the other families.
    RandomBaseline,
}

impl SweepPolicy {
    pub fn instantiate(&self, threshold: f64) -> PolicyKind {
        match self {
            SweepPolicy::Learned(policy) => PolicyKind::Learned {
                policy: Arc::clone(policy),
                decision_threshold: threshold,
                sample: false,
            },
            SweepPolicy::EntropyBaseline { scale } => PolicyKind::EntropyThreshold {
                threshold: threshold * scale,
            },
            SweepPolicy::ConfidenceBaseline => PolicyKind::ConfidenceThreshold {
                threshold: 1.0 - threshold,
            },
            SweepPolicy::RandomBaseline => PolicyKind::Random { p: 1.0 - threshold },
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SweepPolicy::Learned(_) => "learned",
            SweepPolicy::EntropyBaseline { .. } => "entropy",
            SweepPolicy::ConfidenceBaseline => "confidence",
            SweepPolicy::RandomBaseline => "random",
        }
    }
}

/// How per-trajectory accuracy is measured.
#[derive(Clone, Copy)]
pub enum OutcomeEstimator<'a> {
    /// The realized outcome label of each trajectory.
    Realized,
    /// Exact expected outcome of the induced action sequence under the
    /// synthetic world (noise-free; incomplete trajectories count 0).
    ExpectedSynthetic {
        world: &'a WorldConfig,
        queries: &'a [SyntheticQuery],
    },
}

/// One evaluated sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub accuracy: f64,
    pub total_flops: f64,
    pub lrm_usage: f64,
    pub wall_time_s: f64,
    pub valid: bool,
    pub n_failed: usize,
}

/// Roll the dataset out under one policy; failures surface as `None`.
pub fn rollout_dataset(
    pk: &PolicyKind,
    queries: &[QueryRecord],
    srm: &dyn Backend,
    lrm: &dyn Backend,
    limits: &EngineLimits,
    signal: SignalKind,
    seed: u64,
    workers: usize,
) -> Vec<Option<Rollout>> {
    parallel_map_indexed(queries.len(), workers, |i| {
        let query = &queries[i];
        let mut rng = derive_rng(seed, &["eval", &query.id]);
        match run_trajectory(query, srm, lrm, pk, limits, signal, &mut rng) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("evaluation rollout failed for {}: {e}", query.id);
                None
            }
        }
    })
}

/// Evaluate one concrete policy over the dataset.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    pk: &PolicyKind,
    queries: &[QueryRecord],
    srm: &dyn Backend,
    lrm: &dyn Backend,
    limits: &EngineLimits,
    signal: SignalKind,
    fm: &FlopsModel,
    estimator: OutcomeEstimator<'_>,
    seed: u64,
    workers: usize,
) -> SweepPoint {
    let start = Instant::now();
    let rollouts = rollout_dataset(pk, queries, srm, lrm, limits, signal, seed, workers);
    let wall_time_s = start.elapsed().as_secs_f64();
    let mut n_failed = 0usize;
    let mut acc_sum = 0.0;
    let mut acc_count = 0usize;
    let mut flops = 0.0;
    let mut usage_sum = 0.0;
    let mut usage_count = 0usize;
    for rollout in rollouts.iter() {
        let Some(rollout) = rollout else {
            n_failed += 1;
            continue;
        };
        let traj = &rollout.trajectory;
        flops += fm.flops_of_trajectory(traj);
        if let Ok(u) = traj.lrm_usage_rate() {
            usage_sum += u;
            usage_count += 1;
        }
        let acc = match estimator {
            OutcomeEstimator::Realized => match traj.outcome_correct {
                Some(true) => 1.0,
                Some(false) => 0.0,
                None => {
                    n_failed += 1;
                    continue;
                }
            },
            OutcomeEstimator::ExpectedSynthetic { world, queries } => {
                match queries.iter().find(|q| q.record.id == traj.query_id) {
                    Some(q) if q.n_steps() == traj.actions.len() => {
                        expected_outcome(&traj.actions, q, world).unwrap_or(0.0)
                    }
                    // Truncated or unknown: incomplete answers count wrong.
                    _ => 0.0,
                }
            }
        };
        acc_sum += acc;
        acc_count += 1;
    }
    SweepPoint {
        // Callers evaluating a swept family overwrite this; standalone
        // policy evaluations keep the neutral 0.0 (must stay finite for
        // JSON persistence).
        threshold: 0.0,
        accuracy: if acc_count > 0 { acc_sum / acc_count as f64 } else { 0.0 },
        total_flops: flops,
        lrm_usage: if usage_count > 0 { usage_sum / usage_count as f64 } else { 0.0 },
        wall_time_s,
        valid: n_failed == 0,
        n_failed,
    }
}

/// Full 21-point threshold sweep.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    policy: &SweepPolicy,
    queries: &[QueryRecord],
    srm: &dyn Backend,
    lrm: &dyn Backend,
    limits: &EngineLimits,
    signal: SignalKind,
    fm: &FlopsModel,
    estimator: OutcomeEstimator<'_>,
    seed: u64,
    workers: usize,
) -> Result<Vec<SweepPoint>> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("evaluation queries"));
    }
    let grid = threshold_grid();
    let mut points = Vec::with_capacity(grid.len());
    for t in grid {
        let pk = policy.instantiate(t);
        let mut point = evaluate_policy(
            &pk, queries, srm, lrm, limits, signal, fm, estimator, seed, workers,
        );
        point.threshold = t;
        points.push(point);
    }
    Ok(points)
}

/// Budgeted-accuracy report at one budget percentage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub budget_pct: f64,
    /// Highest accuracy within budget; `None` when no point qualifies.
    pub ba: Option<f64>,
    pub achieving_threshold: Option<f64>,
    pub lrm_only_flops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Highest accuracy over valid sweep points within the FLOPs budget.
///
/// With no qualifying point, the SRM-only point is used if it fits;
/// otherwise the report is undefined with a diagnostic note.
pub fn budgeted_accuracy(
    points: &[SweepPoint],
    lrm_only_flops: f64,
    budget_pct: f64,
    srm_only_fallback: Option<&SweepPoint>,
) -> Result<BudgetReport> {
    if points.is_empty() {
        return Err(Error::EmptyInput("sweep points"));
    }
    let budget = budget_pct / 100.0 * lrm_only_flops;
    let mut best: Option<&SweepPoint> = None;
    for p in points.iter().filter(|p| p.valid && p.total_flops <= budget) {
        if best.map(|b| p.accuracy > b.accuracy).unwrap_or(true) {
            best = Some(p);
        }
    }
    if let Some(p) = best {
        return Ok(BudgetReport {
            budget_pct,
            ba: Some(p.accuracy),
            achieving_threshold: Some(p.threshold),
            lrm_only_flops,
            note: None,
        });
    }
    if let Some(srm) = srm_only_fallback {
        if srm.valid && srm.total_flops <= budget {
            return Ok(BudgetReport {
                budget_pct,
                ba: Some(srm.accuracy),
                achieving_threshold: None,
                lrm_only_flops,
                note: Some("no sweep point within budget; SRM-only fallback".into()),
            });
        }
    }
    Ok(BudgetReport {
        budget_pct,
        ba: None,
        achieving_threshold: None,
        lrm_only_flops,
        note: Some(format!(
            "no point within {budget_pct}% of LRM-only FLOPs ({budget:.3e})"
        )),
    })
}

/// The (flops, accuracy) Pareto frontier: no returned point is dominated by
/// any input point, and every input point is dominated by or equal to some
/// frontier point.
pub fn pareto_frontier(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let mut sorted: Vec<&SweepPoint> = points.iter().filter(|p| p.valid).collect();
    sorted.sort_by(|a, b| {
        a.total_flops
            .partial_cmp(&b.total_flops)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                b.accuracy
                    .partial_cmp(&a.accuracy)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    let mut frontier: Vec<SweepPoint> = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    for p in sorted {
        if p.accuracy > best_acc {
            best_acc = p.accuracy;
            frontier.push(p.clone());
        }
    }
    frontier
}

/// Difficulty bucket boundaries: easy 1–3, medium 4–5, hard 6–7, extra
/// hard 8–10 (real-valued labels bucket by their ceiling band).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyBucket {
    Easy,
    Medium,
    Hard,
    ExtraHard,
}

pub fn bucket_of(difficulty: f64) -> DifficultyBucket {
    if difficulty <= 3.0 {
        DifficultyBucket::Easy
    } else if difficulty <= 5.0 {
        DifficultyBucket::Medium
    } else if difficulty <= 7.0 {
        DifficultyBucket::Hard
    } else {
        DifficultyBucket::ExtraHard
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BucketStat {
    pub count: usize,
    pub mean_usage: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DifficultyUsageReport {
    pub easy: BucketStat,
    pub medium: BucketStat,
    pub hard: BucketStat,
    pub extra_hard: BucketStat,
    /// Trajectories skipped for missing difficulty labels.
    pub skipped: usize,
}

/// Mean LRM usage rate per difficulty bucket.
pub fn difficulty_usage(items: &[(Option<f64>, &RoutingTrajectory)]) -> DifficultyUsageReport {
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    let mut skipped = 0usize;
    for (difficulty, traj) in items {
        let Some(d) = difficulty else {
            skipped += 1;
            continue;
        };
        let Ok(usage) = traj.lrm_usage_rate() else {
            skipped += 1;
            continue;
        };
        let idx = match bucket_of(*d) {
            DifficultyBucket::Easy => 0,
            DifficultyBucket::Medium => 1,
            DifficultyBucket::Hard => 2,
            DifficultyBucket::ExtraHard => 3,
        };
        sums[idx] += usage;
        counts[idx] += 1;
    }
    let stat = |i: usize| BucketStat {
        count: counts[i],
        mean_usage: if counts[i] > 0 {
            Some(sums[i] / counts[i] as f64)
        } else {
            None
        },
    };
    DifficultyUsageReport {
        easy: stat(0),
        medium: stat(1),
        hard: stat(2),
        extra_hard: stat(3),
        skipped,
    }
}

/// One row of the per-signal budgeted-accuracy grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalRow {
    pub signal: SignalKind,
    pub ba20: Option<f64>,
    pub ba40: Option<f64>,
    pub ba60: Option<f64>,
}

/// Budgeted accuracy per uncertainty signal, one trained router per signal.
pub fn signal_comparison(
    entries: &[(SignalKind, Vec<SweepPoint>, f64)],
) -> Result<Vec<SignalRow>> {
    let mut rows = Vec::with_capacity(entries.len());
    for (signal, points, lrm_only_flops) in entries {
        let ba = |pct: f64| -> Result<Option<f64>> {
            Ok(budgeted_accuracy(points, *lrm_only_flops, pct, None)?.ba)
        };
        rows.push(SignalRow {
            signal: *signal,
            ba20: ba(20.0)?,
            ba40: ba(40.0)?,
            ba60: ba(60.0)?,
        });
    }
    Ok(rows)
}

/// Latency accounting mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LatencyModel {
    /// Charge each accepted step to its producing model.
    Simulated { srm_ms_per_step: f64, lrm_ms_per_step: f64 },
    /// Wall-clock seconds measured by the caller.
    Measured,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mean_seconds_per_query: f64,
    pub lrm_only_seconds_per_query: f64,
    /// `lrm_only_latency / policy_latency`.
    pub speedup: f64,
}

/// Simulated latency of routed trajectories against an LRM-only reference
/// over the same step counts.
pub fn latency_report_simulated(
    trajectories: &[RoutingTrajectory],
    srm_ms_per_step: f64,
    lrm_ms_per_step: f64,
) -> Result<LatencyReport> {
    if trajectories.is_empty() {
        return Err(Error::EmptyInput("trajectories"));
    }
    let mut total_s = 0.0;
    let mut reference_s = 0.0;
    for t in trajectories {
        for step in &t.steps {
            total_s += match step.producer {
                Producer::SRM => srm_ms_per_step,
                Producer::LRM => lrm_ms_per_step,
            } / 1000.0;
        }
        reference_s += t.steps.len() as f64 * lrm_ms_per_step / 1000.0;
    }
    let n = trajectories.len() as f64;
    let mean = total_s / n;
    let reference = reference_s / n;
    Ok(LatencyReport {
        mean_seconds_per_query: mean,
        lrm_only_seconds_per_query: reference,
        speedup: reference / mean,
    })
}

/// Speedup from measured wall-clock latencies.
pub fn latency_report_measured(
    policy_seconds_per_query: f64,
    lrm_only_seconds_per_query: f64,
) -> LatencyReport {
    LatencyReport {
        mean_seconds_per_query: policy_seconds_per_query,
        lrm_only_seconds_per_query,
        speedup: lrm_only_seconds_per_query / policy_seconds_per_query,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ReasoningStep, RoutingAction, SignalValues};

    fn point(threshold: f64, accuracy: f64, flops: f64) -> SweepPoint {
        SweepPoint {
            threshold,
            accuracy,
            total_flops: flops,
            lrm_usage: 0.0,
            wall_time_s: 0.0,
            valid: true,
            n_failed: 0,
        }
    }

    #[test]
    fn grid_is_21_points() {
        let grid = threshold_grid();
        assert_eq!(grid.len(), 21);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[20], 1.0);
        assert!((grid[3] - 0.15).abs() < 1e-15);
        for w in grid.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn ba_hand_fixture() {
        let points = vec![
            point(0.9, 0.70, 200.0),
            point(0.5, 0.78, 380.0),
            point(0.1, 0.85, 450.0),
        ];
        let report = budgeted_accuracy(&points, 1000.0, 40.0, None).unwrap();
        assert_eq!(report.ba, Some(0.78));
        assert_eq!(report.achieving_threshold, Some(0.5));
        // Budget 100: unconstrained max.
        let report = budgeted_accuracy(&points, 1000.0, 100.0, None).unwrap();
        assert_eq!(report.ba, Some(0.85));
        // All points over budget: undefined with diagnostic.
        let report = budgeted_accuracy(&points, 1000.0, 10.0, None).unwrap();
        assert_eq!(report.ba, None);
        assert!(report.note.is_some());
        // SRM-only fallback qualifies.
        let srm = point(1.0, 0.55, 50.0);
        let report = budgeted_accuracy(&points, 1000.0, 10.0, Some(&srm)).unwrap();
        assert_eq!(report.ba, Some(0.55));
        assert!(budgeted_accuracy(&[], 1000.0, 40.0, None).is_err());
    }

    #[test]
    fn ba_monotone_in_budget() {
        let mut rng = crate::rng::derive_rng(2, &["ba-mono"]);
        use rand::Rng;
        for _ in 0..50 {
            let points: Vec<SweepPoint> = (0..21)
                .map(|i| point(i as f64 / 20.0, rng.random::<f64>(), rng.random::<f64>() * 1000.0))
                .collect();
            let mut last = -1.0;
            for pct in [10.0, 20.0, 40.0, 60.0, 80.0, 100.0] {
                let ba = budgeted_accuracy(&points, 1000.0, pct, None)
                    .unwrap()
                    .ba
                    .unwrap_or(-1.0);
                assert!(ba >= last - 1e-12, "BA must be non-decreasing in budget");
                last = ba;
            }
            // BA@100 equals the max accuracy.
            let max_acc = points.iter().map(|p| p.accuracy).fold(f64::MIN, f64::max);
            let ba100 = budgeted_accuracy(&points, 1000.0, 100.0, None).unwrap().ba.unwrap();
            assert!((ba100 - max_acc).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_points_excluded() {
        let mut bad = point(0.5, 0.99, 100.0);
        bad.valid = false;
        let points = vec![bad, point(0.6, 0.60, 150.0)];
        let report = budgeted_accuracy(&points, 1000.0, 40.0, None).unwrap();
        assert_eq!(report.ba, Some(0.60));
    }

    #[test]
    fn frontier_dominates_everything() {
        let points = vec![
            point(0.0, 0.85, 900.0),
            point(0.2, 0.80, 500.0),
            point(0.4, 0.82, 450.0), // dominates the 500-flops point
            point(0.6, 0.70, 300.0),
            point(0.8, 0.72, 320.0), // dominated by nothing cheaper
            point(1.0, 0.50, 100.0),
        ];
        let frontier = pareto_frontier(&points);
        for p in &points {
            assert!(
                frontier
                    .iter()
                    .any(|f| f.total_flops <= p.total_flops && f.accuracy >= p.accuracy),
                "point ({}, {}) not dominated",
                p.total_flops,
                p.accuracy
            );
        }
        // No frontier point dominated by another input point.
        for f in &frontier {
            assert!(!points
                .iter()
                .any(|p| p.total_flops < f.total_flops && p.accuracy > f.accuracy));
        }
    }

    fn traj_with_usage(n: usize, regen: usize) -> RoutingTrajectory {
        let sig = SignalValues {
            avg_entropy: 0.5,
            avg_confidence: 0.6,
            avg_nll: 0.5,
            first3_entropy: 0.5,
        };
        let actions: Vec<RoutingAction> = (0..n)
            .map(|i| {
                if i < regen {
                    RoutingAction::Regenerate
                } else {
                    RoutingAction::Continue
                }
            })
            .collect();
        let steps: Vec<ReasoningStep> = actions
            .iter()
            .map(|a| ReasoningStep {
                text: "s".into(),
                producer: match a {
                    RoutingAction::Continue => Producer::SRM,
                    RoutingAction::Regenerate => Producer::LRM,
                },
                token_count: 40,
                uncertainty: sig,
                draft_uncertainty: sig,
            })
            .collect();
        let lrm_tokens = steps
            .iter()
            .filter(|s| s.producer == Producer::LRM)
            .map(|s| s.token_count)
            .sum();
        RoutingTrajectory {
            query_id: "q".into(),
            steps,
            actions,
            final_answer: None,
            outcome_correct: Some(true),
            srm_tokens: 40 * n as u64,
            lrm_tokens,
            source_policy: "t".into(),
        }
    }

    #[test]
    fn difficulty_buckets() {
        assert_eq!(bucket_of(3.0), DifficultyBucket::Easy);
        assert_eq!(bucket_of(4.0), DifficultyBucket::Medium);
        assert_eq!(bucket_of(5.0), DifficultyBucket::Medium);
        assert_eq!(bucket_of(6.5), DifficultyBucket::Hard);
        assert_eq!(bucket_of(8.0), DifficultyBucket::ExtraHard);
        assert_eq!(bucket_of(10.0), DifficultyBucket::ExtraHard);

        let t1 = traj_with_usage(10, 2);
        let t2 = traj_with_usage(10, 4);
        let t3 = traj_with_usage(10, 6);
        let t4 = traj_with_usage(10, 8);
        let t5 = traj_with_usage(10, 0);
        let report = difficulty_usage(&[
            (Some(2.0), &t1),
            (Some(4.5), &t2),
            (Some(6.0), &t3),
            (Some(9.0), &t4),
            (None, &t5),
        ]);
        assert_eq!(report.easy.mean_usage, Some(0.2));
        assert_eq!(report.medium.mean_usage, Some(0.4));
        assert_eq!(report.hard.mean_usage, Some(0.6));
        assert_eq!(report.extra_hard.mean_usage, Some(0.8));
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn all_srm_buckets_zero() {
        let t = traj_with_usage(6, 0);
        let report = difficulty_usage(&[
            (Some(1.0), &t),
            (Some(4.0), &t),
            (Some(7.0), &t),
            (Some(9.0), &t),
        ]);
        for stat in [report.easy, report.medium, report.hard, report.extra_hard] {
            assert_eq!(stat.mean_usage, Some(0.0));
        }
    }

    #[test]
    fn latency_fixture() {
        // 10 steps, half escalated; SRM 1 ms/step, LRM 10 ms/step.
        let t = traj_with_usage(10, 5);
        let report = latency_report_simulated(&[t], 1.0, 10.0).unwrap();
        assert!((report.speedup - 100.0 / 55.0).abs() < 1e-12);
        // LRM-only is its own reference.
        let t = traj_with_usage(10, 10);
        let report = latency_report_simulated(&[t], 1.0, 10.0).unwrap();
        assert!((report.speedup - 1.0).abs() < 1e-12);
        // Measured-mode ratio on the 104.095 s vs 41.375 s reference pair.
        let m = latency_report_measured(41.375, 104.095);
        assert!((m.speedup - 104.095 / 41.375).abs() < 1e-12);
        assert!((m.speedup - 2.516).abs() < 5e-4);
    }

    #[test]
    fn signal_rows_shape() {
        let points = vec![point(0.5, 0.7, 300.0), point(0.0, 0.9, 950.0)];
        let rows = signal_comparison(&[
            (SignalKind::AvgEntropy, points.clone(), 1000.0),
            (SignalKind::AvgNll, points, 1000.0),
        ])
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].ba40, Some(0.7));
        assert_eq!(rows[0].ba60, Some(0.7));
        // Identical inputs give identical rows.
        assert_eq!(rows[0].ba20, rows[1].ba20);
        assert_eq!(rows[0].ba40, rows[1].ba40);
    }
}

//! The criterion validation gate: three statistical tests on a held-out
//! rollout set, with Holm–Bonferroni correction and a rubric-level discard
//! policy.
//!
//! A criterion is retained only if (1) its partial correlation with the
//! route-preference target — controlling for outcome and normalized cost —
//! is significant after Holm–Bonferroni at `alpha` across the rubric's
//! criteria, (2) its score standard deviation exceeds `sigma_min`, and
//! (3) its mutual information with the binary outcome label stays at or
//! below `mi_max_nats`. Rubrics keeping fewer than `min_retained` criteria
//! are discarded.
//!
//! Mutual information between a continuous score and the binary label uses
//! the discrete–continuous k-NN estimator (same digamma structure as the
//! continuous KSG estimator, which is provided for calibration). Scores are
//! rank-transformed with index-order tie-breaking, which makes the estimate
//! exactly invariant under strictly monotone transforms and makes tie
//! handling deterministic.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::prefdata::{PreferencePair, TrajectoryPool};
use crate::rubric::{score_criterion, Criterion, Rubric};
use crate::types::RoutingTrajectory;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateConfig {
    pub alpha: f64,
    pub sigma_min: f64,
    pub mi_max_nats: f64,
    pub knn_k: usize,
    pub min_retained: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            alpha: 0.05,
            sigma_min: 0.05,
            mi_max_nats: 0.1,
            knn_k: 5,
            min_retained: 2,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0,1)".into()));
        }
        if self.sigma_min <= 0.0 || self.mi_max_nats <= 0.0 || self.knn_k == 0 || self.min_retained == 0
        {
            return Err(Error::InvalidArgument("gate thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Scores a freeform criterion through an LLM judge; called twice per
/// rollout and averaged.
pub trait CriterionScorer: Send + Sync {
    fn score(&self, criterion_text: &str, traj: &RoutingTrajectory, call_index: usize)
        -> Result<f64>;
}

#[derive(Default)]
struct CriterionCache {
    stats: HashMap<String, CachedStats>,
}

#[derive(Clone)]
struct CachedStats {
    partial_r: Option<f64>,
    p_raw: Option<f64>,
    score_std: f64,
    mi_nats: f64,
    reason: Option<String>,
}

/// The fixed held-out rollout set with its gate labels.
///
/// The per-rollout preference target is the net win rate over the pairs the
/// rollout appears in; rollouts in no pair carry no preference information
/// and are excluded. Cost is LRM tokens normalized by the set maximum.
pub struct HeldoutSet {
    pub rollouts: Vec<RoutingTrajectory>,
    pub outcomes: Vec<f64>,
    pub norm_costs: Vec<f64>,
    pub pref_targets: Vec<f64>,
    cache: Mutex<CriterionCache>,
}

/// Sidecar label row persisted next to the heldout trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeldoutLabel {
    pub index: usize,
    pub outcome: f64,
    pub norm_cost: f64,
    pub pref_target: f64,
}

impl HeldoutSet {
    pub fn from_pools(pools: &[TrajectoryPool], pairs: &[Vec<PreferencePair>]) -> Result<Self> {
        if pools.len() != pairs.len() {
            return Err(Error::InvalidArgument("pools/pairs length mismatch".into()));
        }
        let mut rollouts = Vec::new();
        let mut outcomes = Vec::new();
        let mut targets = Vec::new();
        let mut lrm_tokens = Vec::new();
        for (pool, pool_pairs) in pools.iter().zip(pairs) {
            let n = pool.trajectories.len();
            let mut wins = vec![0u32; n];
            let mut losses = vec![0u32; n];
            for p in pool_pairs {
                wins[p.winner_idx] += 1;
                losses[p.loser_idx] += 1;
            }
            for (i, traj) in pool.trajectories.iter().enumerate() {
                let total = wins[i] + losses[i];
                if total == 0 {
                    continue;
                }
                let outcome = traj.outcome_correct.ok_or_else(|| {
                    Error::InvalidArgument(format!("heldout rollout in {} lacks outcome", pool.query_id))
                })?;
                rollouts.push(traj.clone());
                outcomes.push(if outcome { 1.0 } else { 0.0 });
                targets.push((wins[i] as f64 - losses[i] as f64) / total as f64);
                lrm_tokens.push(traj.lrm_tokens as f64);
            }
        }
        if rollouts.is_empty() {
            return Err(Error::EmptyInput("heldout set"));
        }
        let max_cost = lrm_tokens.iter().copied().fold(0.0f64, f64::max).max(1.0);
        let norm_costs = lrm_tokens.iter().map(|c| c / max_cost).collect();
        Ok(HeldoutSet {
            rollouts,
            outcomes,
            norm_costs,
            pref_targets: targets,
            cache: Mutex::new(CriterionCache::default()),
        })
    }

    /// Build directly from labeled vectors (fixtures, persisted sets).
    pub fn from_parts(
        rollouts: Vec<RoutingTrajectory>,
        outcomes: Vec<f64>,
        norm_costs: Vec<f64>,
        pref_targets: Vec<f64>,
    ) -> Result<Self> {
        let n = rollouts.len();
        if n == 0 {
            return Err(Error::EmptyInput("heldout set"));
        }
        if outcomes.len() != n || norm_costs.len() != n || pref_targets.len() != n {
            return Err(Error::InvalidArgument("label vectors must match rollouts".into()));
        }
        Ok(HeldoutSet {
            rollouts,
            outcomes,
            norm_costs,
            pref_targets,
            cache: Mutex::new(CriterionCache::default()),
        })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn labels(&self) -> Vec<HeldoutLabel> {
        (0..self.len())
            .map(|i| HeldoutLabel {
                index: i,
                outcome: self.outcomes[i],
                norm_cost: self.norm_costs[i],
                pref_target: self.pref_targets[i],
            })
            .collect()
    }

    /// Score a criterion over all rollouts; freeform criteria go through the
    /// adapter, averaged over two independent calls per rollout.
    fn criterion_scores(
        &self,
        criterion: &Criterion,
        adapter: Option<&dyn CriterionScorer>,
    ) -> Result<Vec<f64>> {
        if criterion.rule.kind().is_some() {
            self.rollouts.iter().map(|t| score_criterion(criterion, t)).collect()
        } else {
            let scorer = adapter.ok_or_else(|| {
                Error::Scoring("freeform criterion requires an adapter scorer".into())
            })?;
            self.rollouts
                .iter()
                .map(|t| {
                    let a = scorer.score(&criterion.text, t, 0)?;
                    let b = scorer.score(&criterion.text, t, 1)?;
                    Ok((a + b) / 2.0)
                })
                .collect()
        }
    }

    fn cached_stats(
        &self,
        criterion: &Criterion,
        cfg: &GateConfig,
        adapter: Option<&dyn CriterionScorer>,
    ) -> Result<CachedStats> {
        let key = serde_json::to_string(&criterion.rule)
            .unwrap_or_else(|_| criterion.text.clone());
        let cacheable = criterion.rule.kind().is_some();
        if cacheable {
            if let Some(hit) = self.cache.lock().expect("cache poisoned").stats.get(&key) {
                return Ok(hit.clone());
            }
        }
        let scores = self.criterion_scores(criterion, adapter)?;
        let stats = compute_stats(&scores, &self.pref_targets, &self.outcomes, &self.norm_costs, cfg);
        if cacheable {
            self.cache
                .lock()
                .expect("cache poisoned")
                .stats
                .insert(key, stats.clone());
        }
        Ok(stats)
    }
}

fn compute_stats(
    scores: &[f64],
    targets: &[f64],
    outcomes: &[f64],
    costs: &[f64],
    cfg: &GateConfig,
) -> CachedStats {
    let std = sample_std(scores).unwrap_or(0.0);
    let labels: Vec<bool> = outcomes.iter().map(|&o| o > 0.5).collect();
    let mi = mixed_ksg_mi(scores, &labels, cfg.knn_k).unwrap_or(f64::INFINITY);
    match partial_correlation(scores, targets, &[outcomes.to_vec(), costs.to_vec()]) {
        Ok((r, p)) => CachedStats {
            partial_r: Some(r),
            p_raw: Some(p),
            score_std: std,
            mi_nats: mi,
            reason: None,
        },
        Err(e) => CachedStats {
            partial_r: None,
            p_raw: None,
            score_std: std,
            mi_nats: mi,
            reason: Some(e.to_string()),
        },
    }
}

/// Per-criterion gate outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionReport {
    pub text: String,
    pub partial_r: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adjusted_reject: bool,
    pub score_std: f64,
    pub mi_nats: f64,
    pub retained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Gate outcome for a whole rubric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub criteria: Vec<CriterionReport>,
    pub rubric_retained: bool,
}

/// Run the three tests on raw per-criterion score vectors.
pub fn run_tests(
    score_rows: &[Vec<f64>],
    texts: &[String],
    targets: &[f64],
    outcomes: &[f64],
    costs: &[f64],
    cfg: &GateConfig,
) -> ValidationReport {
    let stats: Vec<CachedStats> = score_rows
        .iter()
        .map(|scores| compute_stats(scores, targets, outcomes, costs, cfg))
        .collect();
    assemble_report(&stats, texts, cfg)
}

fn assemble_report(stats: &[CachedStats], texts: &[String], cfg: &GateConfig) -> ValidationReport {
    let p_values: Vec<f64> = stats.iter().map(|s| s.p_raw.unwrap_or(1.0)).collect();
    let rejects = holm_bonferroni(&p_values, cfg.alpha);
    let criteria: Vec<CriterionReport> = stats
        .iter()
        .zip(texts)
        .zip(&rejects)
        .map(|((s, text), &reject)| {
            let variance_ok = s.score_std > cfg.sigma_min;
            let leakage_ok = s.mi_nats <= cfg.mi_max_nats;
            let retained = reject && variance_ok && leakage_ok && s.reason.is_none();
            let mut reason = s.reason.clone();
            if reason.is_none() && !retained {
                let mut why = Vec::new();
                if !reject {
                    why.push("partial correlation not significant");
                }
                if !variance_ok {
                    why.push("score variance below floor");
                }
                if !leakage_ok {
                    why.push("outcome leakage above cap");
                }
                reason = Some(why.join("; "));
            }
            CriterionReport {
                text: text.clone(),
                partial_r: s.partial_r,
                p_raw: s.p_raw,
                p_adjusted_reject: reject,
                score_std: s.score_std,
                mi_nats: s.mi_nats,
                retained,
                reason,
            }
        })
        .collect();
    let retained_count = criteria.iter().filter(|c| c.retained).count();
    ValidationReport {
        rubric_retained: retained_count >= cfg.min_retained,
        criteria,
    }
}

/// Validate a rubric against the held-out set.
///
/// Retained criteria keep their weights renormalized to the original total;
/// the returned rubric is `None` when fewer than `min_retained` survive.
pub fn validate_rubric(
    rubric: &Rubric,
    heldout: &HeldoutSet,
    cfg: &GateConfig,
    adapter: Option<&dyn CriterionScorer>,
) -> Result<(Option<Rubric>, ValidationReport)> {
    cfg.validate()?;
    if heldout.is_empty() {
        return Err(Error::EmptyInput("heldout set"));
    }
    let stats: Vec<CachedStats> = rubric
        .criteria
        .iter()
        .map(|c| heldout.cached_stats(c, cfg, adapter))
        .collect::<Result<_>>()?;
    let texts: Vec<String> = rubric.criteria.iter().map(|c| c.text.clone()).collect();
    let report = assemble_report(&stats, &texts, cfg);
    if !report.rubric_retained {
        return Ok((None, report));
    }
    let original_total = rubric.total_weight();
    let retained: Vec<Criterion> = rubric
        .criteria
        .iter()
        .zip(&report.criteria)
        .filter(|(_, r)| r.retained)
        .map(|(c, _)| c.clone())
        .collect();
    let retained_total: f64 = retained.iter().map(|c| c.weight).sum();
    let scale = original_total / retained_total;
    let criteria = retained
        .into_iter()
        .map(|mut c| {
            c.weight = (c.weight * scale).min(1.0);
            c
        })
        .collect();
    let validated = Rubric {
        criteria,
        validated: true,
    };
    Ok((Some(validated), report))
}

/// Sample standard deviation (n − 1 denominator).
pub fn score_std(v: &[f64]) -> Result<f64> {
    sample_std(v)
}

fn sample_std(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument("std requires n >= 2".into()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Holm–Bonferroni step-down rejection flags, in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        p_values[a]
            .partial_cmp(&p_values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut flags = vec![false; m];
    for (rank, &idx) in order.iter().enumerate() {
        let threshold = alpha / (m - rank) as f64;
        if p_values[idx] <= threshold {
            flags[idx] = true;
        } else {
            break; // first failure stops all remaining
        }
    }
    flags
}

/// Partial Pearson correlation of `v` and `target` given control columns,
/// with a two-sided t-test p-value.
///
/// Both variables are regressed on `[1, controls]` by least squares; `r` is
/// the Pearson correlation of the residuals and the t statistic uses
/// `n − 2 − g` degrees of freedom for `g` controls.
pub fn partial_correlation(
    v: &[f64],
    target: &[f64],
    controls: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let n = v.len();
    let g = controls.len();
    if target.len() != n || controls.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("column length mismatch".into()));
    }
    if n < g + 3 {
        return Err(Error::InvalidArgument(format!(
            "partial correlation needs n >= {} (got {n})",
            g + 3
        )));
    }
    if v.iter().any(|x| !x.is_finite())
        || target.iter().any(|x| !x.is_finite())
        || controls.iter().flatten().any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite("partial correlation input"));
    }
    let res_v = regression_residuals(v, controls)?;
    let res_t = regression_residuals(target, controls)?;
    let ss_v: f64 = res_v.iter().map(|x| x * x).sum();
    let ss_t: f64 = res_t.iter().map(|x| x * x).sum();
    let scale = {
        let var_v: f64 = v.iter().map(|x| x * x).sum::<f64>().max(1.0);
        let var_t: f64 = target.iter().map(|x| x * x).sum::<f64>().max(1.0);
        (var_v * var_t).sqrt()
    };
    if ss_v <= 1e-18 * scale || ss_t <= 1e-18 * scale {
        return Err(Error::Scoring("zero-variance residuals: r undefined".into()));
    }
    let dot: f64 = res_v.iter().zip(&res_t).map(|(a, b)| a * b).sum();
    let r = (dot / (ss_v * ss_t).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2 - g) as f64;
    let p = if (1.0 - r * r) <= f64::EPSILON {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p.clamp(0.0, 1.0)))
}

/// Least-squares residuals of `y` on `[1, controls]` via normal equations.
pub fn regression_residuals(y: &[f64], controls: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = y.len();
    let k = controls.len() + 1;
    // X'X and X'y with X = [1 | controls].
    let col = |j: usize, i: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            controls[j - 1][i]
        }
    };
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for i in 0..n {
        for a in 0..k {
            let xa = col(a, i);
            xty[a] += xa * y[i];
            for b in a..k {
                xtx[a][b] += xa * col(b, i);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[a][b] = xtx[b][a];
        }
    }
    let beta = solve_spd(xtx, xty)?;
    Ok((0..n)
        .map(|i| y[i] - (0..k).map(|a| beta[a] * col(a, i)).sum::<f64>())
        .collect())
}

/// Gaussian elimination with partial pivoting.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let k = b.len();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| {
                a[i][col]
                    .abs()
                    .partial_cmp(&a[j][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Scoring("singular design matrix (collinear controls)".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..k {
            let f = a[row][col] / a[col][col];
            for cc in col..k {
                a[row][cc] -= f * a[col][cc];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        let mut acc = b[col];
        for cc in (col + 1)..k {
            acc -= a[col][cc] * x[cc];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

/// Discrete–continuous k-NN mutual information between a continuous score
/// and a binary label, in nats (clamped at 0 for reporting).
///
/// Scores are replaced by their ranks (ties broken by sample index), so the
/// estimate is invariant under strictly monotone transforms and tie
/// handling is deterministic. For each sample, `d` is the distance to its
/// k-th nearest same-label neighbor in rank space and `m` counts all
/// samples within `d`; the estimate is
/// `ψ(n) − ⟨ψ(n_y)⟩ + ⟨ψ(k)⟩ − ⟨ψ(m)⟩`.
pub fn mixed_ksg_mi(v: &[f64], y: &[bool], k: usize) -> Result<f64> {
    let n = v.len();
    if y.len() != n {
        return Err(Error::InvalidArgument("score/label length mismatch".into()));
    }
    if k == 0 || n < 2 * k + 2 {
        return Err(Error::InvalidArgument(format!(
            "mixed KSG needs n >= {} (got {n})",
            2 * k + 2
        )));
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == n {
        return Ok(0.0); // single-class label: MI defined 0
    }

    // Rank transform with (value, index) tie-breaking, then an
    // infinitesimal index-derived jitter so the integer rank lattice has no
    // exactly tied distances. The jitter is far below one rank unit, so
    // the estimate stays exactly invariant under strictly monotone
    // transforms of v.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        v[a].partial_cmp(&v[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    const JITTER: f64 = 1e-9;
    let mut coord = vec![0.0f64; n]; // per original index
    let mut sorted_coords = Vec::with_capacity(n); // ascending
    for (r, &i) in order.iter().enumerate() {
        let x = r as f64 + (i + 1) as f64 * JITTER / n as f64;
        coord[i] = x;
        sorted_coords.push(x);
    }

    // Per-class sorted coordinate lists and each sample's position in its
    // class list.
    let mut class_coords: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut pos_in_class = vec![0usize; n];
    for &i in &order {
        let c = y[i] as usize;
        pos_in_class[i] = class_coords[c].len();
        class_coords[c].push(coord[i]);
    }

    let mut sum_psi_ny = 0.0;
    let mut sum_psi_k = 0.0;
    let mut sum_psi_m = 0.0;
    for i in 0..n {
        let c = y[i] as usize;
        let same = &class_coords[c];
        let n_same = same.len();
        let k_eff = k.min(n_same - 1);
        let x = coord[i];
        let pos = pos_in_class[i];
        // k_eff-th nearest same-label neighbor: two-pointer expansion.
        let mut lo = pos;
        let mut hi = pos;
        let mut d = 0.0f64;
        for _ in 0..k_eff {
            let left = if lo > 0 { Some(x - same[lo - 1]) } else { None };
            let right = if hi + 1 < n_same { Some(same[hi + 1] - x) } else { None };
            d = match (left, right) {
                (Some(l), Some(r)) => {
                    if l <= r {
                        lo -= 1;
                        l
                    } else {
                        hi += 1;
                        r
                    }
                }
                (Some(l), None) => {
                    lo -= 1;
                    l
                }
                (None, Some(r)) => {
                    hi += 1;
                    r
                }
                (None, None) => unreachable!("k_eff < n_same"),
            };
        }
        // All samples (any label) within the closed ball of radius d,
        // excluding self; includes the k-th neighbor itself.
        let lo_idx = sorted_coords.partition_point(|&c2| c2 < x - d);
        let hi_idx = sorted_coords.partition_point(|&c2| c2 <= x + d);
        let m = hi_idx - lo_idx - 1;
        sum_psi_ny += digamma(n_same as f64);
        sum_psi_k += digamma(k_eff as f64);
        sum_psi_m += digamma(m.max(1) as f64);
    }
    let nf = n as f64;
    let mi = digamma(nf) - sum_psi_ny / nf + sum_psi_k / nf - sum_psi_m / nf;
    Ok(mi.max(0.0))
}

/// Continuous–continuous KSG estimator (variant 1) on raw values; shares
/// the digamma structure with [`mixed_ksg_mi`] and exists to calibrate the
/// k-NN machinery against the analytic Gaussian case.
pub fn ksg_mi_continuous(x: &[f64], y: &[f64], k: usize) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    if k == 0 || n < k + 2 {
        return Err(Error::InvalidArgument("too few samples for KSG".into()));
    }
    let mut sorted_x: Vec<f64> = x.to_vec();
    let mut sorted_y: Vec<f64> = y.to_vec();
    sorted_x.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted_y.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    let mut sum = 0.0;
    let mut dists = vec![0.0f64; n];
    for i in 0..n {
        for (j, d) in dists.iter_mut().enumerate() {
            *d = if j == i {
                f64::INFINITY
            } else {
                (x[j] - x[i]).abs().max((y[j] - y[i]).abs())
            };
        }
        let mut work = dists.clone();
        let (_, kth, _) = work.select_nth_unstable_by(k - 1, |a, b| {
            a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
        });
        let eps = *kth;
        // Strictly-within counts per marginal.
        let nx = count_strictly_within(&sorted_x, x[i], eps) - 1; // minus self
        let ny = count_strictly_within(&sorted_y, y[i], eps) - 1;
        sum += digamma((nx + 1) as f64) + digamma((ny + 1) as f64);
    }
    Ok(digamma(k as f64) + digamma(n as f64) - sum / n as f64)
}

fn count_strictly_within(sorted: &[f64], center: f64, eps: f64) -> usize {
    // #{v : |v - center| < eps}
    let lo = sorted.partition_point(|&v| v <= center - eps);
    let hi = sorted.partition_point(|&v| v < center + eps);
    hi - lo
}

//! Synthetic reasoning world with analytically known step-correctness
//! probabilities.
//!
//! Each synthetic query is a sequence of per-step difficulties `d ∈ [0, 1]`.
//! A step produced by the SRM is correct with probability
//! `p_srm(d) = clamp(1 − a_s·d, 0, 1)` and by the LRM with
//! `p_lrm(d) = clamp(1 − a_l·d, 0, 1)`, with `a_l < a_s` so the LRM is
//! strictly more reliable on hard steps. The final answer is correct iff
//! every accepted step is correct, which keeps the outcome expectation a
//! closed-form product and admits a brute-force optimal-routing oracle.
//!
//! An optional error-propagation variant (a wrong step raises the next
//! step's difficulty by `delta`, and a later correct step repairs the
//! state) is available behind [`WorldConfig::error_propagation`]; its
//! outcome expectation is computed by a forward recursion over the
//! (step, prefix-in-error) state.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::types::{Origin, Producer, QueryRecord, RoutingAction, SignalValues};

/// Distribution of per-step difficulties.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DifficultySpec {
    PointMass { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Bimodal: an easy band with probability `easy_weight`, else a hard band.
    Mixture {
        easy_weight: f64,
        easy_lo: f64,
        easy_hi: f64,
        hard_lo: f64,
        hard_hi: f64,
    },
    /// Query-level mixture: with probability `deep_weight` every step of the
    /// query draws from the deep band (uniformly hard queries where early
    /// policies fail whole rollout groups); otherwise steps draw from the
    /// base spec independently.
    QueryMixture {
        deep_weight: f64,
        deep_lo: f64,
        deep_hi: f64,
        base: Box<DifficultySpec>,
    },
}

impl DifficultySpec {
    pub fn sample(&self, rng: &mut (impl Rng + ?Sized)) -> f64 {
        let d = match self {
            DifficultySpec::PointMass { value } => *value,
            DifficultySpec::Uniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(*lo..*hi)
                } else {
                    *lo
                }
            }
            DifficultySpec::Mixture {
                easy_weight,
                easy_lo,
                easy_hi,
                hard_lo,
                hard_hi,
            } => {
                let easy = rng.random::<f64>() < *easy_weight;
                let (lo, hi) = if easy { (*easy_lo, *easy_hi) } else { (*hard_lo, *hard_hi) };
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
            // Per-step sampling of a query mixture falls back to its base.
            DifficultySpec::QueryMixture { base, .. } => base.sample(rng),
        };
        d.clamp(0.0, 1.0)
    }

    /// Sample a whole query's difficulties; query-level mixtures first draw
    /// the query's segment.
    pub fn sample_query(&self, n: usize, rng: &mut (impl Rng + ?Sized)) -> Vec<f64> {
        match self {
            DifficultySpec::QueryMixture {
                deep_weight,
                deep_lo,
                deep_hi,
                base,
            } => {
                if rng.random::<f64>() < *deep_weight {
                    let band = DifficultySpec::Uniform {
                        lo: *deep_lo,
                        hi: *deep_hi,
                    };
                    (0..n).map(|_| band.sample(rng)).collect()
                } else {
                    (0..n).map(|_| base.sample(rng)).collect()
                }
            }
            _ => (0..n).map(|_| self.sample(rng)).collect(),
        }
    }
}

impl Default for DifficultySpec {
    /// Mostly easy steps with a hard minority, mirroring reasoning traces
    /// where only a few critical steps need the stronger model.
    fn default() -> Self {
        DifficultySpec::Mixture {
            easy_weight: 0.7,
            easy_lo: 0.0,
            easy_hi: 0.05,
            hard_lo: 0.5,
            hard_hi: 0.9,
        }
    }
}

/// Parameters of the synthetic world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    /// SRM error slope: `p_srm(d) = clamp(1 − a_s·d, 0, 1)`.
    pub a_srm: f64,
    /// LRM error slope; must be below `a_srm`.
    pub a_lrm: f64,
    pub srm_tokens_per_step: u64,
    pub lrm_tokens_per_step: u64,
    /// Std of the Gaussian noise added to difficulty when emitting signals.
    pub noise_sd: f64,
    pub difficulty: DifficultySpec,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Optional difficulty bump applied to the step after an error
    /// (error-propagation variant; off by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_propagation: Option<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            a_srm: 0.9,
            a_lrm: 0.15,
            srm_tokens_per_step: 40,
            lrm_tokens_per_step: 80,
            noise_sd: 0.05,
            difficulty: DifficultySpec::default(),
            min_steps: 4,
            max_steps: 10,
            error_propagation: None,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_lrm < self.a_srm) {
            return Err(Error::InvalidArgument(
                "a_lrm must be below a_srm (LRM strictly more reliable)".into(),
            ));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::InvalidArgument("noise_sd must be >= 0".into()));
        }
        if self.min_steps == 0 || self.max_steps < self.min_steps {
            return Err(Error::InvalidArgument("bad step range".into()));
        }
        if self.srm_tokens_per_step == 0 || self.lrm_tokens_per_step == 0 {
            return Err(Error::InvalidArgument("token counts must be positive".into()));
        }
        Ok(())
    }

    /// Probability that a step of difficulty `d` comes out correct.
    pub fn step_success(&self, d: f64, producer: Producer) -> f64 {
        let slope = match producer {
            Producer::SRM => self.a_srm,
            Producer::LRM => self.a_lrm,
        };
        (1.0 - slope * d).clamp(0.0, 1.0)
    }

    /// Difficulty as perceived by the producing model; the LRM sees hard
    /// steps as proportionally easier, so its uncertainty signals are lower.
    fn perceived_difficulty(&self, d: f64, producer: Producer) -> f64 {
        match producer {
            Producer::SRM => d,
            Producer::LRM => d * (self.a_lrm / self.a_srm),
        }
    }

    /// Emit the four uncertainty signals for a step of difficulty `d`.
    ///
    /// Draw order is fixed (entropy, first-3 entropy, NLL, confidence) so
    /// streams replay identically.
    pub fn signals_for(
        &self,
        d: f64,
        producer: Producer,
        rng: &mut (impl Rng + ?Sized),
    ) -> SignalValues {
        let seen = self.perceived_difficulty(d, producer);
        let noise = Normal::new(0.0, self.noise_sd.max(1e-12)).expect("valid normal");
        let mut noisy = |lo: f64, hi: f64| (seen + noise.sample(rng)).clamp(lo, hi);
        let avg_entropy = noisy(0.0, 2.0);
        let first3_entropy = noisy(0.0, 2.0);
        let avg_nll = noisy(0.0, 4.0);
        let avg_confidence = (-noisy(0.0, 2.0)).exp().clamp(1e-9, 1.0);
        SignalValues {
            avg_entropy,
            avg_confidence,
            avg_nll,
            first3_entropy,
        }
    }

    pub fn tokens_per_step(&self, producer: Producer) -> u64 {
        match producer {
            Producer::SRM => self.srm_tokens_per_step,
            Producer::LRM => self.lrm_tokens_per_step,
        }
    }
}

/// A synthetic query: the public record plus its hidden per-step difficulties.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticQuery {
    #[serde(flatten)]
    pub record: QueryRecord,
    pub step_difficulties: Vec<f64>,
}

impl SyntheticQuery {
    pub fn n_steps(&self) -> usize {
        self.step_difficulties.len()
    }
}

/// Map a mean step difficulty in [0,1] to the [1,10] label scale.
pub fn difficulty_label(step_difficulties: &[f64]) -> f64 {
    if step_difficulties.is_empty() {
        return 1.0;
    }
    let mean = step_difficulties.iter().sum::<f64>() / step_difficulties.len() as f64;
    mean * 9.0 + 1.0
}

/// Generate a dataset of synthetic queries, deterministic in `seed`.
pub fn generate_dataset(cfg: &WorldConfig, size: usize, seed: u64) -> Result<Vec<SyntheticQuery>> {
    cfg.validate()?;
    if size == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let id = format!("syn-{i:05}");
        let mut rng = derive_rng(seed, &["world", &id]);
        let n = if cfg.max_steps > cfg.min_steps {
            rng.random_range(cfg.min_steps..=cfg.max_steps)
        } else {
            cfg.min_steps
        };
        let difficulties = cfg.difficulty.sample_query(n, &mut rng);
        let record = QueryRecord {
            id: id.clone(),
            text: format!("synthetic reasoning task {id} with {n} steps"),
            gold_answer: Some(format!("answer-{id}")),
            difficulty: Some(difficulty_label(&difficulties)),
            origin: Origin::Synthetic,
        };
        out.push(SyntheticQuery {
            record,
            step_difficulties: difficulties,
        });
    }
    Ok(out)
}

fn producer_of(action: RoutingAction) -> Producer {
    match action {
        RoutingAction::Continue => Producer::SRM,
        RoutingAction::Regenerate => Producer::LRM,
    }
}

/// Exact probability that the final answer is correct under an action
/// sequence.
///
/// Without error propagation this is the product of per-step success
/// probabilities (all accepted steps must be correct). With propagation it
/// is a forward recursion over P(prefix still correct).
pub fn expected_outcome(
    action_seq: &[RoutingAction],
    query: &SyntheticQuery,
    cfg: &WorldConfig,
) -> Result<f64> {
    if action_seq.len() != query.n_steps() {
        return Err(Error::InvalidArgument(format!(
            "action sequence length {} != query steps {}",
            action_seq.len(),
            query.n_steps()
        )));
    }
    match cfg.error_propagation {
        None => {
            let mut p = 1.0;
            for (action, &d) in action_seq.iter().zip(&query.step_difficulties) {
                p *= cfg.step_success(d, producer_of(*action));
            }
            Ok(p)
        }
        Some(delta) => {
            // p_ok = P(state correct after the step); a wrong prefix can be
            // repaired by succeeding at difficulty d + delta.
            let mut p_ok = 1.0;
            for (action, &d) in action_seq.iter().zip(&query.step_difficulties) {
                let producer = producer_of(*action);
                let stay = cfg.step_success(d, producer);
                let repair = cfg.step_success((d + delta).min(1.0), producer);
                p_ok = p_ok * stay + (1.0 - p_ok) * repair;
            }
            Ok(p_ok)
        }
    }
}

/// Expected LRM generation tokens of an action sequence (deterministic:
/// token counts are fixed per producer).
pub fn lrm_tokens_of(action_seq: &[RoutingAction], cfg: &WorldConfig) -> u64 {
    let regen = action_seq
        .iter()
        .filter(|a| **a == RoutingAction::Regenerate)
        .count() as u64;
    regen * cfg.lrm_tokens_per_step
}

/// Largest step count accepted by the enumerating oracle.
pub const ORACLE_MAX_STEPS: usize = 12;

/// Brute-force optimal routing for one query: argmax over all `2^n` action
/// sequences of `expected_outcome − lambda · expected LRM tokens`.
///
/// Ties break toward fewer `Regenerate` actions, then lexicographically
/// (`Continue` before `Regenerate`).
pub fn oracle_optimal(
    query: &SyntheticQuery,
    cfg: &WorldConfig,
    lambda: f64,
) -> Result<(Vec<RoutingAction>, f64)> {
    let n = query.n_steps();
    if n == 0 {
        return Err(Error::EmptyInput("query has no steps"));
    }
    if n > ORACLE_MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "oracle enumeration supports n <= {ORACLE_MAX_STEPS} (got {n}); \
             use oracle_optimal_ranked for larger queries"
        )));
    }
    let mut best: Option<(Vec<RoutingAction>, f64, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        let actions: Vec<RoutingAction> = (0..n)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    RoutingAction::Regenerate
                } else {
                    RoutingAction::Continue
                }
            })
            .collect();
        let value = expected_outcome(&actions, query, cfg)?
            - lambda * lrm_tokens_of(&actions, cfg) as f64;
        let regen_count = mask.count_ones();
        let better = match &best {
            None => true,
            Some((best_actions, best_value, best_regens)) => {
                value > *best_value + 1e-15
                    || ((value - *best_value).abs() <= 1e-15
                        && (regen_count < *best_regens
                            || (regen_count == *best_regens
                                && actions.as_slice() < best_actions.as_slice())))
            }
        };
        if better {
            best = Some((actions, value, regen_count));
        }
    }
    let (actions, value, _) = best.expect("non-empty enumeration");
    Ok((actions, value))
}

/// Optimal routing for larger queries without error propagation.
///
/// For a fixed number of regenerations the outcome product is maximized by
/// escalating the steps with the largest success ratio
/// `p_lrm(d)/p_srm(d)`; scanning all regeneration counts is exact when
/// every `p_srm(d) > 0`.
pub fn oracle_optimal_ranked(
    query: &SyntheticQuery,
    cfg: &WorldConfig,
    lambda: f64,
) -> Result<(Vec<RoutingAction>, f64)> {
    if cfg.error_propagation.is_some() {
        return Err(Error::InvalidArgument(
            "ranked oracle requires the factorizing world rule".into(),
        ));
    }
    let n = query.n_steps();
    if n == 0 {
        return Err(Error::EmptyInput("query has no steps"));
    }
    if query
        .step_difficulties
        .iter()
        .any(|&d| cfg.step_success(d, Producer::SRM) <= 0.0)
    {
        return Err(Error::InvalidArgument(
            "ranked oracle requires p_srm(d) > 0 for all steps".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ratio = |i: usize| {
            let d = query.step_difficulties[i];
            cfg.step_success(d, Producer::LRM) / cfg.step_success(d, Producer::SRM)
        };
        ratio(b)
            .partial_cmp(&ratio(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut best: Option<(Vec<RoutingAction>, f64, usize)> = None;
    for r in 0..=n {
        let mut actions = vec![RoutingAction::Continue; n];
        for &idx in order.iter().take(r) {
            actions[idx] = RoutingAction::Regenerate;
        }
        let value = expected_outcome(&actions, query, cfg)?
            - lambda * lrm_tokens_of(&actions, cfg) as f64;
        let better = match &best {
            None => true,
            Some((_, best_value, _)) => value > *best_value + 1e-15,
        };
        if better {
            best = Some((actions, value, r));
        }
    }
    let (actions, value, _) = best.expect("non-empty scan");
    Ok((actions, value))
}

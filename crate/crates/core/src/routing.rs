//! The stepwise routing engine: state featurization, the trainable router
//! policy, the training-free collection policies, and the draft/decide/
//! regenerate loop.
//!
//! Per step the SRM drafts a candidate, the router maps a 5-dimensional
//! state to an action, and `Regenerate` replaces the step via the LRM. The
//! SRM draft is always generated, so its tokens count toward SRM cost even
//! when discarded (configurable via [`EngineLimits::count_discarded_drafts`]).

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, GenerationContext, StepDraft};
use crate::checkpoint::{Checkpoint, Section};
use crate::error::{Error, Result};
use crate::types::{
    Producer, QueryRecord, ReasoningStep, RoutingAction, RoutingTrajectory, SignalKind,
};

pub const STATE_DIM: usize = 5;
const N_ACTIONS: usize = 2;

/// The 5-dimensional routing state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterState {
    pub current_uncertainty: f64,
    pub min_prefix_uncertainty: f64,
    pub avg_prefix_uncertainty: f64,
    pub norm_token_count: f64,
    pub norm_step_index: f64,
}

impl RouterState {
    pub fn as_array(&self) -> [f64; STATE_DIM] {
        [
            self.current_uncertainty,
            self.min_prefix_uncertainty,
            self.avg_prefix_uncertainty,
            self.norm_token_count,
            self.norm_step_index,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Engine limits and normalization constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineLimits {
    pub max_steps: usize,
    pub max_total_tokens: u64,
    pub token_norm_constant: f64,
    /// Whether discarded SRM drafts count toward SRM cost (default true).
    #[serde(default = "default_true")]
    pub count_discarded_drafts: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EngineLimits {
    fn default() -> Self {
        EngineLimits {
            max_steps: 50,
            max_total_tokens: 1_000_000,
            token_norm_constant: 200.0,
            count_discarded_drafts: true,
        }
    }
}

impl EngineLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.max_total_tokens == 0 || self.token_norm_constant <= 0.0 {
            return Err(Error::InvalidArgument("engine limits must be positive".into()));
        }
        Ok(())
    }
}

/// Build the router state for the draft being decided.
///
/// Prefix statistics are taken over the accepted steps' uncertainties of the
/// same signal; an empty prefix sets min = avg = current.
pub fn featurize(
    ctx: &GenerationContext<'_>,
    draft: &StepDraft,
    signal: SignalKind,
    limits: &EngineLimits,
) -> RouterState {
    let current = draft.uncertainty.get(signal);
    let (min_prefix, avg_prefix) = if ctx.accepted_steps.is_empty() {
        (current, current)
    } else {
        let values: Vec<f64> = ctx
            .accepted_steps
            .iter()
            .map(|s| s.uncertainty.get(signal))
            .collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        (min, avg)
    };
    RouterState {
        current_uncertainty: current,
        min_prefix_uncertainty: min_prefix,
        avg_prefix_uncertainty: avg_prefix,
        norm_token_count: draft.token_count as f64 / limits.token_norm_constant,
        norm_step_index: ctx.step_index as f64 / limits.max_steps as f64,
    }
}

/// Two-layer ReLU MLP over the routing state with analytic gradients.
///
/// `w1` is hidden×5 row-major (by hidden unit), `w2` is 2×hidden row-major
/// (by action); action index 0 is `Continue`, 1 is `Regenerate`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterPolicy {
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub const DEFAULT_HIDDEN: usize = 128;

impl RouterPolicy {
    pub fn zeros(hidden: usize) -> Self {
        RouterPolicy {
            hidden,
            w1: vec![0.0; hidden * STATE_DIM],
            b1: vec![0.0; hidden],
            w2: vec![0.0; N_ACTIONS * hidden],
            b2: vec![0.0; N_ACTIONS],
        }
    }

    /// Gaussian init scaled by 1/sqrt(fan_in).
    pub fn random_init(hidden: usize, rng: &mut impl Rng) -> Self {
        use rand_distr::{Distribution, Normal};
        let n1 = Normal::new(0.0, 1.0 / (STATE_DIM as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).unwrap();
        RouterPolicy {
            hidden,
            w1: (0..hidden * STATE_DIM).map(|_| n1.sample(rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..N_ACTIONS * hidden).map(|_| n2.sample(rng)).collect(),
            b2: vec![0.0; N_ACTIONS],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn param_slot(&mut self, i: usize) -> &mut f64 {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < n1 {
            &mut self.w1[i]
        } else if i < n1 + n2 {
            &mut self.b1[i - n1]
        } else if i < n1 + n2 + n3 {
            &mut self.w2[i - n1 - n2]
        } else {
            &mut self.b2[i - n1 - n2 - n3]
        }
    }

    pub fn get_param(&self, i: usize) -> f64 {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < n1 {
            self.w1[i]
        } else if i < n1 + n2 {
            self.b1[i - n1]
        } else if i < n1 + n2 + n3 {
            self.w2[i - n1 - n2]
        } else {
            self.b2[i - n1 - n2 - n3]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        *self.param_slot(i) = v;
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    fn forward_internal(&self, s: &[f64; STATE_DIM]) -> ForwardPass {
        let mut pre1 = vec![0.0; self.hidden];
        let mut h = vec![0.0; self.hidden];
        for j in 0..self.hidden {
            let mut acc = self.b1[j];
            for (k, sv) in s.iter().enumerate() {
                acc += self.w1[j * STATE_DIM + k] * sv;
            }
            pre1[j] = acc;
            h[j] = acc.max(0.0);
        }
        let mut logits = [0.0; N_ACTIONS];
        for (a, logit) in logits.iter_mut().enumerate() {
            let mut acc = self.b2[a];
            for j in 0..self.hidden {
                acc += self.w2[a * self.hidden + j] * h[j];
            }
            *logit = acc;
        }
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let z = e0 + e1;
        ForwardPass {
            pre1,
            h,
            probs: [e0 / z, e1 / z],
        }
    }

    /// Probability of `Regenerate`; always in (0, 1).
    pub fn forward(&self, state: &RouterState) -> Result<f64> {
        if !self.is_finite() {
            return Err(Error::NonFinite("router parameters"));
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("router state"));
        }
        Ok(self.forward_internal(&state.as_array()).probs[1])
    }

    /// Log-probability of an action under the policy.
    pub fn log_prob(&self, state: &RouterState, action: RoutingAction) -> Result<f64> {
        let p = self.forward(state)?;
        Ok(match action {
            RoutingAction::Regenerate => p.ln(),
            RoutingAction::Continue => (1.0 - p).ln(),
        })
    }

    /// Analytic gradient of `log π(action | state)` in parameter shapes.
    pub fn grad_logprob(&self, state: &RouterState, action: RoutingAction) -> Result<PolicyGrad> {
        if !self.is_finite() {
            return Err(Error::NonFinite("router parameters"));
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("router state"));
        }
        let s = state.as_array();
        let fp = self.forward_internal(&s);
        let a_idx = match action {
            RoutingAction::Continue => 0,
            RoutingAction::Regenerate => 1,
        };
        // d log softmax / d logits
        let g2 = [
            (if a_idx == 0 { 1.0 } else { 0.0 }) - fp.probs[0],
            (if a_idx == 1 { 1.0 } else { 0.0 }) - fp.probs[1],
        ];
        let mut grad = PolicyGrad::zeros(self.hidden);
        grad.b2.copy_from_slice(&g2);
        for a in 0..N_ACTIONS {
            for j in 0..self.hidden {
                grad.w2[a * self.hidden + j] = g2[a] * fp.h[j];
            }
        }
        for j in 0..self.hidden {
            let dh = self.w2[j] * g2[0] + self.w2[self.hidden + j] * g2[1];
            let dpre = if fp.pre1[j] > 0.0 { dh } else { 0.0 };
            grad.b1[j] = dpre;
            for (k, sv) in s.iter().enumerate() {
                grad.w1[j * STATE_DIM + k] = dpre * sv;
            }
        }
        Ok(grad)
    }

    /// One gradient-ascent step.
    pub fn apply_ascent(&mut self, grad: &PolicyGrad, lr: f64) {
        for (p, g) in self.w1.iter_mut().zip(&grad.w1) {
            *p += lr * g;
        }
        for (p, g) in self.b1.iter_mut().zip(&grad.b1) {
            *p += lr * g;
        }
        for (p, g) in self.w2.iter_mut().zip(&grad.w2) {
            *p += lr * g;
        }
        for (p, g) in self.b2.iter_mut().zip(&grad.b2) {
            *p += lr * g;
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let h = self.hidden as u64;
        Checkpoint {
            sections: vec![
                Section::new("w1", &[h, STATE_DIM as u64], self.w1.clone()),
                Section::new("b1", &[h], self.b1.clone()),
                Section::new("w2", &[N_ACTIONS as u64, h], self.w2.clone()),
                Section::new("b2", &[N_ACTIONS as u64], self.b2.clone()),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let w1 = ckpt.section("w1")?;
        let hidden = w1.dims.first().copied().unwrap_or(0) as usize;
        if w1.dims != [hidden as u64, STATE_DIM as u64] {
            return Err(Error::Checkpoint("bad w1 shape".into()));
        }
        let b1 = ckpt.section("b1")?;
        let w2 = ckpt.section("w2")?;
        let b2 = ckpt.section("b2")?;
        if b1.dims != [hidden as u64]
            || w2.dims != [N_ACTIONS as u64, hidden as u64]
            || b2.dims != [N_ACTIONS as u64]
        {
            return Err(Error::Checkpoint("inconsistent section shapes".into()));
        }
        Ok(RouterPolicy {
            hidden,
            w1: w1.data.clone(),
            b1: b1.data.clone(),
            w2: w2.data.clone(),
            b2: b2.data.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

struct ForwardPass {
    pre1: Vec<f64>,
    h: Vec<f64>,
    probs: [f64; N_ACTIONS],
}

/// Gradient in the same shapes as the policy parameters.
#[derive(Debug, Clone)]
pub struct PolicyGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(hidden: usize) -> Self {
        PolicyGrad {
            w1: vec![0.0; hidden * STATE_DIM],
            b1: vec![0.0; hidden],
            w2: vec![0.0; N_ACTIONS * hidden],
            b2: vec![0.0; N_ACTIONS],
        }
    }

    pub fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += scale * b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += scale * b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += scale * b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v *= s;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len(),
        );
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

/// A routing policy: the five training-free collection policies plus the
/// learned router.
#[derive(Clone)]
pub enum PolicyKind {
    SrmOnly,
    LrmOnly,
    Random { p: f64 },
    EntropyThreshold { threshold: f64 },
    ConfidenceThreshold { threshold: f64 },
    Learned {
        policy: Arc<RouterPolicy>,
        decision_threshold: f64,
        /// Training mode: sample the action from the Bernoulli instead of
        /// applying the deterministic cutoff.
        sample: bool,
    },
}

impl PolicyKind {
    /// Threshold baselines decide on their own signal regardless of the
    /// engine's configured one.
    pub fn signal_override(&self) -> Option<SignalKind> {
        match self {
            PolicyKind::EntropyThreshold { .. } => Some(SignalKind::AvgEntropy),
            PolicyKind::ConfidenceThreshold { .. } => Some(SignalKind::AvgConfidence),
            _ => None,
        }
    }

    /// Stable tag recorded as `source_policy`.
    pub fn tag(&self) -> String {
        match self {
            PolicyKind::SrmOnly => "srm_only".into(),
            PolicyKind::LrmOnly => "lrm_only".into(),
            PolicyKind::Random { p } => format!("random({p:.2})"),
            PolicyKind::EntropyThreshold { threshold } => format!("entropy({threshold:.2})"),
            PolicyKind::ConfidenceThreshold { threshold } => {
                format!("confidence({threshold:.2})")
            }
            PolicyKind::Learned {
                decision_threshold,
                sample,
                ..
            } => {
                if *sample {
                    "learned(sample)".into()
                } else {
                    format!("learned({decision_threshold:.2})")
                }
            }
        }
    }
}

/// Map a routing state to an action under a policy.
pub fn decide(pk: &PolicyKind, state: &RouterState, rng: &mut dyn RngCore) -> Result<RoutingAction> {
    use RoutingAction::{Continue, Regenerate};
    Ok(match pk {
        PolicyKind::SrmOnly => Continue,
        PolicyKind::LrmOnly => Regenerate,
        PolicyKind::Random { p } => {
            if rng.random::<f64>() < *p {
                Regenerate
            } else {
                Continue
            }
        }
        PolicyKind::EntropyThreshold { threshold } => {
            if state.current_uncertainty > *threshold {
                Regenerate
            } else {
                Continue
            }
        }
        PolicyKind::ConfidenceThreshold { threshold } => {
            // State carries the confidence signal for this policy; low
            // confidence escalates.
            if state.current_uncertainty < *threshold {
                Regenerate
            } else {
                Continue
            }
        }
        PolicyKind::Learned {
            policy,
            decision_threshold,
            sample,
        } => {
            let p = policy.forward(state)?;
            let regen = if *sample {
                rng.random::<f64>() < p
            } else {
                p >= *decision_threshold
            };
            if regen {
                Regenerate
            } else {
                Continue
            }
        }
    })
}

/// One routing decision as recorded during a rollout, for training.
#[derive(Debug, Clone)]
pub struct DecisionRecord {
    pub state: RouterState,
    pub action: RoutingAction,
    pub behavior_log_prob: f64,
}

/// A trajectory plus its per-decision records.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: RoutingTrajectory,
    pub decisions: Vec<DecisionRecord>,
}

/// Run the full routing loop for one query.
///
/// The loop drafts with the SRM, featurizes, decides, regenerates via the
/// LRM on `Regenerate`, and stops on a final answer, the step limit, or the
/// token budget. With gold available the outcome is evaluated on
/// termination: a trajectory is correct only if it completed its final
/// answer (truncated runs evaluate false).
pub fn run_trajectory(
    query: &QueryRecord,
    srm: &dyn Backend,
    lrm: &dyn Backend,
    pk: &PolicyKind,
    limits: &EngineLimits,
    signal: SignalKind,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    limits.validate()?;
    let signal = pk.signal_override().unwrap_or(signal);
    let mut steps: Vec<ReasoningStep> = Vec::new();
    let mut actions: Vec<RoutingAction> = Vec::new();
    let mut decisions: Vec<DecisionRecord> = Vec::new();
    let mut srm_tokens = 0u64;
    let mut lrm_tokens = 0u64;
    let mut all_latent_correct = Some(true);
    let mut completed = false;
    let mut last_text = String::new();

    for step_index in 1..=limits.max_steps {
        let ctx = GenerationContext {
            query,
            accepted_steps: &steps,
            step_index,
        };
        let draft = srm.draft_step(&ctx, rng)?;
        let state = featurize(&ctx, &draft, signal, limits);
        let action = decide(pk, &state, rng)?;
        let behavior_log_prob = match pk {
            PolicyKind::Learned { policy, .. } => policy.log_prob(&state, action)?,
            _ => 0.0,
        };
        decisions.push(DecisionRecord {
            state,
            action,
            behavior_log_prob,
        });

        let accepted = match action {
            RoutingAction::Continue => {
                srm_tokens += draft.token_count;
                ReasoningStep {
                    text: draft.text.clone(),
                    producer: Producer::SRM,
                    token_count: draft.token_count,
                    uncertainty: draft.uncertainty,
                    draft_uncertainty: draft.uncertainty,
                }
            }
            RoutingAction::Regenerate => {
                if limits.count_discarded_drafts {
                    srm_tokens += draft.token_count;
                }
                let regen = lrm.draft_step(&ctx, rng)?;
                lrm_tokens += regen.token_count;
                let step = ReasoningStep {
                    text: regen.text.clone(),
                    producer: Producer::LRM,
                    token_count: regen.token_count,
                    uncertainty: regen.uncertainty,
                    draft_uncertainty: draft.uncertainty,
                };
                if let Some(flag) = regen.latent_correct {
                    all_latent_correct = all_latent_correct.map(|acc| acc && flag);
                } else {
                    all_latent_correct = None;
                }
                actions.push(action);
                steps.push(step);
                last_text = regen.text;
                if regen.is_final {
                    completed = true;
                    break;
                }
                if srm_tokens + lrm_tokens >= limits.max_total_tokens {
                    break;
                }
                continue;
            }
        };
        if let Some(flag) = draft.latent_correct {
            all_latent_correct = all_latent_correct.map(|acc| acc && flag);
        } else {
            all_latent_correct = None;
        }
        actions.push(action);
        last_text = accepted.text.clone();
        steps.push(accepted);
        if draft.is_final {
            completed = true;
            break;
        }
        if srm_tokens + lrm_tokens >= limits.max_total_tokens {
            break;
        }
    }

    let (final_answer, outcome_correct) = evaluate_outcome(
        query,
        completed,
        all_latent_correct,
        &last_text,
        &srm.spec().final_answer_marker,
    );

    let trajectory = RoutingTrajectory {
        query_id: query.id.clone(),
        steps,
        actions,
        final_answer,
        outcome_correct,
        srm_tokens,
        lrm_tokens,
        source_policy: pk.tag(),
    };
    trajectory.validate()?;
    Ok(Rollout {
        trajectory,
        decisions,
    })
}

fn evaluate_outcome(
    query: &QueryRecord,
    completed: bool,
    all_latent_correct: Option<bool>,
    last_text: &str,
    marker: &str,
) -> (Option<String>, Option<bool>) {
    match all_latent_correct {
        // Simulated world: the answer is the gold answer iff every accepted
        // step was correct and the trace completed.
        Some(all_ok) => match &query.gold_answer {
            Some(gold) => {
                let answer = if completed && all_ok {
                    gold.clone()
                } else if completed {
                    format!("wrong-{}", query.id)
                } else {
                    format!("truncated-{}", query.id)
                };
                let correct = answer == *gold;
                (Some(answer), Some(correct))
            }
            None => (None, None),
        },
        // Remote: extract after the marker and exact-match against gold.
        None => {
            let answer = crate::backends::remote::extract_final_answer(last_text, marker);
            let correct = match (&answer, &query.gold_answer) {
                (Some(a), Some(g)) => Some(a.trim() == g.trim()),
                _ => None,
            };
            (answer, correct)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::simulated::SimulatedBackend;
    use crate::backends::BackendSpec;
    use crate::rng::derive_rng;
    use crate::synthworld::{generate_dataset, DifficultySpec, SyntheticQuery, WorldConfig};
    use crate::types::SignalValues;
    use approx::assert_relative_eq;

    fn state(vals: [f64; 5]) -> RouterState {
        RouterState {
            current_uncertainty: vals[0],
            min_prefix_uncertainty: vals[1],
            avg_prefix_uncertainty: vals[2],
            norm_token_count: vals[3],
            norm_step_index: vals[4],
        }
    }

    fn draft_with(entropy: f64, tokens: u64) -> StepDraft {
        StepDraft {
            text: "d".into(),
            token_count: tokens,
            uncertainty: SignalValues {
                avg_entropy: entropy,
                avg_confidence: (-entropy).exp(),
                avg_nll: entropy,
                first3_entropy: entropy,
            },
            latent_correct: Some(true),
            is_final: false,
        }
    }

    fn step_with(entropy: f64) -> ReasoningStep {
        ReasoningStep {
            text: "s".into(),
            producer: Producer::SRM,
            token_count: 40,
            uncertainty: SignalValues {
                avg_entropy: entropy,
                avg_confidence: (-entropy).exp(),
                avg_nll: entropy,
                first3_entropy: entropy,
            },
            draft_uncertainty: SignalValues {
                avg_entropy: entropy,
                avg_confidence: (-entropy).exp(),
                avg_nll: entropy,
                first3_entropy: entropy,
            },
        }
    }

    fn query() -> QueryRecord {
        QueryRecord {
            id: "q".into(),
            text: "t".into(),
            gold_answer: Some("a".into()),
            difficulty: Some(1.0),
            origin: crate::types::Origin::Synthetic,
        }
    }

    #[test]
    fn featurize_first_step() {
        let q = query();
        let ctx = GenerationContext::new(&q, &[]);
        let limits = EngineLimits {
            max_steps: 50,
            token_norm_constant: 200.0,
            ..EngineLimits::default()
        };
        let s = featurize(&ctx, &draft_with(0.7, 40), SignalKind::AvgEntropy, &limits);
        assert_eq!(
            s.as_array(),
            [0.7, 0.7, 0.7, 0.2, 1.0 / 50.0]
        );
    }

    #[test]
    fn featurize_prefix_stats() {
        let q = query();
        let prefix = vec![step_with(0.2), step_with(0.6)];
        let ctx = GenerationContext::new(&q, &prefix);
        let s = featurize(
            &ctx,
            &draft_with(0.4, 40),
            SignalKind::AvgEntropy,
            &EngineLimits::default(),
        );
        assert_relative_eq!(s.min_prefix_uncertainty, 0.2);
        assert_relative_eq!(s.avg_prefix_uncertainty, 0.4);
        assert_relative_eq!(s.current_uncertainty, 0.4);
    }

    #[test]
    fn zero_policy_probability_half() {
        let p = RouterPolicy::zeros(8);
        let s = state([0.3, 0.1, 0.2, 0.2, 0.05]);
        assert_relative_eq!(p.forward(&s).unwrap(), 0.5);
    }

    #[test]
    fn bias_only_softmax_fixture() {
        let mut p = RouterPolicy::zeros(4);
        p.b2 = vec![0.0, 10.0];
        let s = state([0.0; 5]);
        assert_relative_eq!(
            p.forward(&s).unwrap(),
            0.9999546021312976,
            epsilon = 1e-12
        );
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut a = RouterPolicy::zeros(4);
        a.b2 = vec![1.0, 2.5];
        let mut b = RouterPolicy::zeros(4);
        b.b2 = vec![1.0 + 7.0, 2.5 + 7.0];
        let s = state([0.5, 0.2, 0.3, 0.1, 0.04]);
        assert_relative_eq!(a.forward(&s).unwrap(), b.forward(&s).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn zero_param_grad_bias_pattern() {
        let p = RouterPolicy::zeros(8);
        let s = state([0.3, 0.1, 0.2, 0.2, 0.05]);
        let g = p.grad_logprob(&s, RoutingAction::Regenerate).unwrap();
        assert_relative_eq!(g.b2[0], -0.5);
        assert_relative_eq!(g.b2[1], 0.5);
        let g = p.grad_logprob(&s, RoutingAction::Continue).unwrap();
        assert_relative_eq!(g.b2[0], 0.5);
        assert_relative_eq!(g.b2[1], -0.5);
    }

    #[test]
    fn score_function_identity() {
        let mut rng = derive_rng(3, &["score-fn"]);
        for _ in 0..10 {
            let p = RouterPolicy::random_init(16, &mut rng);
            let s = state([
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ]);
            let prob_regen = p.forward(&s).unwrap();
            let g_cont = p.grad_logprob(&s, RoutingAction::Continue).unwrap().flat();
            let g_regen = p
                .grad_logprob(&s, RoutingAction::Regenerate)
                .unwrap()
                .flat();
            for (a, b) in g_cont.iter().zip(&g_regen) {
                let mixed = (1.0 - prob_regen) * a + prob_regen * b;
                assert!(mixed.abs() < 1e-10, "identity violated: {mixed}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = derive_rng(17, &["fd"]);
        for trial in 0..20 {
            let hidden = [4, 8, 16][trial % 3];
            let mut p = RouterPolicy::random_init(hidden, &mut rng);
            let s = state([
                rng.random::<f64>() * 2.0,
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ]);
            let action = if rng.random::<bool>() {
                RoutingAction::Regenerate
            } else {
                RoutingAction::Continue
            };
            let analytic = p.grad_logprob(&s, action).unwrap().flat();
            let mut numeric = vec![0.0; p.param_count()];
            let eps = 1e-5;
            for i in 0..p.param_count() {
                let orig = p.get_param(i);
                p.set_param(i, orig + eps);
                let up = p.log_prob(&s, action).unwrap();
                p.set_param(i, orig - eps);
                let down = p.log_prob(&s, action).unwrap();
                p.set_param(i, orig);
                numeric[i] = (up - down) / (2.0 * eps);
            }
            let num_norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let rel = diff / num_norm.max(1e-12);
            assert!(rel <= 1e-4, "trial {trial}: rel err {rel}");
        }
    }

    #[test]
    fn decide_fixtures() {
        let mut rng = derive_rng(0, &["decide"]);
        let s = state([0.7, 0.7, 0.7, 0.2, 0.02]);
        assert_eq!(
            decide(&PolicyKind::SrmOnly, &s, &mut rng).unwrap(),
            RoutingAction::Continue
        );
        assert_eq!(
            decide(&PolicyKind::LrmOnly, &s, &mut rng).unwrap(),
            RoutingAction::Regenerate
        );
        assert_eq!(
            decide(&PolicyKind::EntropyThreshold { threshold: 0.5 }, &s, &mut rng).unwrap(),
            RoutingAction::Regenerate
        );
        // Confidence state: current carries the confidence value.
        let low_conf = state([0.3, 0.3, 0.3, 0.2, 0.02]);
        assert_eq!(
            decide(
                &PolicyKind::ConfidenceThreshold { threshold: 0.5 },
                &low_conf,
                &mut rng
            )
            .unwrap(),
            RoutingAction::Regenerate
        );
    }

    #[test]
    fn learned_cutoff_rule() {
        // Bias picked so P(Regenerate) ≈ 0.62.
        let mut p = RouterPolicy::zeros(4);
        let target: f64 = 0.62;
        p.b2 = vec![0.0, (target / (1.0 - target)).ln()];
        let s = state([0.0; 5]);
        let pk = PolicyKind::Learned {
            policy: Arc::new(p),
            decision_threshold: 0.60,
            sample: false,
        };
        let mut rng = derive_rng(0, &["cutoff"]);
        assert_eq!(decide(&pk, &s, &mut rng).unwrap(), RoutingAction::Regenerate);
    }

    fn world_fixture() -> (WorldConfig, Vec<SyntheticQuery>) {
        let cfg = WorldConfig {
            difficulty: DifficultySpec::Uniform { lo: 0.0, hi: 1.0 },
            min_steps: 5,
            max_steps: 5,
            ..WorldConfig::default()
        };
        let ds = generate_dataset(&cfg, 3, 21).unwrap();
        (cfg, ds)
    }

    fn backends(cfg: &WorldConfig, ds: &[SyntheticQuery]) -> (SimulatedBackend, SimulatedBackend) {
        (
            SimulatedBackend::new(BackendSpec::simulated(Producer::SRM, 1.7e9), cfg.clone(), ds)
                .unwrap(),
            SimulatedBackend::new(BackendSpec::simulated(Producer::LRM, 14e9), cfg.clone(), ds)
                .unwrap(),
        )
    }

    #[test]
    fn srm_only_uses_no_lrm_tokens() {
        let (cfg, ds) = world_fixture();
        let (srm, lrm) = backends(&cfg, &ds);
        let mut rng = derive_rng(5, &["run", "srm"]);
        let rollout = run_trajectory(
            &ds[0].record,
            &srm,
            &lrm,
            &PolicyKind::SrmOnly,
            &EngineLimits::default(),
            SignalKind::AvgEntropy,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rollout.trajectory.lrm_tokens, 0);
        assert_eq!(rollout.trajectory.steps.len(), 5);
        assert!(rollout
            .trajectory
            .steps
            .iter()
            .all(|s| s.producer == Producer::SRM));
    }

    #[test]
    fn lrm_only_still_counts_drafts() {
        let (cfg, ds) = world_fixture();
        let (srm, lrm) = backends(&cfg, &ds);
        let mut rng = derive_rng(5, &["run", "lrm"]);
        let rollout = run_trajectory(
            &ds[0].record,
            &srm,
            &lrm,
            &PolicyKind::LrmOnly,
            &EngineLimits::default(),
            SignalKind::AvgEntropy,
            &mut rng,
        )
        .unwrap();
        let t = &rollout.trajectory;
        assert!(t.steps.iter().all(|s| s.producer == Producer::LRM));
        // Drafts always generated: 5 steps × 40 draft tokens.
        assert_eq!(t.srm_tokens, 200);
        assert_eq!(t.lrm_tokens, 400);
        // Draft-exclusion flag drops the discarded draft cost.
        let mut rng = derive_rng(5, &["run", "lrm"]);
        let limits = EngineLimits {
            count_discarded_drafts: false,
            ..EngineLimits::default()
        };
        let rollout = run_trajectory(
            &ds[0].record,
            &srm,
            &lrm,
            &PolicyKind::LrmOnly,
            &limits,
            SignalKind::AvgEntropy,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rollout.trajectory.srm_tokens, 0);
    }

    #[test]
    fn max_steps_truncates() {
        let (cfg, ds) = world_fixture();
        let (srm, lrm) = backends(&cfg, &ds);
        let limits = EngineLimits {
            max_steps: 3,
            ..EngineLimits::default()
        };
        let mut rng = derive_rng(5, &["run", "trunc"]);
        let rollout = run_trajectory(
            &ds[0].record,
            &srm,
            &lrm,
            &PolicyKind::SrmOnly,
            &limits,
            SignalKind::AvgEntropy,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rollout.trajectory.steps.len(), 3);
        // Outcome evaluated on truncation: incomplete, hence wrong.
        assert_eq!(rollout.trajectory.outcome_correct, Some(false));
    }

    #[test]
    fn deterministic_replay() {
        let (cfg, ds) = world_fixture();
        let (srm, lrm) = backends(&cfg, &ds);
        let pk = PolicyKind::Random { p: 0.5 };
        let run = |seed: u64| {
            let mut rng = derive_rng(seed, &["replay", &ds[1].record.id]);
            run_trajectory(
                &ds[1].record,
                &srm,
                &lrm,
                &pk,
                &EngineLimits::default(),
                SignalKind::AvgEntropy,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(
            serde_json::to_string(&a.trajectory).unwrap(),
            serde_json::to_string(&b.trajectory).unwrap()
        );
        let c = run(8);
        // Different stream: allowed to differ (and almost surely does).
        let _ = c;
    }

    /// Backend returning index-keyed frozen drafts, identical for both
    /// roles, so threshold sweeps see fixed per-step probabilities.
    struct FrozenBackend {
        spec: BackendSpec,
        entropies: Vec<f64>,
    }

    impl crate::backends::Backend for FrozenBackend {
        fn spec(&self) -> &BackendSpec {
            &self.spec
        }

        fn draft_step(
            &self,
            ctx: &GenerationContext<'_>,
            _rng: &mut dyn RngCore,
        ) -> Result<StepDraft> {
            let idx = (ctx.step_index - 1).min(self.entropies.len() - 1);
            let mut d = draft_with(self.entropies[idx], 40);
            d.is_final = ctx.step_index >= self.entropies.len();
            d.latent_correct = Some(true);
            Ok(d)
        }
    }

    #[test]
    fn threshold_sweep_monotone_usage_on_frozen_drafts() {
        let entropies = vec![0.9, 0.1, 0.6, 0.3, 0.8, 0.2, 0.5, 0.7];
        let srm = FrozenBackend {
            spec: BackendSpec::simulated(Producer::SRM, 1.7e9),
            entropies: entropies.clone(),
        };
        let lrm = FrozenBackend {
            spec: BackendSpec::simulated(Producer::LRM, 14e9),
            entropies,
        };
        let q = query();
        let mut rng = derive_rng(1, &["mono"]);
        let policy = Arc::new(RouterPolicy::random_init(16, &mut rng));
        let mut last_usage = f64::INFINITY;
        for i in 0..=20 {
            let threshold = i as f64 / 20.0;
            let pk = PolicyKind::Learned {
                policy: Arc::clone(&policy),
                decision_threshold: threshold,
                sample: false,
            };
            let mut run_rng = derive_rng(2, &["mono-run"]);
            let rollout = run_trajectory(
                &q,
                &srm,
                &lrm,
                &pk,
                &EngineLimits::default(),
                SignalKind::AvgEntropy,
                &mut run_rng,
            )
            .unwrap();
            let usage = rollout.trajectory.lrm_usage_rate().unwrap();
            assert!(
                usage <= last_usage + 1e-12,
                "usage not monotone at threshold {threshold}: {usage} > {last_usage}"
            );
            last_usage = usage;
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let mut rng = derive_rng(9, &["ckpt"]);
        let p = RouterPolicy::random_init(32, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("router.ckpt");
        p.save(&path).unwrap();
        let q = RouterPolicy::load(&path).unwrap();
        assert_eq!(p, q);
        // Bit-exact on disk too: saving again produces identical bytes.
        let bytes_a = std::fs::read(&path).unwrap();
        q.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes_a);
    }
}

//! Generation backends: the SRM/LRM abstraction that produces step drafts
//! with uncertainty signals.
//!
//! Two implementations exist: [`simulated::SimulatedBackend`] for desk-scale
//! experiments against the synthetic world, and [`remote::RemoteBackend`]
//! for chat-completions-compatible endpoints with token log-probabilities.

pub mod remote;
pub mod simulated;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Producer, QueryRecord, ReasoningStep, SignalKind, SignalValues};

/// A candidate step produced by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDraft {
    pub text: String,
    pub token_count: u64,
    pub uncertainty: SignalValues,
    /// Hidden correctness bit, set only by the simulated backend; never
    /// visible to the router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_correct: Option<bool>,
    /// Whether this draft completes the final answer.
    pub is_final: bool,
}

/// Everything a backend needs to draft the next step.
#[derive(Debug, Clone, Copy)]
pub struct GenerationContext<'a> {
    pub query: &'a QueryRecord,
    pub accepted_steps: &'a [ReasoningStep],
    /// 1-based index of the step being drafted; always
    /// `accepted_steps.len() + 1`.
    pub step_index: usize,
}

impl<'a> GenerationContext<'a> {
    pub fn new(query: &'a QueryRecord, accepted_steps: &'a [ReasoningStep]) -> Self {
        GenerationContext {
            query,
            accepted_steps,
            step_index: accepted_steps.len() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_index != self.accepted_steps.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "step_index {} != accepted_steps+1 ({})",
                self.step_index,
                self.accepted_steps.len() + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Simulated,
    Remote,
}

/// Declarative backend description loaded from config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub role: Producer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    pub param_count: f64,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    /// Environment variable holding the API key; never the key itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Top-k log-probabilities requested per token for entropy estimation.
    #[serde(default = "default_top_k")]
    pub top_k_logprobs: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_generation_tokens: u64,
    /// Marker ending a reasoning trace; text after it is the final answer.
    #[serde(default = "default_answer_marker")]
    pub final_answer_marker: String,
}

fn default_timeout_ms() -> u64 {
    120_000
}
fn default_max_concurrent() -> usize {
    4
}
fn default_top_k() -> usize {
    20
}
fn default_temperature() -> f64 {
    0.7
}
fn default_top_p() -> f64 {
    0.95
}
fn default_max_tokens() -> u64 {
    16_384
}
fn default_answer_marker() -> String {
    "Final Answer:".to_string()
}

impl BackendSpec {
    pub fn simulated(role: Producer, param_count: f64) -> Self {
        BackendSpec {
            kind: BackendKind::Simulated,
            role,
            endpoint: None,
            model_name: None,
            param_count,
            request_timeout_ms: default_timeout_ms(),
            max_concurrent: default_max_concurrent(),
            api_key_env: None,
            top_k_logprobs: default_top_k(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_generation_tokens: default_max_tokens(),
            final_answer_marker: default_answer_marker(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_count <= 0.0 {
            return Err(Error::InvalidArgument("param_count must be positive".into()));
        }
        if self.kind == BackendKind::Remote && (self.endpoint.is_none() || self.model_name.is_none())
        {
            return Err(Error::InvalidArgument(
                "remote backend requires endpoint and model_name".into(),
            ));
        }
        if self.max_concurrent == 0 {
            return Err(Error::InvalidArgument("max_concurrent must be >= 1".into()));
        }
        Ok(())
    }
}

/// A step-drafting model. Implementations must be callable from multiple
/// trajectory workers concurrently.
pub trait Backend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    /// Draft the next step. The rng stream is owned by the calling
    /// trajectory; simulated drafts are a pure function of (spec, context,
    /// stream state).
    fn draft_step(&self, ctx: &GenerationContext<'_>, rng: &mut dyn RngCore) -> Result<StepDraft>;
}

/// Per-token top-k alternatives: (token, logprob) pairs.
pub type TopLogprobs = Vec<(String, f64)>;

/// Compute one uncertainty signal from token-level log-probabilities.
///
/// Entropy signals renormalize the returned top-k distribution per token;
/// confidence uses the raw maximum token probability; NLL averages the
/// negated chosen-token log-probabilities.
pub fn compute_uncertainty(
    kind: SignalKind,
    token_distributions: &[TopLogprobs],
    chosen_logprobs: &[f64],
) -> Result<f64> {
    match kind {
        SignalKind::AvgEntropy => mean_entropy(token_distributions, token_distributions.len()),
        SignalKind::First3Entropy => {
            mean_entropy(token_distributions, token_distributions.len().min(3))
        }
        SignalKind::AvgConfidence => {
            if token_distributions.is_empty() {
                return Err(Error::EmptyInput("token distributions"));
            }
            let mut sum = 0.0;
            for dist in token_distributions {
                let max_lp = dist
                    .iter()
                    .map(|(_, lp)| *lp)
                    .fold(f64::NEG_INFINITY, f64::max);
                if !max_lp.is_finite() {
                    return Err(Error::EmptyInput("top-k list"));
                }
                sum += max_lp.exp().min(1.0);
            }
            Ok(sum / token_distributions.len() as f64)
        }
        SignalKind::AvgNll => {
            if chosen_logprobs.is_empty() {
                return Err(Error::EmptyInput("chosen logprobs"));
            }
            Ok(chosen_logprobs.iter().map(|lp| -lp).sum::<f64>() / chosen_logprobs.len() as f64)
        }
    }
}

/// Populate all four signals at once.
pub fn all_signals(
    token_distributions: &[TopLogprobs],
    chosen_logprobs: &[f64],
) -> Result<SignalValues> {
    Ok(SignalValues {
        avg_entropy: compute_uncertainty(SignalKind::AvgEntropy, token_distributions, chosen_logprobs)?,
        avg_confidence: compute_uncertainty(
            SignalKind::AvgConfidence,
            token_distributions,
            chosen_logprobs,
        )?,
        avg_nll: compute_uncertainty(SignalKind::AvgNll, token_distributions, chosen_logprobs)?,
        first3_entropy: compute_uncertainty(
            SignalKind::First3Entropy,
            token_distributions,
            chosen_logprobs,
        )?,
    })
}

fn mean_entropy(dists: &[TopLogprobs], take: usize) -> Result<f64> {
    if dists.is_empty() || take == 0 {
        return Err(Error::EmptyInput("token distributions"));
    }
    let mut sum = 0.0;
    for dist in dists.iter().take(take) {
        if dist.is_empty() {
            return Err(Error::EmptyInput("top-k list"));
        }
        sum += entropy_of(dist);
    }
    Ok(sum / take as f64)
}

/// Entropy of the renormalized top-k distribution, in nats.
fn entropy_of(dist: &TopLogprobs) -> f64 {
    let max_lp = dist
        .iter()
        .map(|(_, lp)| *lp)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = dist.iter().map(|(_, lp)| (lp - max_lp).exp()).sum();
    let log_z = z.ln() + max_lp;
    let mut h = 0.0;
    for (_, lp) in dist {
        let p = (lp - log_z).exp();
        if p > 0.0 {
            h -= p * (lp - log_z);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(probs: &[f64]) -> TopLogprobs {
        probs
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("t{i}"), p.ln()))
            .collect()
    }

    #[test]
    fn uniform_two_way_entropy_is_ln2() {
        let d = vec![dist(&[0.5, 0.5])];
        let h = compute_uncertainty(SignalKind::AvgEntropy, &d, &[0.5f64.ln()]).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn certain_token_zero_nll() {
        let v = compute_uncertainty(SignalKind::AvgNll, &[], &[1.0f64.ln()]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn confidence_is_mean_max_prob() {
        let d = vec![dist(&[0.9, 0.1]), dist(&[0.7, 0.3])];
        let c = compute_uncertainty(SignalKind::AvgConfidence, &d, &[0.0, 0.0]).unwrap();
        assert!((c - 0.8).abs() < 1e-12);
    }

    #[test]
    fn first3_equals_avg_when_short() {
        let d = vec![dist(&[0.6, 0.4]), dist(&[0.8, 0.2])];
        let a = compute_uncertainty(SignalKind::AvgEntropy, &d, &[0.0, 0.0]).unwrap();
        let f = compute_uncertainty(SignalKind::First3Entropy, &d, &[0.0, 0.0]).unwrap();
        assert_eq!(a, f);
    }

    #[test]
    fn renormalization_handles_unnormalized_topk() {
        // Top-2 of a wider distribution: raw probs 0.4 and 0.4 renormalize
        // to uniform over two -> ln 2.
        let d = vec![dist(&[0.4, 0.4])];
        let h = compute_uncertainty(SignalKind::AvgEntropy, &d, &[0.4f64.ln()]).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(compute_uncertainty(SignalKind::AvgEntropy, &[], &[]).is_err());
        assert!(compute_uncertainty(SignalKind::AvgNll, &[], &[]).is_err());
        let empty_topk: Vec<TopLogprobs> = vec![vec![]];
        assert!(compute_uncertainty(SignalKind::AvgEntropy, &empty_topk, &[0.0]).is_err());
    }
}

//! Shared domain types: queries, reasoning steps, routing trajectories, and
//! the uncertainty-signal vocabulary.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Trajectories persist as JSONL, one object per line, with a schema
//! version field `"v": 1` added by the I/O layer (see [`crate::io`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a query came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Synthetic,
    External,
}

/// One problem instance to route over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Unique within a dataset.
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    /// Overall difficulty label in [1, 10]; always present for synthetic queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
    pub origin: Origin,
}

/// Which model produced an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Producer {
    SRM,
    LRM,
}

/// Per-step routing decision: keep the SRM draft or regenerate with the LRM.
///
/// Ordered with `Continue < Regenerate` for lexicographic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoutingAction {
    Continue,
    Regenerate,
}

/// The four step-level uncertainty signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    AvgEntropy,
    AvgConfidence,
    AvgNll,
    First3Entropy,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [
        SignalKind::AvgEntropy,
        SignalKind::AvgConfidence,
        SignalKind::AvgNll,
        SignalKind::First3Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::AvgEntropy => "avg_entropy",
            SignalKind::AvgConfidence => "avg_confidence",
            SignalKind::AvgNll => "avg_nll",
            SignalKind::First3Entropy => "first3_entropy",
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg_entropy" => Ok(SignalKind::AvgEntropy),
            "avg_confidence" => Ok(SignalKind::AvgConfidence),
            "avg_nll" => Ok(SignalKind::AvgNll),
            "first3_entropy" => Ok(SignalKind::First3Entropy),
            other => Err(Error::InvalidArgument(format!(
                "unknown uncertainty signal `{other}`"
            ))),
        }
    }
}

/// Values of all four uncertainty signals for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalValues {
    pub avg_entropy: f64,
    pub avg_confidence: f64,
    pub avg_nll: f64,
    pub first3_entropy: f64,
}

impl SignalValues {
    pub fn get(&self, kind: SignalKind) -> f64 {
        match kind {
            SignalKind::AvgEntropy => self.avg_entropy,
            SignalKind::AvgConfidence => self.avg_confidence,
            SignalKind::AvgNll => self.avg_nll,
            SignalKind::First3Entropy => self.first3_entropy,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.avg_entropy.is_finite()
            && self.avg_confidence.is_finite()
            && self.avg_nll.is_finite()
            && self.first3_entropy.is_finite()
    }
}

/// One accepted reasoning step.
///
/// `uncertainty` carries the signals of the model that produced the accepted
/// step; `draft_uncertainty` carries the signals of the SRM draft the router
/// decided on (identical to `uncertainty` for `Continue` steps). Criterion
/// scoring needs the draft view because routing decisions are judged against
/// what the router saw, not against the replacement step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub text: String,
    pub producer: Producer,
    pub token_count: u64,
    pub uncertainty: SignalValues,
    pub draft_uncertainty: SignalValues,
}

/// A complete routing trajectory for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingTrajectory {
    pub query_id: String,
    pub steps: Vec<ReasoningStep>,
    pub actions: Vec<RoutingAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_correct: Option<bool>,
    /// All SRM draft tokens, including drafts discarded by `Regenerate`.
    pub srm_tokens: u64,
    /// Tokens of steps produced by the LRM.
    pub lrm_tokens: u64,
    /// Tag of the policy that produced this trajectory.
    pub source_policy: String,
}

impl RoutingTrajectory {
    /// Number of adjacent action changes.
    pub fn switch_count(&self) -> Result<u64> {
        if self.actions.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        Ok(self
            .actions
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count() as u64)
    }

    /// Fraction of actions equal to `Regenerate`.
    pub fn lrm_usage_rate(&self) -> Result<f64> {
        if self.actions.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let regen = self
            .actions
            .iter()
            .filter(|a| **a == RoutingAction::Regenerate)
            .count();
        Ok(regen as f64 / self.actions.len() as f64)
    }

    /// Check the structural invariants shared by every trajectory.
    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.actions.len() {
            return Err(Error::InvalidTrajectory(format!(
                "steps/actions length mismatch: {} vs {}",
                self.steps.len(),
                self.actions.len()
            )));
        }
        let mut lrm_sum = 0u64;
        for (i, (step, action)) in self.steps.iter().zip(&self.actions).enumerate() {
            let expected = match action {
                RoutingAction::Continue => Producer::SRM,
                RoutingAction::Regenerate => Producer::LRM,
            };
            if step.producer != expected {
                return Err(Error::InvalidTrajectory(format!(
                    "step {i}: action {action:?} but producer {:?}",
                    step.producer
                )));
            }
            if step.producer == Producer::LRM {
                lrm_sum += step.token_count;
            }
            if !step.text.is_empty() && step.token_count == 0 {
                return Err(Error::InvalidTrajectory(format!(
                    "step {i}: non-empty text with zero tokens"
                )));
            }
        }
        if lrm_sum != self.lrm_tokens {
            return Err(Error::InvalidTrajectory(format!(
                "lrm_tokens {} does not match LRM step sum {lrm_sum}",
                self.lrm_tokens
            )));
        }
        Ok(())
    }
}

/// Split a reasoning trace into steps on the literal `"\n\n"` delimiter.
///
/// Segments are trimmed and those empty after trimming are dropped: a step
/// must contain content.
pub fn split_steps(reasoning_text: &str) -> Vec<String> {
    reasoning_text
        .split("\n\n")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signals(v: f64) -> SignalValues {
        SignalValues {
            avg_entropy: v,
            avg_confidence: (-v).exp().clamp(1e-9, 1.0),
            avg_nll: v,
            first3_entropy: v,
        }
    }

    pub(crate) fn mk_traj(actions: &[RoutingAction]) -> RoutingTrajectory {
        let steps: Vec<ReasoningStep> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let producer = match a {
                    RoutingAction::Continue => Producer::SRM,
                    RoutingAction::Regenerate => Producer::LRM,
                };
                ReasoningStep {
                    text: format!("step {i}"),
                    producer,
                    token_count: 10,
                    uncertainty: signals(0.5),
                    draft_uncertainty: signals(0.5),
                }
            })
            .collect();
        let lrm_tokens = steps
            .iter()
            .filter(|s| s.producer == Producer::LRM)
            .map(|s| s.token_count)
            .sum();
        RoutingTrajectory {
            query_id: "q0".into(),
            steps,
            actions: actions.to_vec(),
            final_answer: None,
            outcome_correct: None,
            srm_tokens: 10 * actions.len() as u64,
            lrm_tokens,
            source_policy: "test".into(),
        }
    }

    use RoutingAction::{Continue as C, Regenerate as R};

    #[test]
    fn split_on_double_newline() {
        assert_eq!(split_steps("a\n\nb"), vec!["a", "b"]);
        assert_eq!(split_steps("a"), vec!["a"]);
        assert_eq!(split_steps("a\n\n\n\nb"), vec!["a", "b"]);
        assert!(split_steps("").is_empty());
        assert!(split_steps("  \n\n \t ").is_empty());
    }

    #[test]
    fn switch_count_cases() {
        assert_eq!(mk_traj(&[C, C, C]).switch_count().unwrap(), 0);
        assert_eq!(mk_traj(&[C, R, C, R]).switch_count().unwrap(), 3);
        assert_eq!(mk_traj(&[R]).switch_count().unwrap(), 0);
        assert!(matches!(
            mk_traj(&[]).switch_count(),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn lrm_usage_cases() {
        assert_eq!(mk_traj(&[C, C, C, C]).lrm_usage_rate().unwrap(), 0.0);
        assert_eq!(mk_traj(&[R, R, R, R]).lrm_usage_rate().unwrap(), 1.0);
        assert_eq!(mk_traj(&[C, R, C, R]).lrm_usage_rate().unwrap(), 0.5);
        assert!(mk_traj(&[]).lrm_usage_rate().is_err());
    }

    #[test]
    fn validate_catches_producer_mismatch() {
        let mut t = mk_traj(&[C, R]);
        t.steps[0].producer = Producer::LRM;
        assert!(t.validate().is_err());
        let good = mk_traj(&[C, R]);
        good.validate().unwrap();
    }

    #[test]
    fn trajectory_jsonl_field_names() {
        let t = mk_traj(&[C, R]);
        let v = serde_json::to_value(&t).unwrap();
        for key in [
            "query_id",
            "steps",
            "actions",
            "srm_tokens",
            "lrm_tokens",
            "source_policy",
        ] {
            assert!(v.get(key).is_some(), "missing field {key}");
        }
        assert_eq!(v["actions"][0], "Continue");
        assert_eq!(v["actions"][1], "Regenerate");
        assert_eq!(v["steps"][0]["producer"], "SRM");
        let unc = &v["steps"][0]["uncertainty"];
        for key in ["avg_entropy", "avg_confidence", "avg_nll", "first3_entropy"] {
            assert!(unc.get(key).is_some(), "missing signal key {key}");
        }
    }

    proptest::proptest! {
        #[test]
        fn split_round_trip(segments in proptest::collection::vec("[a-z][a-z ]{0,8}[a-z]", 1..6)) {
            let joined = segments.join("\n\n");
            proptest::prop_assert_eq!(split_steps(&joined), segments);
        }

        #[test]
        fn switch_count_bound(actions in proptest::collection::vec(
            proptest::prop_oneof![proptest::strategy::Just(C), proptest::strategy::Just(R)], 1..20)) {
            let t = mk_traj(&actions);
            let sc = t.switch_count().unwrap();
            proptest::prop_assert!(sc <= actions.len() as u64 - 1);
            let usage = t.lrm_usage_rate().unwrap() * actions.len() as f64;
            proptest::prop_assert!((usage - usage.round()).abs() < 1e-9);
        }
    }
}

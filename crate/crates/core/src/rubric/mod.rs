//! Rubric-guided process reward modeling: the criterion vocabulary and
//! deterministic scoring, the seed rubric, the trainable judge and rubricor,
//! alternating optimization, and the LLM prompt adapters.
//!
//! Criteria come from a closed, machine-scorable vocabulary so that scores
//! are reproducible; each carries a natural-language rendering for LLM
//! backends, and freeform criteria parsed from adapter output are scored
//! through the judge adapter instead. All criterion formulas read the
//! average-entropy signal, the default uncertainty signal.

pub mod adapter;
pub mod alternate;
pub mod judge;
pub mod rubricor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Producer, RoutingTrajectory};

/// The closed vocabulary of machine-scorable criterion kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    TimelyEscalation,
    Recovery,
    CostEfficiency,
    NoThrashing,
    HardStepCoverage,
    EasyStepEconomy,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 6] = [
        CriterionKind::TimelyEscalation,
        CriterionKind::Recovery,
        CriterionKind::CostEfficiency,
        CriterionKind::NoThrashing,
        CriterionKind::HardStepCoverage,
        CriterionKind::EasyStepEconomy,
    ];

    /// Fixed feature-slot index used by the parametric judge.
    pub fn slot(self) -> usize {
        match self {
            CriterionKind::TimelyEscalation => 0,
            CriterionKind::Recovery => 1,
            CriterionKind::CostEfficiency => 2,
            CriterionKind::NoThrashing => 3,
            CriterionKind::HardStepCoverage => 4,
            CriterionKind::EasyStepEconomy => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::TimelyEscalation => "timely_escalation",
            CriterionKind::Recovery => "recovery",
            CriterionKind::CostEfficiency => "cost_efficiency",
            CriterionKind::NoThrashing => "no_thrashing",
            CriterionKind::HardStepCoverage => "hard_step_coverage",
            CriterionKind::EasyStepEconomy => "easy_step_economy",
        }
    }
}

/// A concrete scoring rule: a kind plus its parameters, or a freeform
/// criterion that only an LLM judge can score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriterionRule {
    TimelyEscalation { threshold: f64, window: f64 },
    Recovery,
    CostEfficiency { threshold: f64 },
    NoThrashing,
    HardStepCoverage { threshold: f64 },
    EasyStepEconomy { threshold: f64 },
    Freeform,
}

impl CriterionRule {
    pub fn kind(&self) -> Option<CriterionKind> {
        match self {
            CriterionRule::TimelyEscalation { .. } => Some(CriterionKind::TimelyEscalation),
            CriterionRule::Recovery => Some(CriterionKind::Recovery),
            CriterionRule::CostEfficiency { .. } => Some(CriterionKind::CostEfficiency),
            CriterionRule::NoThrashing => Some(CriterionKind::NoThrashing),
            CriterionRule::HardStepCoverage { .. } => Some(CriterionKind::HardStepCoverage),
            CriterionRule::EasyStepEconomy { .. } => Some(CriterionKind::EasyStepEconomy),
            CriterionRule::Freeform => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            CriterionRule::TimelyEscalation { threshold, window } => {
                *threshold >= 0.0 && *window > 0.0
            }
            CriterionRule::CostEfficiency { threshold }
            | CriterionRule::HardStepCoverage { threshold }
            | CriterionRule::EasyStepEconomy { threshold } => *threshold >= 0.0,
            CriterionRule::Recovery | CriterionRule::NoThrashing | CriterionRule::Freeform => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad criterion params: {self:?}")))
        }
    }

    /// Natural-language rendering carried alongside the rule for LLM
    /// backends; parseable back via [`rule_from_text`].
    pub fn render_text(&self) -> String {
        match self {
            CriterionRule::TimelyEscalation { threshold, window } => format!(
                "Escalate to the LRM within {window} steps of the first draft whose uncertainty exceeds {threshold}."
            ),
            CriterionRule::Recovery => {
                "An LRM intervention should reduce uncertainty on the following step relative to the draft it replaced.".to_string()
            }
            CriterionRule::CostEfficiency { threshold } => format!(
                "Spend LRM calls only on steps whose draft uncertainty exceeds {threshold}."
            ),
            CriterionRule::NoThrashing => {
                "Avoid frequent switching between models on consecutive steps.".to_string()
            }
            CriterionRule::HardStepCoverage { threshold } => format!(
                "Route drafts with uncertainty above {threshold} to the LRM."
            ),
            CriterionRule::EasyStepEconomy { threshold } => format!(
                "Keep drafts with uncertainty at or below {threshold} on the SRM."
            ),
            CriterionRule::Freeform => String::new(),
        }
    }
}

/// Recover a deterministic rule from its canonical text, if it matches.
pub fn rule_from_text(text: &str) -> Option<CriterionRule> {
    fn capture(text: &str, prefix: &str, mid: Option<&str>, suffix: &str) -> Option<Vec<f64>> {
        let rest = text.strip_prefix(prefix)?;
        let rest = rest.strip_suffix(suffix)?;
        match mid {
            None => rest.parse::<f64>().ok().map(|v| vec![v]),
            Some(m) => {
                let pos = rest.find(m)?;
                let a = rest[..pos].parse::<f64>().ok()?;
                let b = rest[pos + m.len()..].parse::<f64>().ok()?;
                Some(vec![a, b])
            }
        }
    }
    if text == CriterionRule::Recovery.render_text() {
        return Some(CriterionRule::Recovery);
    }
    if text == CriterionRule::NoThrashing.render_text() {
        return Some(CriterionRule::NoThrashing);
    }
    if let Some(v) = capture(
        text,
        "Escalate to the LRM within ",
        Some(" steps of the first draft whose uncertainty exceeds "),
        ".",
    ) {
        return Some(CriterionRule::TimelyEscalation {
            window: v[0],
            threshold: v[1],
        });
    }
    if let Some(v) = capture(
        text,
        "Spend LRM calls only on steps whose draft uncertainty exceeds ",
        None,
        ".",
    ) {
        return Some(CriterionRule::CostEfficiency { threshold: v[0] });
    }
    if let Some(v) = capture(text, "Route drafts with uncertainty above ", None, " to the LRM.") {
        return Some(CriterionRule::HardStepCoverage { threshold: v[0] });
    }
    if let Some(v) = capture(
        text,
        "Keep drafts with uncertainty at or below ",
        None,
        " on the SRM.",
    ) {
        return Some(CriterionRule::EasyStepEconomy { threshold: v[0] });
    }
    None
}

/// One weighted routing-quality criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub rule: CriterionRule,
    /// Weight in [0, 1].
    pub weight: f64,
    /// Natural-language rendering (canonical for deterministic rules).
    pub text: String,
    /// Per-criterion score guidance used on the adapter path (the value a
    /// satisfied criterion contributes before weighting).
    #[serde(default = "default_guidance")]
    pub guidance_score: f64,
}

fn default_guidance() -> f64 {
    1.0
}

impl Criterion {
    pub fn new(rule: CriterionRule, weight: f64) -> Result<Self> {
        rule.validate()?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidArgument(format!(
                "criterion weight {weight} outside [0,1]"
            )));
        }
        let text = rule.render_text();
        Ok(Criterion {
            rule,
            weight,
            text,
            guidance_score: 1.0,
        })
    }
}

/// A weighted set of criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub criteria: Vec<Criterion>,
    /// Set only by the validation gate.
    #[serde(default)]
    pub validated: bool,
}

impl Rubric {
    pub fn new(criteria: Vec<Criterion>) -> Result<Self> {
        let total: f64 = criteria.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("rubric weights must sum above 0".into()));
        }
        Ok(Rubric {
            criteria,
            validated: false,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.criteria.iter().map(|c| c.weight).sum()
    }

    /// Direct weighted score: Σ wᵢ·vᵢ over deterministic criteria.
    pub fn score(&self, traj: &RoutingTrajectory) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.criteria {
            total += c.weight * score_criterion(c, traj)?;
        }
        Ok(total)
    }

    pub fn has_freeform(&self) -> bool {
        self.criteria.iter().any(|c| c.rule == CriterionRule::Freeform)
    }
}

/// The fixed three-criterion rubric used for judge warm-start and initial
/// process preferences: timely escalation, recovery, and cost efficiency
/// with uniform weights.
pub fn seed_rubric() -> Rubric {
    let w = 1.0 / 3.0;
    Rubric::new(vec![
        Criterion::new(
            CriterionRule::TimelyEscalation {
                threshold: 0.4,
                window: 2.0,
            },
            w,
        )
        .unwrap(),
        Criterion::new(CriterionRule::Recovery, w).unwrap(),
        Criterion::new(CriterionRule::CostEfficiency { threshold: 0.4 }, w).unwrap(),
    ])
    .unwrap()
}

/// Score one criterion on a trajectory; deterministic, in [0, 1].
///
/// All formulas read the average-entropy signal. "Draft uncertainty" is
/// what the router saw (the SRM draft); "step uncertainty" is the accepted
/// step's own signal.
pub fn score_criterion(c: &Criterion, traj: &RoutingTrajectory) -> Result<f64> {
    let n = traj.steps.len();
    let draft_u = |i: usize| traj.steps[i].draft_uncertainty.avg_entropy;
    let step_u = |i: usize| traj.steps[i].uncertainty.avg_entropy;
    let is_lrm = |i: usize| traj.steps[i].producer == Producer::LRM;

    let v = match &c.rule {
        CriterionRule::TimelyEscalation { threshold, window } => {
            let first_hard = (0..n).find(|&i| draft_u(i) > *threshold);
            match first_hard {
                None => 1.0,
                Some(f) => match (0..n).find(|&i| is_lrm(i)) {
                    None => 0.0,
                    Some(l) => {
                        let gap = (l as f64 - f as f64).max(0.0);
                        (-gap / window).exp()
                    }
                },
            }
        }
        CriterionRule::Recovery => {
            let eligible: Vec<usize> = (0..n).filter(|&i| is_lrm(i) && i + 1 < n).collect();
            if eligible.is_empty() {
                1.0
            } else {
                let recovered = eligible
                    .iter()
                    .filter(|&&i| step_u(i + 1) < draft_u(i))
                    .count();
                recovered as f64 / eligible.len() as f64
            }
        }
        CriterionRule::CostEfficiency { threshold } => {
            let lrm_calls: Vec<usize> = (0..n).filter(|&i| is_lrm(i)).collect();
            if lrm_calls.is_empty() {
                1.0
            } else {
                let justified = lrm_calls.iter().filter(|&&i| draft_u(i) > *threshold).count();
                justified as f64 / lrm_calls.len() as f64
            }
        }
        CriterionRule::NoThrashing => {
            if traj.actions.len() <= 1 {
                1.0
            } else {
                let switches = traj.switch_count()? as f64;
                1.0 - switches / (traj.actions.len() as f64 - 1.0)
            }
        }
        CriterionRule::HardStepCoverage { threshold } => {
            let hard: Vec<usize> = (0..n).filter(|&i| draft_u(i) > *threshold).collect();
            if hard.is_empty() {
                1.0
            } else {
                hard.iter().filter(|&&i| is_lrm(i)).count() as f64 / hard.len() as f64
            }
        }
        CriterionRule::EasyStepEconomy { threshold } => {
            let easy: Vec<usize> = (0..n).filter(|&i| draft_u(i) <= *threshold).collect();
            if easy.is_empty() {
                1.0
            } else {
                easy.iter().filter(|&&i| !is_lrm(i)).count() as f64 / easy.len() as f64
            }
        }
        CriterionRule::Freeform => {
            return Err(Error::Scoring(
                "freeform criterion requires an LLM judge adapter".into(),
            ))
        }
    };
    debug_assert!((0.0..=1.0 + 1e-12).contains(&v), "criterion score {v} out of range");
    Ok(v.clamp(0.0, 1.0))
}

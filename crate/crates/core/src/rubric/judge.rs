//! The parametric judge: a linear scorer over rubric-conditioned trajectory
//! features, trained with the Bradley–Terry pairwise objective.
//!
//! The feature vector has a fixed slot per criterion kind, zero-padded to
//! [`MAX_CRITERIA`] slots of (score, weight, score·weight), plus a bias:
//! 3·6 + 1 = 19 features. Freeform criteria have no slot and require the
//! LLM adapter instead.

use std::path::Path;

use crate::checkpoint::{Checkpoint, Section};
use crate::error::{Error, Result};
use crate::rubric::{score_criterion, Rubric};
use crate::types::RoutingTrajectory;

pub const MAX_CRITERIA: usize = 6;
pub const FEATURE_DIM: usize = 3 * MAX_CRITERIA + 1;

/// Linear judge over the rubric feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeModel {
    pub weights: Vec<f64>,
}

impl Default for JudgeModel {
    fn default() -> Self {
        JudgeModel {
            weights: vec![0.0; FEATURE_DIM],
        }
    }
}

/// Numerically stable softplus: ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl JudgeModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rubric-conditioned features of a trajectory.
    ///
    /// Slot order is fixed by the criterion-kind enum; a rubric may fill
    /// each slot at most once.
    pub fn features(rubric: &Rubric, traj: &RoutingTrajectory) -> Result<Vec<f64>> {
        let mut f = vec![0.0; FEATURE_DIM];
        let mut filled = [false; MAX_CRITERIA];
        for c in &rubric.criteria {
            let kind = c.rule.kind().ok_or_else(|| {
                Error::Scoring("parametric judge cannot score freeform criteria".into())
            })?;
            let slot = kind.slot();
            if filled[slot] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate criterion kind {} in rubric",
                    kind.name()
                )));
            }
            filled[slot] = true;
            let v = score_criterion(c, traj)?;
            f[3 * slot] = v;
            f[3 * slot + 1] = c.weight;
            f[3 * slot + 2] = v * c.weight;
        }
        f[FEATURE_DIM - 1] = 1.0;
        Ok(f)
    }

    /// Scalar judge score of a trajectory under a rubric.
    pub fn score(&self, rubric: &Rubric, traj: &RoutingTrajectory) -> Result<f64> {
        let f = Self::features(rubric, traj)?;
        Ok(dot(&self.weights, &f))
    }

    pub fn score_features(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features)
    }

    /// Bradley–Terry loss for one (preferred, dispreferred) pair:
    /// −log σ(s⁺ − s⁻).
    pub fn bt_pair_loss(
        &self,
        rubric: &Rubric,
        winner: &RoutingTrajectory,
        loser: &RoutingTrajectory,
    ) -> Result<f64> {
        let margin = self.score(rubric, winner)? - self.score(rubric, loser)?;
        Ok(softplus(-margin))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            sections: vec![Section::new(
                "weights",
                &[self.weights.len() as u64],
                self.weights.clone(),
            )],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let w = ckpt.section("weights")?;
        if w.data.len() != FEATURE_DIM {
            return Err(Error::Checkpoint(format!(
                "judge weights length {} != {FEATURE_DIM}",
                w.data.len()
            )));
        }
        Ok(JudgeModel {
            weights: w.data.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A training pair in feature space (both sides under the pair's rubric).
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
}

impl FeaturePair {
    pub fn build(
        rubric: &Rubric,
        winner: &RoutingTrajectory,
        loser: &RoutingTrajectory,
    ) -> Result<Self> {
        Ok(FeaturePair {
            winner: JudgeModel::features(rubric, winner)?,
            loser: JudgeModel::features(rubric, loser)?,
        })
    }
}

/// Mean BT loss over feature pairs.
pub fn mean_bt_loss(judge: &JudgeModel, pairs: &[FeaturePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("feature pairs"));
    }
    let total: f64 = pairs
        .iter()
        .map(|p| softplus(-(judge.score_features(&p.winner) - judge.score_features(&p.loser))))
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Fraction of pairs the judge ranks correctly (winner strictly above).
pub fn pair_accuracy(judge: &JudgeModel, pairs: &[FeaturePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|p| judge.score_features(&p.winner) > judge.score_features(&p.loser))
        .count();
    hits as f64 / pairs.len() as f64
}

/// Full-batch gradient descent on the mean BT loss. Returns the per-epoch
/// mean loss (measured before each epoch's update).
pub fn train_bt(
    judge: &mut JudgeModel,
    pairs: &[FeaturePair],
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("feature pairs"));
    }
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut grad = vec![0.0; FEATURE_DIM];
        let mut loss_sum = 0.0;
        for p in pairs {
            let margin = judge.score_features(&p.winner) - judge.score_features(&p.loser);
            loss_sum += softplus(-margin);
            // dL/dw = -σ(-margin)·(f⁺ - f⁻)
            let coeff = -sigmoid(-margin);
            for ((g, w), l) in grad.iter_mut().zip(&p.winner).zip(&p.loser) {
                *g += coeff * (w - l);
            }
        }
        let inv_n = 1.0 / pairs.len() as f64;
        let mean_loss = loss_sum * inv_n;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite("BT loss"));
        }
        curve.push(mean_loss);
        for (w, g) in judge.weights.iter_mut().zip(&grad) {
            *w -= lr * g * inv_n;
        }
    }
    Ok(curve)
}

/// Warm-start: train the judge under the fixed seed rubric on all pairs.
pub fn warm_start_judge(
    judge: &mut JudgeModel,
    pairs_by_query: &[(Rubric, Vec<(RoutingTrajectory, RoutingTrajectory)>)],
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    let mut feature_pairs = Vec::new();
    for (rubric, pairs) in pairs_by_query {
        for (winner, loser) in pairs {
            feature_pairs.push(FeaturePair::build(rubric, winner, loser)?);
        }
    }
    train_bt(judge, &feature_pairs, epochs, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubric::{seed_rubric, Criterion, CriterionRule};
    use crate::types::{Producer, ReasoningStep, RoutingAction, SignalValues};
    use approx::assert_relative_eq;

    fn sig(e: f64) -> SignalValues {
        SignalValues {
            avg_entropy: e,
            avg_confidence: (-e).exp(),
            avg_nll: e,
            first3_entropy: e,
        }
    }

    fn traj(specs: &[(RoutingAction, f64)]) -> RoutingTrajectory {
        let steps: Vec<ReasoningStep> = specs
            .iter()
            .map(|(a, e)| ReasoningStep {
                text: "s".into(),
                producer: match a {
                    RoutingAction::Continue => Producer::SRM,
                    RoutingAction::Regenerate => Producer::LRM,
                },
                token_count: 40,
                uncertainty: sig(*e),
                draft_uncertainty: sig(*e),
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
            actions: specs.iter().map(|(a, _)| *a).collect(),
            final_answer: None,
            outcome_correct: Some(true),
            srm_tokens: 40 * specs.len() as u64,
            lrm_tokens,
            source_policy: "fixture".into(),
        }
    }

    use RoutingAction::{Continue as C, Regenerate as R};

    #[test]
    fn zero_judge_scores_zero() {
        let judge = JudgeModel::new();
        let t = traj(&[(C, 0.1), (R, 0.8)]);
        assert_eq!(judge.score(&seed_rubric(), &t).unwrap(), 0.0);
    }

    #[test]
    fn indicator_on_vw_slots_sums_weighted_scores() {
        // All-ones v·w slots: score = Σ vᵢ·wᵢ. With unit criterion scores and
        // uniform 1/3 weights this is exactly 1.
        let mut judge = JudgeModel::new();
        for slot in 0..MAX_CRITERIA {
            judge.weights[3 * slot + 2] = 1.0;
        }
        // A trajectory scoring 1.0 on all three seed criteria: no hard
        // drafts (timely vacuous), no LRM (recovery and efficiency vacuous).
        let t = traj(&[(C, 0.1), (C, 0.1)]);
        let s = judge.score(&seed_rubric(), &t).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bt_loss_fixtures() {
        assert_relative_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(softplus(-0.5), 0.47407698418010663, epsilon = 1e-12);
        assert!(softplus(-20.0) < 2.1e-9 && softplus(-20.0) > 1.9e-9);
        // Equal scores -> ln 2 through the full pair path.
        let judge = JudgeModel::new();
        let t = traj(&[(C, 0.1)]);
        let loss = judge.bt_pair_loss(&seed_rubric(), &t, &t).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn bt_swap_identity() {
        // L(m) + L(-m) ≥ 2 ln 2, equality at m = 0.
        for m in [-3.0, -0.5, 0.0, 0.2, 4.0] {
            let sum = softplus(-m) + softplus(m);
            assert!(sum >= 2.0 * std::f64::consts::LN_2 - 1e-12);
            if m == 0.0 {
                assert_relative_eq!(sum, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn margin_shift_invariance() {
        // Adding a constant to both scores (via the bias weight) leaves the
        // loss unchanged.
        let mut judge = JudgeModel::new();
        judge.weights[0] = 0.7;
        let good = traj(&[(C, 0.1), (C, 0.1)]);
        let bad = traj(&[(C, 0.9), (C, 0.9)]);
        let rubric = seed_rubric();
        let before = judge.bt_pair_loss(&rubric, &good, &bad).unwrap();
        judge.weights[FEATURE_DIM - 1] += 10.0;
        let after = judge.bt_pair_loss(&rubric, &good, &bad).unwrap();
        assert_relative_eq!(before, after, epsilon = 1e-12);
    }

    #[test]
    fn single_pair_gradient_step_matches_hand_formula() {
        let rubric = seed_rubric();
        let winner = traj(&[(C, 0.1), (C, 0.1)]);
        let loser = traj(&[(C, 0.9), (C, 0.9)]);
        let fp = FeaturePair::build(&rubric, &winner, &loser).unwrap();
        let mut judge = JudgeModel::new();
        let lr = 0.3;
        train_bt(&mut judge, std::slice::from_ref(&fp), 1, lr).unwrap();
        // At zero weights margin = 0: expected update +lr·σ(0)·(f⁺−f⁻).
        for ((w, fw), fl) in judge.weights.iter().zip(&fp.winner).zip(&fp.loser) {
            let expected = lr * 0.5 * (fw - fl);
            assert_relative_eq!(*w, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let rubric = seed_rubric();
        let fp = FeaturePair::build(&rubric, &traj(&[(C, 0.1)]), &traj(&[(C, 0.9)])).unwrap();
        let mut judge = JudgeModel::new();
        judge.weights[2] = 0.4;
        let before = judge.weights.clone();
        train_bt(&mut judge, &[fp], 5, 0.0).unwrap();
        assert_eq!(judge.weights, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut judge = JudgeModel::new();
        judge.weights.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 * 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judge.ckpt");
        judge.save(&path).unwrap();
        assert_eq!(JudgeModel::load(&path).unwrap(), judge);
    }
}

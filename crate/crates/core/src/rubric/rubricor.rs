//! The parametric rubricor: a factorized categorical distribution over
//! rubrics with exact log-probabilities and analytic policy gradients.
//!
//! A rubric is sampled as (criterion count) → (distinct kind set, drawn
//! sequentially without replacement) → (per-kind parameter grid point),
//! with uniform weights 1/m. The reported log-probability is that of the
//! unordered kind set (summed over draw orders), so it matches exhaustive
//! enumeration of the sample space.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::RngCore;

use crate::checkpoint::{Checkpoint, Section};
use crate::error::{Error, Result};
use crate::rubric::{Criterion, CriterionKind, CriterionRule, Rubric};

const N_KINDS: usize = CriterionKind::ALL.len();

/// Default threshold grid shared by the threshold-parameterized kinds. The
/// extreme points produce near-constant criterion scores on typical worlds,
/// giving the validation gate something to reject early in training.
pub const THRESHOLD_GRID: [f64; 5] = [0.1, 0.25, 0.4, 0.6, 1.5];
/// Default escalation windows.
pub const WINDOW_GRID: [f64; 3] = [1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RubricorModel {
    pub min_criteria: usize,
    pub max_criteria: usize,
    /// Logits over criterion counts `min..=max`.
    pub count_logits: Vec<f64>,
    /// Logits over criterion kinds, in `CriterionKind::ALL` order.
    pub kind_logits: Vec<f64>,
    /// Parameter grid per kind.
    pub grids: Vec<Vec<CriterionRule>>,
    /// Logits per kind over its grid.
    pub param_logits: Vec<Vec<f64>>,
}

/// Gradient of a rubric's log-probability, in logit shapes.
#[derive(Debug, Clone)]
pub struct RubricorGrad {
    pub count: Vec<f64>,
    pub kind: Vec<f64>,
    pub param: Vec<Vec<f64>>,
}

impl RubricorGrad {
    fn zeros(model: &RubricorModel) -> Self {
        RubricorGrad {
            count: vec![0.0; model.count_logits.len()],
            kind: vec![0.0; N_KINDS],
            param: model.param_logits.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &RubricorGrad, scale: f64) {
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += scale * b;
        }
        for (a, b) in self.kind.iter_mut().zip(&other.kind) {
            *a += scale * b;
        }
        for (av, bv) in self.param.iter_mut().zip(&other.param) {
            for (a, b) in av.iter_mut().zip(bv) {
                *a += scale * b;
            }
        }
    }
}

fn default_grid(kind: CriterionKind) -> Vec<CriterionRule> {
    match kind {
        CriterionKind::TimelyEscalation => {
            let mut out = Vec::new();
            for &threshold in &THRESHOLD_GRID {
                for &window in &WINDOW_GRID {
                    out.push(CriterionRule::TimelyEscalation { threshold, window });
                }
            }
            out
        }
        CriterionKind::Recovery => vec![CriterionRule::Recovery],
        CriterionKind::CostEfficiency => THRESHOLD_GRID
            .iter()
            .map(|&threshold| CriterionRule::CostEfficiency { threshold })
            .collect(),
        CriterionKind::NoThrashing => vec![CriterionRule::NoThrashing],
        CriterionKind::HardStepCoverage => THRESHOLD_GRID
            .iter()
            .map(|&threshold| CriterionRule::HardStepCoverage { threshold })
            .collect(),
        CriterionKind::EasyStepEconomy => THRESHOLD_GRID
            .iter()
            .map(|&threshold| CriterionRule::EasyStepEconomy { threshold })
            .collect(),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Default for RubricorModel {
    fn default() -> Self {
        Self::uniform(2, 5)
    }
}

impl RubricorModel {
    /// Uniform distribution over the whole rubric space.
    pub fn uniform(min_criteria: usize, max_criteria: usize) -> Self {
        let grids: Vec<Vec<CriterionRule>> =
            CriterionKind::ALL.iter().map(|&k| default_grid(k)).collect();
        let param_logits = grids.iter().map(|g| vec![0.0; g.len()]).collect();
        RubricorModel {
            min_criteria,
            max_criteria,
            count_logits: vec![0.0; max_criteria - min_criteria + 1],
            kind_logits: vec![0.0; N_KINDS],
            grids,
            param_logits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_criteria == 0
            || self.max_criteria < self.min_criteria
            || self.max_criteria > N_KINDS
        {
            return Err(Error::InvalidArgument(format!(
                "bad criterion count range {}..={}",
                self.min_criteria, self.max_criteria
            )));
        }
        if self.count_logits.len() != self.max_criteria - self.min_criteria + 1 {
            return Err(Error::InvalidArgument("count_logits length mismatch".into()));
        }
        if self.kind_logits.len() != N_KINDS || self.grids.len() != N_KINDS {
            return Err(Error::InvalidArgument("kind tables length mismatch".into()));
        }
        for (g, l) in self.grids.iter().zip(&self.param_logits) {
            if g.is_empty() || g.len() != l.len() {
                return Err(Error::InvalidArgument("param grid/logits mismatch".into()));
            }
        }
        Ok(())
    }

    /// Sample one rubric with its exact (set-level) log-probability.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Result<(Rubric, f64)> {
        self.validate()?;
        let count_probs = softmax(&self.count_logits);
        let m = self.min_criteria
            + WeightedIndex::new(&count_probs)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(rng);

        // Distinct kinds, drawn sequentially without replacement.
        let kind_probs = softmax(&self.kind_logits);
        let mut available: Vec<usize> = (0..N_KINDS).collect();
        let mut chosen_kinds = Vec::with_capacity(m);
        for _ in 0..m {
            let weights: Vec<f64> = available.iter().map(|&k| kind_probs[k]).collect();
            let idx = WeightedIndex::new(&weights)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(rng);
            chosen_kinds.push(available.remove(idx));
        }
        chosen_kinds.sort_unstable();

        let weight = 1.0 / m as f64;
        let mut criteria = Vec::with_capacity(m);
        for &k in &chosen_kinds {
            let probs = softmax(&self.param_logits[k]);
            let gi = WeightedIndex::new(&probs)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(rng);
            criteria.push(Criterion::new(self.grids[k][gi].clone(), weight)?);
        }
        let rubric = Rubric::new(criteria)?;
        let log_prob = self.log_prob_of(&rubric)?;
        Ok((rubric, log_prob))
    }

    fn locate(&self, rubric: &Rubric) -> Result<(usize, Vec<(usize, usize)>)> {
        let m = rubric.criteria.len();
        if m < self.min_criteria || m > self.max_criteria {
            return Err(Error::InvalidArgument(format!(
                "rubric size {m} outside {}..={}",
                self.min_criteria, self.max_criteria
            )));
        }
        let mut picks = Vec::with_capacity(m);
        for c in &rubric.criteria {
            let kind = c
                .rule
                .kind()
                .ok_or_else(|| Error::InvalidArgument("freeform rubric has no density".into()))?;
            let k = kind.slot();
            let gi = self.grids[k]
                .iter()
                .position(|r| *r == c.rule)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("criterion {:?} not on the grid", c.rule))
                })?;
            picks.push((k, gi));
        }
        let mut kinds: Vec<usize> = picks.iter().map(|(k, _)| *k).collect();
        kinds.sort_unstable();
        kinds.dedup();
        if kinds.len() != m {
            return Err(Error::InvalidArgument("duplicate kinds in rubric".into()));
        }
        Ok((m, picks))
    }

    /// Exact log-probability of a rubric under this model.
    pub fn log_prob_of(&self, rubric: &Rubric) -> Result<f64> {
        let (m, picks) = self.locate(rubric)?;
        let count_probs = softmax(&self.count_logits);
        let mut lp = count_probs[m - self.min_criteria].ln();
        lp += self.log_set_prob(&picks.iter().map(|(k, _)| *k).collect::<Vec<_>>());
        for (k, gi) in &picks {
            let probs = softmax(&self.param_logits[*k]);
            lp += probs[*gi].ln();
        }
        Ok(lp)
    }

    /// log P(kind set) = log Σ over draw orders of the sequential
    /// without-replacement probabilities.
    fn log_set_prob(&self, kinds: &[usize]) -> f64 {
        let probs = softmax(&self.kind_logits);
        let mut terms = Vec::new();
        permute(kinds, &mut |order| {
            let mut lp = 0.0;
            let mut remaining: f64 = 1.0;
            for &k in order {
                lp += (probs[k] / remaining).ln();
                remaining -= probs[k];
            }
            terms.push(lp);
        });
        log_sum_exp(&terms)
    }

    /// Analytic gradient of `log P(rubric)` with respect to every logit.
    pub fn grad_log_prob(&self, rubric: &Rubric) -> Result<RubricorGrad> {
        let (m, picks) = self.locate(rubric)?;
        let mut grad = RubricorGrad::zeros(self);

        // Count factor.
        let count_probs = softmax(&self.count_logits);
        for (i, p) in count_probs.iter().enumerate() {
            grad.count[i] = (if i == m - self.min_criteria { 1.0 } else { 0.0 }) - p;
        }

        // Parameter factors.
        for (k, gi) in &picks {
            let probs = softmax(&self.param_logits[*k]);
            for (i, p) in probs.iter().enumerate() {
                grad.param[*k][i] = (if i == *gi { 1.0 } else { 0.0 }) - p;
            }
        }

        // Kind-set factor: softmax-weighted mixture of per-order gradients.
        let probs = softmax(&self.kind_logits);
        let kinds: Vec<usize> = picks.iter().map(|(k, _)| *k).collect();
        let mut order_lps: Vec<f64> = Vec::new();
        let mut order_grads: Vec<Vec<f64>> = Vec::new();
        permute(&kinds, &mut |order| {
            let mut lp = 0.0;
            let mut g = vec![0.0; N_KINDS];
            let mut available: Vec<usize> = (0..N_KINDS).collect();
            for &k in order {
                let z: f64 = available.iter().map(|&v| probs[v]).sum();
                lp += (probs[k] / z).ln();
                // d/dℓ_u [ℓ_k − log Σ_{v∈A} e^{ℓ_v}] = δ_{uk} − q(u|A)
                for &u in &available {
                    let q = probs[u] / z;
                    g[u] += (if u == k { 1.0 } else { 0.0 }) - q;
                }
                available.retain(|&v| v != k);
            }
            order_lps.push(lp);
            order_grads.push(g);
        });
        let total_lp = log_sum_exp(&order_lps);
        for (lp, g) in order_lps.iter().zip(&order_grads) {
            let w = (lp - total_lp).exp();
            for (acc, gi) in grad.kind.iter_mut().zip(g) {
                *acc += w * gi;
            }
        }
        Ok(grad)
    }

    /// One policy-gradient ascent step on `mean (ρ − b)·∇log P(rubric)`,
    /// where `b` is the mean reward of the batch.
    pub fn update(&mut self, samples: &[(Rubric, f64)], lr: f64) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("rubricor samples"));
        }
        let baseline = samples.iter().map(|(_, r)| r).sum::<f64>() / samples.len() as f64;
        let mut total = RubricorGrad::zeros(self);
        for (rubric, rho) in samples {
            let g = self.grad_log_prob(rubric)?;
            total.add_scaled(&g, rho - baseline);
        }
        let scale = lr / samples.len() as f64;
        for (l, g) in self.count_logits.iter_mut().zip(&total.count) {
            *l += scale * g;
        }
        for (l, g) in self.kind_logits.iter_mut().zip(&total.kind) {
            *l += scale * g;
        }
        for (lv, gv) in self.param_logits.iter_mut().zip(&total.param) {
            for (l, g) in lv.iter_mut().zip(gv) {
                *l += scale * g;
            }
        }
        Ok(())
    }

    /// Enumerate the entire rubric space with probabilities (test oracle;
    /// exponential in the grid sizes, intended for small fixtures).
    pub fn enumerate_all(&self) -> Result<Vec<(Rubric, f64)>> {
        self.validate()?;
        let mut out = Vec::new();
        for m in self.min_criteria..=self.max_criteria {
            let mut subset = Vec::new();
            enumerate_subsets(N_KINDS, m, 0, &mut subset, &mut |kinds| {
                let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
                for &k in kinds {
                    let mut next = Vec::new();
                    for combo in &combos {
                        for gi in 0..self.grids[k].len() {
                            let mut c = combo.clone();
                            c.push((k, gi));
                            next.push(c);
                        }
                    }
                    combos = next;
                }
                for combo in combos {
                    let weight = 1.0 / m as f64;
                    let criteria: Vec<Criterion> = combo
                        .iter()
                        .map(|(k, gi)| {
                            Criterion::new(self.grids[*k][*gi].clone(), weight).unwrap()
                        })
                        .collect();
                    let rubric = Rubric::new(criteria).unwrap();
                    let p = self.log_prob_of(&rubric).unwrap().exp();
                    out.push((rubric, p));
                }
            });
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut sections = vec![
            Section::new(
                "meta",
                &[2],
                vec![self.min_criteria as f64, self.max_criteria as f64],
            ),
            Section::new("count_logits", &[self.count_logits.len() as u64], self.count_logits.clone()),
            Section::new("kind_logits", &[N_KINDS as u64], self.kind_logits.clone()),
        ];
        for (k, (grid, logits)) in self.grids.iter().zip(&self.param_logits).enumerate() {
            // Grid entries stored as (threshold, window) pairs; kinds
            // without a parameter store zeros.
            let mut vals = Vec::with_capacity(grid.len() * 2);
            for rule in grid {
                let (t, w) = match rule {
                    CriterionRule::TimelyEscalation { threshold, window } => (*threshold, *window),
                    CriterionRule::CostEfficiency { threshold }
                    | CriterionRule::HardStepCoverage { threshold }
                    | CriterionRule::EasyStepEconomy { threshold } => (*threshold, 0.0),
                    _ => (0.0, 0.0),
                };
                vals.push(t);
                vals.push(w);
            }
            sections.push(Section::new(&format!("grid_{k}"), &[grid.len() as u64, 2], vals));
            sections.push(Section::new(
                &format!("param_logits_{k}"),
                &[logits.len() as u64],
                logits.clone(),
            ));
        }
        Checkpoint { sections }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt.section("meta")?;
        let min_criteria = meta.data[0] as usize;
        let max_criteria = meta.data[1] as usize;
        let count_logits = ckpt.section("count_logits")?.data.clone();
        let kind_logits = ckpt.section("kind_logits")?.data.clone();
        let mut grids = Vec::with_capacity(N_KINDS);
        let mut param_logits = Vec::with_capacity(N_KINDS);
        for (k, &kind) in CriterionKind::ALL.iter().enumerate() {
            let grid_sec = ckpt.section(&format!("grid_{k}"))?;
            let n = grid_sec.dims[0] as usize;
            let mut grid = Vec::with_capacity(n);
            for i in 0..n {
                let threshold = grid_sec.data[2 * i];
                let window = grid_sec.data[2 * i + 1];
                grid.push(match kind {
                    CriterionKind::TimelyEscalation => {
                        CriterionRule::TimelyEscalation { threshold, window }
                    }
                    CriterionKind::Recovery => CriterionRule::Recovery,
                    CriterionKind::CostEfficiency => CriterionRule::CostEfficiency { threshold },
                    CriterionKind::NoThrashing => CriterionRule::NoThrashing,
                    CriterionKind::HardStepCoverage => {
                        CriterionRule::HardStepCoverage { threshold }
                    }
                    CriterionKind::EasyStepEconomy => CriterionRule::EasyStepEconomy { threshold },
                });
            }
            grids.push(grid);
            param_logits.push(ckpt.section(&format!("param_logits_{k}"))?.data.clone());
        }
        let model = RubricorModel {
            min_criteria,
            max_criteria,
            count_logits,
            kind_logits,
            grids,
            param_logits,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn permute(items: &[usize], visit: &mut impl FnMut(&[usize])) {
    let mut buf = items.to_vec();
    permute_inner(&mut buf, 0, visit);
}

fn permute_inner(buf: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == buf.len() {
        visit(buf);
        return;
    }
    for i in start..buf.len() {
        buf.swap(start, i);
        permute_inner(buf, start + 1, visit);
        buf.swap(start, i);
    }
}

fn enumerate_subsets(
    n: usize,
    m: usize,
    start: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if current.len() == m {
        visit(current);
        return;
    }
    for k in start..n {
        current.push(k);
        enumerate_subsets(n, m, k + 1, current, visit);
        current.pop();
    }
}

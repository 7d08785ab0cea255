//! Simulated backend over the synthetic world.
//!
//! Drafts are a pure function of (spec, context, rng stream): the draw order
//! per draft is fixed (correctness bit first, then the four signal noises),
//! so identical streams replay byte-identical drafts.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use crate::backends::{Backend, BackendSpec, GenerationContext, StepDraft};
use crate::error::{Error, Result};
use crate::synthworld::{SyntheticQuery, WorldConfig};
use crate::types::{Origin, Producer};

pub struct SimulatedBackend {
    spec: BackendSpec,
    world: WorldConfig,
    difficulties: HashMap<String, Vec<f64>>,
}

impl SimulatedBackend {
    pub fn new(spec: BackendSpec, world: WorldConfig, dataset: &[SyntheticQuery]) -> Result<Self> {
        spec.validate()?;
        world.validate()?;
        let difficulties = dataset
            .iter()
            .map(|q| (q.record.id.clone(), q.step_difficulties.clone()))
            .collect();
        Ok(SimulatedBackend {
            spec,
            world,
            difficulties,
        })
    }

    pub fn role(&self) -> Producer {
        self.spec.role
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }
}

impl Backend for SimulatedBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn draft_step(&self, ctx: &GenerationContext<'_>, rng: &mut dyn RngCore) -> Result<StepDraft> {
        ctx.validate()?;
        if ctx.query.origin != Origin::Synthetic {
            return Err(Error::InvalidArgument(
                "simulated backend requires synthetic queries".into(),
            ));
        }
        let difficulties = self.difficulties.get(&ctx.query.id).ok_or_else(|| {
            Error::InvalidArgument(format!("query {} not in the simulated world", ctx.query.id))
        })?;
        let n = difficulties.len();
        let idx = ctx.step_index.min(n).saturating_sub(1);
        let d = difficulties[idx];
        let role = self.spec.role;

        let p = self.world.step_success(d, role);
        let latent_correct = rng.random::<f64>() < p;
        let uncertainty = self.world.signals_for(d, role, rng);

        let role_tag = match role {
            Producer::SRM => "srm",
            Producer::LRM => "lrm",
        };
        let is_final = ctx.step_index >= n;
        let text = if is_final {
            format!(
                "[{role_tag}] step {} of {} for {}\nFinal Answer: pending",
                ctx.step_index, n, ctx.query.id
            )
        } else {
            format!("[{role_tag}] step {} of {} for {}", ctx.step_index, n, ctx.query.id)
        };

        Ok(StepDraft {
            text,
            token_count: self.world.tokens_per_step(role),
            uncertainty,
            latent_correct: Some(latent_correct),
            is_final,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::synthworld::{generate_dataset, DifficultySpec};

    fn world_and_dataset(difficulty: DifficultySpec) -> (WorldConfig, Vec<SyntheticQuery>) {
        let cfg = WorldConfig {
            difficulty,
            min_steps: 3,
            max_steps: 3,
            ..WorldConfig::default()
        };
        let ds = generate_dataset(&cfg, 4, 7).unwrap();
        (cfg, ds)
    }

    #[test]
    fn zero_difficulty_always_correct() {
        let (cfg, ds) = world_and_dataset(DifficultySpec::PointMass { value: 0.0 });
        let backend =
            SimulatedBackend::new(BackendSpec::simulated(Producer::SRM, 1.7e9), cfg, &ds).unwrap();
        let mut rng = derive_rng(42, &["t"]);
        for q in &ds {
            let ctx = GenerationContext::new(&q.record, &[]);
            let draft = backend.draft_step(&ctx, &mut rng).unwrap();
            assert_eq!(draft.latent_correct, Some(true));
            assert!(draft.uncertainty.is_finite());
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let (cfg, ds) = world_and_dataset(DifficultySpec::Uniform { lo: 0.0, hi: 1.0 });
        let backend =
            SimulatedBackend::new(BackendSpec::simulated(Producer::LRM, 14e9), cfg, &ds).unwrap();
        let ctx = GenerationContext::new(&ds[0].record, &[]);
        let mut rng_a = derive_rng(42, &["draft", "q"]);
        let mut rng_b = derive_rng(42, &["draft", "q"]);
        let a = backend.draft_step(&ctx, &mut rng_a).unwrap();
        let b = backend.draft_step(&ctx, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn signals_within_ranges() {
        let (cfg, ds) = world_and_dataset(DifficultySpec::Uniform { lo: 0.0, hi: 1.0 });
        let backend =
            SimulatedBackend::new(BackendSpec::simulated(Producer::SRM, 1.7e9), cfg, &ds).unwrap();
        let mut rng = derive_rng(1, &["ranges"]);
        for q in &ds {
            let ctx = GenerationContext::new(&q.record, &[]);
            let d = backend.draft_step(&ctx, &mut rng).unwrap();
            let u = d.uncertainty;
            assert!(u.avg_entropy >= 0.0 && u.avg_entropy <= 2.0);
            assert!(u.avg_confidence > 0.0 && u.avg_confidence <= 1.0);
            assert!(u.avg_nll >= 0.0);
            assert!(u.first3_entropy >= 0.0);
        }
    }

    #[test]
    fn final_step_flagged() {
        let (cfg, ds) = world_and_dataset(DifficultySpec::PointMass { value: 0.1 });
        let backend =
            SimulatedBackend::new(BackendSpec::simulated(Producer::SRM, 1.7e9), cfg, &ds).unwrap();
        let q = &ds[0];
        let mut rng = derive_rng(9, &["final"]);
        let mut accepted = Vec::new();
        for step in 1..=3usize {
            let ctx = GenerationContext {
                query: &q.record,
                accepted_steps: &accepted,
                step_index: step,
            };
            let draft = backend.draft_step(&ctx, &mut rng).unwrap();
            assert_eq!(draft.is_final, step == 3);
            accepted.push(crate::types::ReasoningStep {
                text: draft.text.clone(),
                producer: Producer::SRM,
                token_count: draft.token_count,
                uncertainty: draft.uncertainty,
                draft_uncertainty: draft.uncertainty,
            });
        }
    }
}

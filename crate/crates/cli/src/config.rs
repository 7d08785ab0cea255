//! Run configuration: one JSON file covering every pipeline stage, with
//! command-line flags taking precedence over file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use steproute::backends::BackendSpec;
use steproute::gate::GateConfig;
use steproute::grpo::GrpoConfig;
use steproute::routing::EngineLimits;
use steproute::rubric::alternate::AlternateConfig;
use steproute::synthworld::WorldConfig;
use steproute::types::{Producer, SignalKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub train_size: usize,
    pub heldout_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_size: 200,
            heldout_size: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub srm: BackendSpec,
    pub lrm: BackendSpec,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig {
            srm: BackendSpec::simulated(Producer::SRM, 1.7e9),
            lrm: BackendSpec::simulated(Producer::LRM, 14e9),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub per_policy_count: usize,
    pub random_p: f64,
    pub entropy_threshold: f64,
    pub confidence_threshold: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            per_policy_count: 1,
            random_p: 0.5,
            entropy_threshold: 0.4,
            confidence_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub cost_sim_tol: f64,
    pub score_gap_min: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            cost_sim_tol: 0.15,
            score_gap_min: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmJudgeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for WarmJudgeConfig {
    fn default() -> Self {
        WarmJudgeConfig {
            epochs: 200,
            lr: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub budgets: Vec<f64>,
    /// Entropy range mapped onto the unit sweep grid for the entropy
    /// baseline.
    pub entropy_scale: f64,
    /// Use exact expected accuracy on synthetic datasets instead of the
    /// realized outcome draw.
    pub expected_accuracy: bool,
    pub srm_ms_per_step: f64,
    pub lrm_ms_per_step: f64,
    /// Persist measured wall-clock times in sweep artifacts (off keeps
    /// reruns byte-identical).
    pub record_wall_time: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            budgets: vec![20.0, 40.0, 60.0],
            entropy_scale: 2.0,
            expected_accuracy: true,
            srm_ms_per_step: 1.0,
            lrm_ms_per_step: 10.0,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// 0 uses available parallelism.
    pub workers: usize,
    pub world: WorldConfig,
    pub dataset: DatasetConfig,
    pub backends: BackendsConfig,
    pub limits: EngineLimits,
    pub signal: SignalKind,
    pub collect: CollectConfig,
    pub pairs: PairConfig,
    pub warm_judge: WarmJudgeConfig,
    pub alternate: AlternateConfig,
    pub gate: GateConfig,
    pub grpo: GrpoConfig,
    pub eval: EvalConfig,
    /// Curve-probe cadence for train-router (0 disables probing).
    pub probe_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,
            world: WorldConfig::default(),
            dataset: DatasetConfig::default(),
            backends: BackendsConfig::default(),
            limits: EngineLimits::default(),
            signal: SignalKind::AvgEntropy,
            collect: CollectConfig::default(),
            pairs: PairConfig::default(),
            warm_judge: WarmJudgeConfig::default(),
            alternate: AlternateConfig::default(),
            gate: GateConfig::default(),
            grpo: GrpoConfig {
                // Keep the sampled policy from saturating during training;
                // zero recovers the pure clipped surrogate.
                entropy_coef: 0.02,
                ..GrpoConfig::default()
            },
            eval: EvalConfig::default(),
            probe_every: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                Ok(serde_json::from_str(&text)
                    .map_err(|e| anyhow::anyhow!("bad config {}: {e}", p.display()))?)
            }
        }
    }

    pub fn effective_workers(&self) -> usize {
        if self.workers == 0 {
            steproute::parallel::default_workers()
        } else {
            self.workers
        }
    }

    /// Hash of the effective configuration, recorded in manifests.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        steproute::io::hex_digest(&canonical)
    }
}

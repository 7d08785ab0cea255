//! Inference-cost model: 2N FLOPs per generated token for a model with N
//! parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RoutingTrajectory;

/// Parameter counts of the two models, used to convert token counts to FLOPs.
///
/// Stored as reals: parameter counts exceed 32-bit range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlopsModel {
    pub srm_params: f64,
    pub lrm_params: f64,
}

impl FlopsModel {
    pub fn new(srm_params: f64, lrm_params: f64) -> Result<Self> {
        if !(srm_params > 0.0 && lrm_params > 0.0) {
            return Err(Error::InvalidArgument(
                "parameter counts must be positive".into(),
            ));
        }
        if lrm_params <= srm_params {
            return Err(Error::InvalidArgument(
                "lrm_params must exceed srm_params".into(),
            ));
        }
        Ok(FlopsModel {
            srm_params,
            lrm_params,
        })
    }

    /// Total FLOPs of a trajectory: `2·srm_params·srm_tokens + 2·lrm_params·lrm_tokens`.
    pub fn flops_of_trajectory(&self, traj: &RoutingTrajectory) -> f64 {
        self.flops_of_tokens(traj.srm_tokens, traj.lrm_tokens)
    }

    pub fn flops_of_tokens(&self, srm_tokens: u64, lrm_tokens: u64) -> f64 {
        2.0 * self.srm_params * srm_tokens as f64 + 2.0 * self.lrm_params * lrm_tokens as f64
    }
}

/// Default model pair used throughout: a 1.7e9-parameter SRM and a
/// 14e9-parameter LRM.
impl Default for FlopsModel {
    fn default() -> Self {
        FlopsModel {
            srm_params: 1.7e9,
            lrm_params: 14e9,
        }
    }
}

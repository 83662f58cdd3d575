//! Transformer neural processes, the CNP baseline, and a common wrapper over both.

mod cnp;
mod config;
mod embed;
mod predict;
mod tnp;

use rand_chacha::ChaCha8Rng;

pub use cnp::Cnp;
pub use config::{CnpConfig, CovarianceHead, ModelConfig, Variant};
pub use embed::{embed_sequence, TokenSequence};
pub use predict::{log_likelihood_diag, log_likelihood_joint, DiagonalPrediction, JointGaussianPrediction};
pub use tnp::{Tnp, CHOLESKY_EPS, MAX_JITTER};

#[allow(unused_imports)]
pub(crate) use tnp::{log_sum_exp, permutation_set};

use crate::error::{Result, TnpError};
use crate::io::config::KvConfig;
use crate::nn::ParamStore;
use crate::tasks::TaskBatch;
use crate::tensor::Tensor;

/// Bounds applied to predicted log standard deviations.
pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 6.0;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Targets given the context.
    Meta,
    /// Every point given the points before it, with no context (autoregressive decoder only).
    Pretrain,
}

impl std::str::FromStr for Objective {
    type Err = TnpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meta" => Ok(Self::Meta),
            "pretrain" => Ok(Self::Pretrain),
            other => Err(TnpError::Config(format!("unknown objective '{other}'"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Meta => "meta",
            Self::Pretrain => "pretrain",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Tnp(Tnp),
    Cnp(Cnp),
}

impl Model {
    /// Builds a freshly initialized model from a config whose `variant` is `a`, `d`, `nd` or
    /// `cnp`.
    pub fn from_kv(kv: &KvConfig, seed: u64) -> Result<Self> {
        match kv.raw("variant") {
            Some("cnp") => Ok(Self::Cnp(Cnp::new(CnpConfig::from_kv(kv)?, seed)?)),
            _ => Ok(Self::Tnp(Tnp::new(ModelConfig::from_kv(kv)?, seed)?)),
        }
    }

    pub fn config_kv(&self) -> KvConfig {
        match self {
            Self::Tnp(m) => m.config().to_kv(),
            Self::Cnp(m) => m.config().to_kv(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Tnp(m) => format!("tnp-{}", m.variant()),
            Self::Cnp(_) => "cnp".into(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Tnp(m) => (m.config().dim_x, m.config().dim_y),
            Self::Cnp(m) => (m.config().dim_x, m.config().dim_y),
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            Self::Tnp(m) => Some(m.variant()),
            Self::Cnp(_) => None,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Self::Tnp(m) => m.store(),
            Self::Cnp(m) => m.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::Tnp(m) => m.store_mut(),
            Self::Cnp(m) => m.store_mut(),
        }
    }

    pub fn loss(&self, batch: &TaskBatch, objective: Objective) -> Result<f64> {
        match self {
            Self::Tnp(m) => m.loss(batch, objective),
            Self::Cnp(m) => {
                cnp_objective(objective)?;
                m.loss(batch)
            }
        }
    }

    pub fn loss_and_grad(
        &self,
        batch: &TaskBatch,
        objective: Objective,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        match self {
            Self::Tnp(m) => m.loss_and_grad(batch, objective, dropout_rng),
            Self::Cnp(m) => {
                cnp_objective(objective)?;
                m.loss_and_grad(batch)
            }
        }
    }

    /// Per-target marginal Gaussians.
    pub fn predict_marginals(&self, batch: &TaskBatch) -> Result<DiagonalPrediction> {
        match self {
            Self::Tnp(m) => m.predict_marginals(batch),
            Self::Cnp(m) => m.predict(batch),
        }
    }

    pub fn as_tnp(&self) -> Option<&Tnp> {
        match self {
            Self::Tnp(m) => Some(m),
            Self::Cnp(_) => None,
        }
    }
}

fn cnp_objective(objective: Objective) -> Result<()> {
    if objective != Objective::Meta {
        return Err(TnpError::Config("the CNP baseline only supports the meta objective".into()));
    }
    Ok(())
}

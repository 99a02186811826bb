//! ε-predictors.
//!
//! Two interchangeable implementations of [`EpsModel`]:
//! [`AnalyticDenoiser`] computes the exact noise prediction for
//! Gaussian-mixture data, [`DenoiserNet`] is a small MLP trained on the
//! conditional denoising objective.

mod mixture;
mod net;
mod train;

pub use mixture::{condition_weights, AnalyticDenoiser, ArchetypeMixture};
pub use net::{Checkpoint, DenoiserNet, Gradients, NetShape, TrainExample};
pub use train::{smoothed, train, AdamState, TrainHyper, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Latent;

/// The conditioning vector `c`. The null condition is all zeros with
/// `is_null` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    values: Vec<f64>,
    is_null: bool,
}

impl ConditionEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("condition embedding has non-finite entries".into()));
        }
        Ok(ConditionEmbedding { values, is_null: false })
    }

    pub fn null(dim: usize) -> Self {
        ConditionEmbedding { values: vec![0.0; dim], is_null: true }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }
}

/// Anything that predicts the noise in `z_t`.
///
/// Implementations must be pure: identical inputs give bit-identical outputs.
pub trait EpsModel: Sync {
    fn latent_dim(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// Predicts ε for a batch of latents that all sit at timestep `t`.
    fn predict_batch(&self, z_t: &[Latent], t: usize, conds: &[ConditionEmbedding]) -> Result<Vec<Latent>>;

    fn predict(&self, z_t: &Latent, t: usize, cond: &ConditionEmbedding) -> Result<Latent> {
        let mut out = self.predict_batch(std::slice::from_ref(z_t), t, std::slice::from_ref(cond))?;
        Ok(out.pop().expect("batch of one"))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

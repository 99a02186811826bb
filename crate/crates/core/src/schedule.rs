//! Noise schedule and closed-form quantities of the forward diffusion process.
//!
//! Arrays are indexed by timestep with `t = 0` denoting the clean sample:
//! `alpha_bar(0) == 1`, so diffusing to `t = 0` is the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A latent code for one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(values: Vec<f64>) -> Self {
        Latent(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Latent(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &Latent) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl From<Vec<f64>> for Latent {
    fn from(v: Vec<f64>) -> Self {
        Latent(v)
    }
}

impl std::ops::Index<usize> for Latent {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Parameters that fully determine a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

/// Precomputed per-timestep constants. Immutable once built.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    // index 0 is a placeholder for beta/alpha/beta_tilde
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule `beta[t] = beta_start + (t-1)/(T-1) (beta_end - beta_start)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule.steps must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule betas must satisfy 0 < beta_start <= beta_end < 1 (got {beta_start}, {beta_end})"
            )));
        }
        let mut beta = vec![0.0; steps + 1];
        for (t, b) in beta.iter_mut().enumerate().skip(1) {
            *b = if steps == 1 {
                beta_start
            } else {
                beta_start + (t - 1) as f64 / (steps - 1) as f64 * (beta_end - beta_start)
            };
        }
        let mut alpha = vec![1.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        let mut beta_tilde = vec![0.0; steps + 1];
        for t in 1..=steps {
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }
        Ok(NoiseSchedule {
            params: ScheduleParams { steps, beta_start, beta_end },
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn from_params(p: &ScheduleParams) -> Result<Self> {
        Self::linear(p.steps, p.beta_start, p.beta_end)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    /// Samples `q(z_t | z_0)` with the supplied noise:
    /// `sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps`.
    pub fn forward_diffuse(&self, z0: &Latent, t: usize, eps: &Latent) -> Result<Latent> {
        self.check_t(t)?;
        if eps.dim() != z0.dim() {
            return Err(Error::Shape(format!("eps dim {} != latent dim {}", eps.dim(), z0.dim())));
        }
        if t == 0 {
            return Ok(z0.clone());
        }
        let a = self.alpha_bar[t].sqrt();
        let s = (1.0 - self.alpha_bar[t]).sqrt();
        Ok(Latent(z0.0.iter().zip(&eps.0).map(|(z, e)| a * z + s * e).collect()))
    }

    /// Mean and variance of the reverse step under the ε-parameterisation.
    pub fn posterior_params(&self, z_t: &Latent, eps_hat: &Latent, t: usize) -> Result<(Latent, f64)> {
        if t == 0 {
            return Err(Error::UndefinedStep);
        }
        self.check_t(t)?;
        if eps_hat.dim() != z_t.dim() {
            return Err(Error::Shape(format!("eps dim {} != latent dim {}", eps_hat.dim(), z_t.dim())));
        }
        let coef = self.beta[t] / (1.0 - self.alpha_bar[t]).sqrt();
        let inv = 1.0 / self.alpha[t].sqrt();
        let mean = z_t.0.iter().zip(&eps_hat.0).map(|(z, e)| inv * (z - coef * e)).collect();
        Ok((Latent(mean), self.beta_tilde[t]))
    }
}

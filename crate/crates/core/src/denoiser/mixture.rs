use serde::{Deserialize, Serialize};

use super::{dot, norm, ConditionEmbedding, EpsModel};
use crate::error::{Error, Result};
use crate::schedule::{Latent, NoiseSchedule};

/// Diagonal Gaussian mixture with one unit-norm embedding per component.
///
/// The embeddings tie components to conditions: a condition close (in cosine)
/// to `archetype_emb[k]` up-weights component `k`, with sharpness `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Latent>,
    pub variances: Vec<Vec<f64>>,
    pub archetype_emb: Vec<Vec<f64>>,
    pub kappa: f64,
}

impl ArchetypeMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Latent>,
        variances: Vec<Vec<f64>>,
        archetype_emb: Vec<Vec<f64>>,
        kappa: f64,
    ) -> Result<Self> {
        let m = ArchetypeMixture { weights, means, variances, archetype_emb, kappa };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.means.len() != k || self.variances.len() != k || self.archetype_emb.len() != k {
            return Err(Error::Shape("mixture component arrays disagree in length".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config(format!("mixture weights must be non-negative and sum to 1 (sum {sum})")));
        }
        let dim = self.means[0].dim();
        let edim = self.archetype_emb[0].len();
        for i in 0..k {
            if self.means[i].dim() != dim || self.variances[i].len() != dim {
                return Err(Error::Shape(format!("component {i} has inconsistent dimension")));
            }
            if !self.means[i].is_finite() {
                return Err(Error::Config(format!("component {i} mean is not finite")));
            }
            if self.variances[i].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("component {i} has a non-positive variance")));
            }
            if self.archetype_emb[i].len() != edim {
                return Err(Error::Shape(format!("archetype embedding {i} has inconsistent dimension")));
            }
            if (norm(&self.archetype_emb[i]) - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("archetype embedding {i} is not unit-norm")));
            }
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config("mixture kappa must be positive".into()));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.archetype_emb[0].len()
    }

    /// Largest per-dimension standard deviation over all components.
    pub fn max_std(&self) -> f64 {
        self.variances.iter().flatten().fold(0.0f64, |m, v| m.max(v.sqrt()))
    }

    /// Exact ε for the mixture with explicit component weights.
    ///
    /// `z_t` has density `sum_k w_k N(sqrt(ab) mu_k, diag(ab s2_k + 1 - ab))`;
    /// the result is `-sqrt(1 - ab)` times its score, with responsibilities
    /// evaluated in the log domain.
    pub fn eps_with_weights(&self, z_t: &Latent, t: usize, weights: &[f64], sched: &NoiseSchedule) -> Result<Latent> {
        if t == 0 {
            return Err(Error::UndefinedStep);
        }
        if t > sched.steps() {
            return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
        }
        let dim = self.dim();
        if z_t.dim() != dim {
            return Err(Error::Shape(format!("latent dim {} != mixture dim {dim}", z_t.dim())));
        }
        let ab = sched.alpha_bar(t);
        let sa = ab.sqrt();
        let k = self.components();
        let z = z_t.as_slice();

        let mut log_r = vec![f64::NEG_INFINITY; k];
        // grad[k][d] = -(z - sa mu)/var, stored flat
        let mut grad = vec![0.0; k * dim];
        for c in 0..k {
            let mu = self.means[c].as_slice();
            let s2 = &self.variances[c];
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for d in 0..dim {
                let var = ab * s2[d] + (1.0 - ab);
                let diff = z[d] - sa * mu[d];
                quad += diff * diff / var;
                logdet += var.ln();
                grad[c * dim + d] = -diff / var;
            }
            if weights[c] > 0.0 {
                log_r[c] = weights[c].ln() - 0.5 * (quad + logdet);
            }
        }
        let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max.is_finite(), "mixture responsibilities degenerate");
        let mut total = 0.0;
        for lr in log_r.iter_mut() {
            *lr = (*lr - max).exp();
            total += *lr;
        }
        let scale = -(1.0 - ab).sqrt() / total;
        let mut eps = vec![0.0; dim];
        for c in 0..k {
            let r = log_r[c];
            if r == 0.0 {
                continue;
            }
            for d in 0..dim {
                eps[d] += r * grad[c * dim + d];
            }
        }
        for e in eps.iter_mut() {
            *e *= scale;
        }
        Ok(Latent::new(eps))
    }

    /// Exact ε under the condition-adjusted weights.
    pub fn analytic_eps(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &ConditionEmbedding,
        sched: &NoiseSchedule,
    ) -> Result<Latent> {
        let w = condition_weights(cond, self)?;
        self.eps_with_weights(z_t, t, &w, sched)
    }
}

/// Component weights under a condition: `pi` for the null condition,
/// otherwise `pi_k exp(kappa cos(c, e_k))` renormalised.
pub fn condition_weights(cond: &ConditionEmbedding, mix: &ArchetypeMixture) -> Result<Vec<f64>> {
    if cond.is_null() {
        return Ok(mix.weights.clone());
    }
    if cond.dim() != mix.embed_dim() {
        return Err(Error::Shape(format!(
            "condition dim {} != archetype embedding dim {}",
            cond.dim(),
            mix.embed_dim()
        )));
    }
    let cn = norm(cond.values());
    if cn == 0.0 {
        return Err(Error::DegenerateCondition);
    }
    let logits: Vec<f64> = mix
        .weights
        .iter()
        .zip(&mix.archetype_emb)
        .map(|(&w, e)| {
            if w > 0.0 {
                w.ln() + mix.kappa * dot(cond.values(), e) / cn
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// The exact mixture denoiser bound to a schedule.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    pub mixture: ArchetypeMixture,
    pub schedule: NoiseSchedule,
}

impl AnalyticDenoiser {
    pub fn new(mixture: ArchetypeMixture, schedule: NoiseSchedule) -> Self {
        AnalyticDenoiser { mixture, schedule }
    }
}

impl EpsModel for AnalyticDenoiser {
    fn latent_dim(&self) -> usize {
        self.mixture.dim()
    }

    fn cond_dim(&self) -> usize {
        self.mixture.embed_dim()
    }

    fn predict_batch(&self, z_t: &[Latent], t: usize, conds: &[ConditionEmbedding]) -> Result<Vec<Latent>> {
        if z_t.len() != conds.len() {
            return Err(Error::Shape("batch and condition counts differ".into()));
        }
        z_t.iter()
            .zip(conds)
            .map(|(z, c)| self.mixture.analytic_eps(z, t, c, &self.schedule))
            .collect()
    }
}

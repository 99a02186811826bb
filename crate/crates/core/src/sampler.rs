//! Reverse-process samplers and partial-diffusion reconstruction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::denoiser::{ConditionEmbedding, EpsModel};
use crate::error::{Error, Result};
use crate::rng::{normal_latent, Rng};
use crate::schedule::{Latent, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Deterministic pseudo linear multistep over a coarse grid.
    Plms,
    /// Stochastic DDPM steps over every timestep.
    Ancestral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Grid size for PLMS; ignored by the ancestral sampler.
    pub n_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { kind: SamplerKind::Plms, n_steps: 100 }
    }
}

/// Strictly decreasing timesteps starting at `t_star`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepGrid {
    pub t_star: usize,
    pub steps: Vec<usize>,
}

/// `n_steps` integers evenly spaced from `t_star` down to 1, rounded.
pub fn make_grid(t_star: usize, n_steps: usize, total: usize) -> Result<TimestepGrid> {
    if t_star == 0 || t_star > total || n_steps == 0 || n_steps > t_star {
        return Err(Error::InvalidGrid { t_star, n_steps, max: total });
    }
    let mut steps = Vec::with_capacity(n_steps);
    if n_steps == 1 {
        steps.push(t_star);
    } else {
        let span = (t_star - 1) as f64;
        for i in 0..n_steps {
            let v = t_star as f64 - span * i as f64 / (n_steps - 1) as f64;
            steps.push(v.round() as usize);
        }
    }
    steps[0] = t_star;
    // Rounding collisions are pushed down so the count is preserved.
    for i in 1..steps.len() {
        if steps[i] >= steps[i - 1] {
            steps[i] = steps[i - 1] - 1;
        }
    }
    if *steps.last().expect("non-empty") < 1 {
        return Err(Error::Invariant("grid fell below timestep 1".into()));
    }
    Ok(TimestepGrid { t_star, steps })
}

/// One ancestral step: posterior mean plus `sqrt(beta_tilde) * noise`.
/// At `t = 1` the variance vanishes and the mean is returned as is.
pub fn ddpm_step(z_t: &Latent, t: usize, eps_hat: &Latent, noise: &Latent, sched: &NoiseSchedule) -> Result<Latent> {
    let (mean, var) = sched.posterior_params(z_t, eps_hat, t)?;
    if t == 1 {
        return Ok(mean);
    }
    if noise.dim() != mean.dim() {
        return Err(Error::Shape("noise dimension differs from latent".into()));
    }
    let sd = var.sqrt();
    Ok(Latent::new(mean.as_slice().iter().zip(noise.as_slice()).map(|(m, n)| m + sd * n).collect()))
}

/// Adams–Bashforth coefficients applied to `[eps_new, eps_1, eps_2, eps_3]`,
/// indexed by the number of buffered predictions.
pub const PLMS_COEFFICIENTS: [&[f64]; 4] = [
    &[1.0],
    &[3.0 / 2.0, -1.0 / 2.0],
    &[23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
    &[55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
];

/// The most recent ε predictions, newest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlmsState {
    buffer: VecDeque<Latent>,
}

impl PlmsState {
    pub const CAPACITY: usize = 4;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    fn push(&mut self, eps: Latent) {
        self.buffer.push_front(eps);
        self.buffer.truncate(Self::CAPACITY);
    }

    /// Multistep extrapolation of the effective ε from `eps_new` and the
    /// buffered history (up to three prior predictions).
    pub fn effective_eps(&self, eps_new: &Latent) -> Latent {
        let prior = self.buffer.len().min(3);
        let coef = PLMS_COEFFICIENTS[prior];
        let mut out: Vec<f64> = eps_new.as_slice().iter().map(|e| coef[0] * e).collect();
        for (j, prev) in self.buffer.iter().take(prior).enumerate() {
            for (o, p) in out.iter_mut().zip(prev.as_slice()) {
                *o += coef[j + 1] * p;
            }
        }
        Latent::new(out)
    }
}

/// One PLMS step from `t` to `t_next` (which may be 0, the clean endpoint).
pub fn plms_step(
    z_t: &Latent,
    t: usize,
    t_next: usize,
    eps_new: &Latent,
    state: &mut PlmsState,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    if t <= t_next {
        return Err(Error::InvalidStep { t, t_next });
    }
    if t > sched.steps() {
        return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
    }
    if eps_new.dim() != z_t.dim() || state.buffer.front().is_some_and(|e| e.dim() != z_t.dim()) {
        return Err(Error::Shape("PLMS buffer dimension mismatch".into()));
    }
    let eps = state.effective_eps(eps_new);
    let ab = sched.alpha_bar(t);
    let ab_next = sched.alpha_bar(t_next);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sa_next, sn_next) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    let out = z_t
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(z, e)| {
            let x0 = (z - sn * e) / sa;
            sa_next * x0 + sn_next * e
        })
        .collect();
    state.push(eps_new.clone());
    Ok(Latent::new(out))
}

fn run_plms(
    model: &dyn EpsModel,
    mut z: Vec<Latent>,
    conds: &[ConditionEmbedding],
    grid: &TimestepGrid,
    sched: &NoiseSchedule,
) -> Result<Vec<Latent>> {
    let mut states = vec![PlmsState::new(); z.len()];
    for (i, &t) in grid.steps.iter().enumerate() {
        let t_next = grid.steps.get(i + 1).copied().unwrap_or(0);
        let eps = model.predict_batch(&z, t, conds)?;
        for ((zi, e), st) in z.iter_mut().zip(&eps).zip(states.iter_mut()) {
            *zi = plms_step(zi, t, t_next, e, st, sched)?;
        }
    }
    Ok(z)
}

fn run_ancestral(
    model: &dyn EpsModel,
    mut z: Vec<Latent>,
    conds: &[ConditionEmbedding],
    from: usize,
    sched: &NoiseSchedule,
    rngs: &mut [Rng],
) -> Result<Vec<Latent>> {
    let dim = model.latent_dim();
    for t in (1..=from).rev() {
        let eps = model.predict_batch(&z, t, conds)?;
        for ((zi, e), rng) in z.iter_mut().zip(&eps).zip(rngs.iter_mut()) {
            let noise = if t > 1 { normal_latent(rng, dim) } else { Latent::zeros(dim) };
            *zi = ddpm_step(zi, t, e, &noise, sched)?;
        }
    }
    Ok(z)
}

/// Draws `conds.len()` samples from pure noise, one RNG per sample.
pub fn sample_batch(
    model: &dyn EpsModel,
    conds: &[ConditionEmbedding],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rngs: &mut [Rng],
) -> Result<Vec<Latent>> {
    if rngs.len() != conds.len() {
        return Err(Error::Shape("one RNG per sample required".into()));
    }
    let dim = model.latent_dim();
    let z: Vec<Latent> = rngs.iter_mut().map(|r| normal_latent(r, dim)).collect();
    match cfg.kind {
        SamplerKind::Ancestral => run_ancestral(model, z, conds, sched.steps(), sched, rngs),
        SamplerKind::Plms => {
            let grid = make_grid(sched.steps(), cfg.n_steps, sched.steps())?;
            run_plms(model, z, conds, &grid, sched)
        }
    }
}

pub fn sample(
    model: &dyn EpsModel,
    cond: &ConditionEmbedding,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Latent> {
    let mut out = sample_batch(model, std::slice::from_ref(cond), sched, cfg, std::slice::from_mut(rng))?;
    Ok(out.pop().expect("one sample"))
}

/// Partially diffuses each `z0` to `t_star` with a fresh draw from its own
/// RNG, then denoises back to the clean endpoint under its condition.
/// `t_star = 0` returns the inputs unchanged.
pub fn reconstruct_batch(
    z0: &[Latent],
    conds: &[ConditionEmbedding],
    t_star: usize,
    model: &dyn EpsModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rngs: &mut [Rng],
) -> Result<Vec<Latent>> {
    if z0.len() != conds.len() || z0.len() != rngs.len() {
        return Err(Error::Shape("reconstruction inputs, conditions and RNGs must align".into()));
    }
    if t_star > sched.steps() {
        return Err(Error::TimestepOutOfRange { t: t_star, max: sched.steps() });
    }
    if t_star == 0 {
        return Ok(z0.to_vec());
    }
    let grid = match cfg.kind {
        SamplerKind::Plms => Some(make_grid(t_star, cfg.n_steps, sched.steps())?),
        SamplerKind::Ancestral => None,
    };
    let z_t = z0
        .iter()
        .zip(rngs.iter_mut())
        .map(|(z, rng)| {
            let eps = normal_latent(rng, z.dim());
            sched.forward_diffuse(z, t_star, &eps)
        })
        .collect::<Result<Vec<_>>>()?;
    match grid {
        Some(grid) => run_plms(model, z_t, conds, &grid, sched),
        None => run_ancestral(model, z_t, conds, t_star, sched, rngs),
    }
}

pub fn reconstruct(
    z0: &Latent,
    t_star: usize,
    cond: &ConditionEmbedding,
    model: &dyn EpsModel,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Latent> {
    let mut out = reconstruct_batch(
        std::slice::from_ref(z0),
        std::slice::from_ref(cond),
        t_star,
        model,
        sched,
        cfg,
        std::slice::from_mut(rng),
    )?;
    Ok(out.pop().expect("one reconstruction"))
}

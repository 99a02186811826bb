use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConditionEmbedding, DenoiserNet, TrainExample};
use crate::error::{Error, Result};
use crate::rng::{normal_latent, rng_from};
use crate::schedule::{Latent, NoiseSchedule};

/// Optimiser and sampling hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Total number of optimisation steps (including steps already taken
    /// when resuming).
    pub steps: usize,
    /// Probability of replacing a condition with the null condition.
    pub p_drop: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 1e-3,
            batch_size: 128,
            steps: 20_000,
            p_drop: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

/// First and second moment estimates; `t` counts updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn update(&mut self, net: &mut DenoiserNet, grad: &[f64], h: &TrainHyper) {
        self.t += 1;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for (i, p) in net.params_iter_mut().enumerate() {
            let g = grad[i];
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g;
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            *p -= h.learning_rate * mhat / (vhat.sqrt() + h.adam_eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// `(step, batch loss)` for every step run in this call.
    pub losses: Vec<(usize, f64)>,
}

/// Trailing moving average with the given window.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(losses.len());
    let mut acc = 0.0;
    for i in 0..losses.len() {
        acc += losses[i];
        if i >= window {
            acc -= losses[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Draws the training batch for one step. Depends only on `(seed, step)`,
/// which makes resumed runs identical to uninterrupted ones.
fn draw_batch(
    data: &[(Latent, ConditionEmbedding)],
    step: usize,
    sched: &NoiseSchedule,
    h: &TrainHyper,
) -> Vec<TrainExample> {
    let mut rng = rng_from(h.seed, &[0x7472_6169_6e, step as u64]);
    (0..h.batch_size)
        .map(|_| {
            let (z0, cond) = &data[rng.random_range(0..data.len())];
            let t = rng.random_range(1..=sched.steps());
            let eps = normal_latent(&mut rng, z0.dim());
            let cond = if rng.random::<f64>() < h.p_drop { ConditionEmbedding::null(cond.dim()) } else { cond.clone() };
            TrainExample { z0: z0.clone(), t, cond, eps }
        })
        .collect()
}

/// Runs Adam on the conditional denoising objective from `start_step` up to
/// `h.steps`. Each step draws `t` uniformly on `[1, T]`, unit-normal noise,
/// and drops the condition with probability `p_drop`.
pub fn train(
    net: &mut DenoiserNet,
    adam: &mut AdamState,
    start_step: usize,
    data: &[(Latent, ConditionEmbedding)],
    sched: &NoiseSchedule,
    h: &TrainHyper,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if h.batch_size == 0 {
        return Err(Error::Config("model.batch_size must be positive".into()));
    }
    if adam.m.len() != net.num_params() {
        return Err(Error::Shape("optimiser state does not match network".into()));
    }
    let mut losses = Vec::with_capacity(h.steps.saturating_sub(start_step));
    for step in start_step..h.steps {
        let batch = draw_batch(data, step, sched, h);
        let (loss, grad) = net.loss_and_grad(&batch, sched)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, learning_rate: h.learning_rate, loss });
        }
        let g = grad.flat();
        adam.update(net, &g, h);
        losses.push((step, loss));
    }
    Ok(TrainOutcome { losses })
}

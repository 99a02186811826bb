use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{ConditionEmbedding, EpsModel};
use crate::error::{Error, Result};
use crate::rng::{rng_from, standard_normal};
use crate::schedule::{Latent, NoiseSchedule, ScheduleParams};

/// Layer layout of a [`DenoiserNet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub latent_dim: usize,
    pub cond_dim: usize,
    /// Number of sinusoidal time features; must be even.
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    /// Diffusion length `T`, used to scale the time input.
    pub steps: usize,
}

impl NetShape {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.time_dim + self.cond_dim
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.steps == 0 {
            return Err(Error::Config("network latent_dim and steps must be positive".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config(format!("model.time_dim must be even (got {})", self.time_dim)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// out x in
    w: Array2<f64>,
    b: Array1<f64>,
}

/// MLP noise predictor over `[z_t | time features | c]` with SiLU between
/// layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    shape: NetShape,
    layers: Vec<Dense>,
}

/// One training tuple: the clean latent, timestep, condition and noise draw.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub z0: Latent,
    pub t: usize,
    pub cond: ConditionEmbedding,
    pub eps: Latent,
}

/// Per-layer gradients, same layout as the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl DenoiserNet {
    /// LeCun-normal weights and zero biases, except that the first-layer
    /// columns reading the condition start at zero: a network never shown a
    /// non-null condition stays exactly condition-independent.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let widths = shape.widths();
        let cond_start = shape.latent_dim + shape.time_dim;
        let mut rng = rng_from(seed, &[0x6e_6574]);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let std = 1.0 / (fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |(_, col)| {
                    let g = std * standard_normal(&mut rng);
                    if i == 0 && col >= cond_start {
                        0.0
                    } else {
                        g
                    }
                });
                Dense { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(DenoiserNet { shape, layers })
    }

    /// A network whose every parameter is zero.
    pub fn zeros(shape: NetShape) -> Result<Self> {
        let mut net = Self::new(shape, 0)?;
        net.set_params_flat(&vec![0.0; net.num_params()])?;
        Ok(net)
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in row-major order, layer by layer, weights before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = p[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn params_iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// Sinusoidal features of `t/T` at frequencies spaced geometrically
    /// from 1 to `T`: sines first, then cosines.
    pub fn time_features(&self, t: usize) -> Vec<f64> {
        let half = self.shape.time_dim / 2;
        let big_t = self.shape.steps as f64;
        let x = t as f64 / big_t;
        let freq = |i: usize| if half > 1 { big_t.powf(i as f64 / (half - 1) as f64) } else { 1.0 };
        let mut out = Vec::with_capacity(self.shape.time_dim);
        out.extend((0..half).map(|i| (freq(i) * x).sin()));
        out.extend((0..half).map(|i| (freq(i) * x).cos()));
        out
    }

    fn check_inputs(&self, z: &Latent, c: &ConditionEmbedding) -> Result<()> {
        if z.dim() != self.shape.latent_dim {
            return Err(Error::Shape(format!("latent dim {} != network latent dim {}", z.dim(), self.shape.latent_dim)));
        }
        if c.dim() != self.shape.cond_dim {
            return Err(Error::Shape(format!("condition dim {} != network condition dim {}", c.dim(), self.shape.cond_dim)));
        }
        Ok(())
    }

    fn fill_row(&self, row: &mut [f64], z: &[f64], time: &[f64], c: &[f64]) {
        let (a, rest) = row.split_at_mut(z.len());
        a.copy_from_slice(z);
        let (b, d) = rest.split_at_mut(time.len());
        b.copy_from_slice(time);
        d.copy_from_slice(c);
    }

    /// Forward pass; returns the output and, per layer, (input, pre-activation).
    fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, Vec<(Array2<f64>, Array2<f64>)>) {
        let mut cache = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&l.w.t());
            a += &l.b;
            let next = if i == last { a.clone() } else { a.mapv(silu) };
            cache.push((h, a));
            h = next;
        }
        (h, cache)
    }

    fn forward(&self, x: Array2<f64>) -> Array2<f64> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&l.w.t());
            a += &l.b;
            if i != last {
                a.mapv_inplace(silu);
            }
            h = a;
        }
        h
    }

    /// `eps_theta(z_t, t, c)` for a single latent.
    pub fn net_forward(&self, z_t: &Latent, t: usize, c: &ConditionEmbedding) -> Result<Latent> {
        self.predict(z_t, t, c)
    }

    /// Mean squared-norm residual over the batch and its gradient with
    /// respect to every parameter. `z_t` is built from `(z0, t, eps)` and
    /// treated as a constant input.
    pub fn loss_and_grad(&self, batch: &[TrainExample], sched: &NoiseSchedule) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty training batch".into()));
        }
        let n = batch.len();
        let din = self.shape.input_dim();
        let dim = self.shape.latent_dim;
        let mut x = Array2::zeros((n, din));
        let mut target = Array2::zeros((n, dim));
        for (i, ex) in batch.iter().enumerate() {
            self.check_inputs(&ex.z0, &ex.cond)?;
            let zt = sched.forward_diffuse(&ex.z0, ex.t, &ex.eps)?;
            let time = self.time_features(ex.t);
            self.fill_row(x.row_mut(i).as_slice_mut().expect("row-major"), zt.as_slice(), &time, ex.cond.values());
            for d in 0..dim {
                target[[i, d]] = ex.eps[d];
            }
        }
        let (out, cache) = self.forward_cached(x);
        let diff = &out - &target;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / n as f64;

        let mut delta = diff * (2.0 / n as f64);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (input, _) = &cache[i];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            grads.push((gw, gb));
            if i > 0 {
                let pre = &cache[i - 1].1;
                let mut back = delta.dot(&l.w);
                back.zip_mut_with(pre, |d, &a| *d *= silu_grad(a));
                delta = back;
            }
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

impl EpsModel for DenoiserNet {
    fn latent_dim(&self) -> usize {
        self.shape.latent_dim
    }

    fn cond_dim(&self) -> usize {
        self.shape.cond_dim
    }

    fn predict_batch(&self, z_t: &[Latent], t: usize, conds: &[ConditionEmbedding]) -> Result<Vec<Latent>> {
        if z_t.len() != conds.len() {
            return Err(Error::Shape("batch and condition counts differ".into()));
        }
        if z_t.is_empty() {
            return Ok(Vec::new());
        }
        let time = self.time_features(t);
        let mut x = Array2::zeros((z_t.len(), self.shape.input_dim()));
        for (i, (z, c)) in z_t.iter().zip(conds).enumerate() {
            self.check_inputs(z, c)?;
            self.fill_row(x.row_mut(i).as_slice_mut().expect("row-major"), z.as_slice(), &time, c.values());
        }
        let out = self.forward(x);
        Ok(out.rows().into_iter().map(|r| Latent::new(r.to_vec())).collect())
    }
}

const CHECKPOINT_MAGIC: &str = "ldad-checkpoint 1";

/// Everything needed to resume training or evaluate a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: DenoiserNet,
    pub adam: super::AdamState,
    pub step: usize,
    pub schedule: ScheduleParams,
    pub config_digest: String,
    pub dataset_digest: String,
}

fn write_values(out: &mut String, label: &str, values: impl Iterator<Item = f64>) {
    out.push_str(label);
    for v in values {
        // Debug formatting of f64 is the shortest exact round-trip form.
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let s = &self.net.shape;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "config_digest {}", self.config_digest);
        let _ = writeln!(out, "dataset_digest {}", self.dataset_digest);
        let _ = writeln!(
            out,
            "schedule {} {:?} {:?}",
            self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end
        );
        let _ = writeln!(out, "latent_dim {}", s.latent_dim);
        let _ = writeln!(out, "cond_dim {}", s.cond_dim);
        let _ = writeln!(out, "time_dim {}", s.time_dim);
        let hidden: Vec<String> = s.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "hidden {}", hidden.join(" "));
        let _ = writeln!(out, "step {}", self.step);
        let _ = writeln!(out, "adam_t {}", self.adam.t);
        for (i, l) in self.net.layers.iter().enumerate() {
            write_values(&mut out, &format!("w{i}"), l.w.iter().copied());
            write_values(&mut out, &format!("b{i}"), l.b.iter().copied());
        }
        write_values(&mut out, "adam_m", self.adam.m.iter().copied());
        write_values(&mut out, "adam_v", self.adam.v.iter().copied());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (n, line) = lines.next().ok_or_else(|| Error::parse(path, 0, format!("missing `{key}`")))?;
            let mut parts = line.split(' ');
            let head = parts.next().unwrap_or("");
            if head != key {
                return Err(Error::parse(path, n, format!("expected `{key}`, found `{head}`")));
            }
            Ok((n, parts.collect()))
        };
        let (n, magic) = next("ldad-checkpoint")?;
        if magic != ["1"] {
            return Err(Error::parse(path, n, "unsupported checkpoint version"));
        }
        let one = |(n, v): (usize, Vec<&str>)| -> Result<String> {
            match v.as_slice() {
                [x] => Ok(x.to_string()),
                _ => Err(Error::parse(path, n, "expected one value")),
            }
        };
        let int = |(n, v): (usize, Vec<&str>)| -> Result<usize> {
            one((n, v))?.parse().map_err(|e| Error::parse(path, n, format!("{e}")))
        };
        let config_digest = one(next("config_digest")?)?;
        let dataset_digest = one(next("dataset_digest")?)?;
        let (n, sched) = next("schedule")?;
        let schedule = match sched.as_slice() {
            [a, b, c] => ScheduleParams {
                steps: a.parse().map_err(|e| Error::parse(path, n, format!("{e}")))?,
                beta_start: b.parse().map_err(|e| Error::parse(path, n, format!("{e}")))?,
                beta_end: c.parse().map_err(|e| Error::parse(path, n, format!("{e}")))?,
            },
            _ => return Err(Error::parse(path, n, "schedule needs three values")),
        };
        let latent_dim = int(next("latent_dim")?)?;
        let cond_dim = int(next("cond_dim")?)?;
        let time_dim = int(next("time_dim")?)?;
        let (n, hid) = next("hidden")?;
        let hidden = hid
            .iter()
            .filter(|s| !s.is_empty())
            .map(|h| h.parse().map_err(|e| Error::parse(path, n, format!("{e}"))))
            .collect::<Result<Vec<usize>>>()?;
        let step = int(next("step")?)?;
        let adam_t = int(next("adam_t")?)?;
        let shape = NetShape { latent_dim, cond_dim, time_dim, hidden, steps: schedule.steps };
        let mut net = DenoiserNet::zeros(shape).map_err(|e| Error::parse(path, n, e.to_string()))?;
        let floats = |(n, v): (usize, Vec<&str>), len: usize| -> Result<Vec<f64>> {
            if v.len() != len {
                return Err(Error::parse(path, n, format!("expected {len} values, found {}", v.len())));
            }
            v.iter().map(|x| x.parse::<f64>().map_err(|e| Error::parse(path, n, format!("{e}")))).collect()
        };
        for i in 0..net.layers.len() {
            let (wl, bl) = (net.layers[i].w.len(), net.layers[i].b.len());
            let w = floats(next(&format!("w{i}"))?, wl)?;
            let b = floats(next(&format!("b{i}"))?, bl)?;
            let dims = net.layers[i].w.dim();
            net.layers[i].w = Array2::from_shape_vec(dims, w).expect("length checked");
            net.layers[i].b = Array1::from_vec(b);
        }
        let np = net.num_params();
        let m = floats(next("adam_m")?, np)?;
        let v = floats(next("adam_v")?, np)?;
        Ok(Checkpoint {
            net,
            adam: super::AdamState { m, v, t: adam_t },
            step,
            schedule,
            config_digest,
            dataset_digest,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Loads and rejects checkpoints whose latent or condition dimension
    /// differs from the expected ones.
    pub fn load_checked(path: &Path, latent_dim: usize, cond_dim: usize) -> Result<Self> {
        let ck = Self::load(path)?;
        let s = ck.net.shape();
        if s.latent_dim != latent_dim || s.cond_dim != cond_dim {
            return Err(Error::Shape(format!(
                "checkpoint {} has latent/condition dims {}/{}, expected {latent_dim}/{cond_dim}",
                path.display(),
                s.latent_dim,
                s.cond_dim
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_latent;
    use rand::Rng;

    fn tiny_shape() -> NetShape {
        NetShape { latent_dim: 1, cond_dim: 1, time_dim: 2, hidden: vec![2], steps: 1000 }
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let shape = NetShape { latent_dim: 4, cond_dim: 3, time_dim: 4, hidden: vec![8, 8], steps: 100 };
        let net = DenoiserNet::zeros(shape).unwrap();
        let out = net.net_forward(&Latent::new(vec![1.0, 2.0, 3.0, 4.0]), 50, &ConditionEmbedding::new(vec![1.0; 3]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn forward_is_deterministic() {
        let shape = NetShape { latent_dim: 8, cond_dim: 16, time_dim: 16, hidden: vec![128, 128], steps: 1000 };
        let net = DenoiserNet::new(shape, 3).unwrap();
        let z = Latent::new((0..8).map(|i| i as f64 * 0.1).collect());
        let c = ConditionEmbedding::new(vec![0.25; 16]).unwrap();
        let a = net.net_forward(&z, 321, &c).unwrap();
        let b = net.net_forward(&z, 321, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.num_params(), 40 * 128 + 128 + 128 * 128 + 128 + 128 * 8 + 8);
    }

    #[test]
    fn hand_set_one_unit_network() {
        let shape = NetShape { latent_dim: 1, cond_dim: 1, time_dim: 2, hidden: vec![1], steps: 10 };
        let mut net = DenoiserNet::zeros(shape).unwrap();
        // w0 = [0.5, -1.0, 2.0, 0.25], b0 = [0.1], w1 = [1.5], b1 = [-0.2]
        net.set_params_flat(&[0.5, -1.0, 2.0, 0.25, 0.1, 1.5, -0.2]).unwrap();
        let (z, t, c) = (0.8, 3usize, -0.4);
        let x = t as f64 / 10.0;
        let (s, co) = (x.sin(), x.cos());
        let pre = 0.5 * z - 1.0 * s + 2.0 * co + 0.25 * c + 0.1;
        let want = 1.5 * (pre / (1.0 + (-pre).exp())) - 0.2;
        let got = net.net_forward(&Latent::new(vec![z]), t, &ConditionEmbedding::new(vec![c]).unwrap()).unwrap();
        assert!((got[0] - want).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = DenoiserNet::new(tiny_shape(), 1).unwrap();
        let r = net.net_forward(&Latent::zeros(2), 1, &ConditionEmbedding::null(1));
        assert!(matches!(r, Err(Error::Shape(_))));
        let r = net.net_forward(&Latent::zeros(1), 1, &ConditionEmbedding::null(3));
        assert!(matches!(r, Err(Error::Shape(_))));
        let bad = NetShape { time_dim: 3, ..tiny_shape() };
        assert!(DenoiserNet::new(bad, 1).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let net = DenoiserNet::zeros(NetShape { latent_dim: 3, cond_dim: 2, time_dim: 2, hidden: vec![4], steps: 1000 }).unwrap();
        let batch: Vec<TrainExample> = (0..5)
            .map(|i| TrainExample {
                z0: Latent::new(vec![i as f64, 1.0, -1.0]),
                t: 10 * (i + 1),
                cond: ConditionEmbedding::null(2),
                eps: Latent::zeros(3),
            })
            .collect();
        let (loss, g) = net.loss_and_grad(&batch, &sched()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_network_loss_is_noise_energy() {
        let net = DenoiserNet::zeros(NetShape { latent_dim: 8, cond_dim: 2, time_dim: 2, hidden: vec![4], steps: 1000 }).unwrap();
        let mut rng = rng_from(21, &[]);
        let batch: Vec<TrainExample> = (0..10_000)
            .map(|_| TrainExample {
                z0: normal_latent(&mut rng, 8),
                t: rng.random_range(1..=1000),
                cond: ConditionEmbedding::null(2),
                eps: normal_latent(&mut rng, 8),
            })
            .collect();
        let (loss, _) = net.loss_and_grad(&batch, &sched()).unwrap();
        assert!((loss - 8.0).abs() < 0.4, "loss {loss}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = sched();
        for seed in 0..5u64 {
            let net = DenoiserNet::new(tiny_shape(), seed).unwrap();
            assert!(net.num_params() <= 50);
            let mut rng = rng_from(seed, &[1]);
            let batch: Vec<TrainExample> = (0..6)
                .map(|_| TrainExample {
                    z0: normal_latent(&mut rng, 1),
                    t: rng.random_range(1..=1000),
                    cond: ConditionEmbedding::new(vec![rng.random_range(-1.0..1.0)]).unwrap(),
                    eps: normal_latent(&mut rng, 1),
                })
                .collect();
            let (_, g) = net.loss_and_grad(&batch, &s).unwrap();
            let g = g.flat();
            let p = net.params_flat();
            let h = 1e-5;
            for i in 0..p.len() {
                let mut plus = net.clone();
                let mut q = p.clone();
                q[i] += h;
                plus.set_params_flat(&q).unwrap();
                let mut minus = net.clone();
                q[i] -= 2.0 * h;
                minus.set_params_flat(&q).unwrap();
                let fd = (plus.loss_and_grad(&batch, &s).unwrap().0 - minus.loss_and_grad(&batch, &s).unwrap().0) / (2.0 * h);
                let rel = (g[i] - fd).abs() / fd.abs().max(1e-6);
                assert!(rel <= 1e-4, "seed {seed} param {i}: analytic {} fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn checkpoint_text_round_trip() {
        let shape = NetShape { latent_dim: 2, cond_dim: 3, time_dim: 4, hidden: vec![5], steps: 1000 };
        let net = DenoiserNet::new(shape, 9).unwrap();
        let np = net.num_params();
        let ck = Checkpoint {
            net,
            adam: super::super::AdamState { m: vec![1e-7; np], v: vec![0.3; np], t: 12 },
            step: 12,
            schedule: ScheduleParams::default(),
            config_digest: "abc".into(),
            dataset_digest: "def".into(),
        };
        let text = ck.to_text();
        let back = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn checkpoint_dimension_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let net = DenoiserNet::new(tiny_shape(), 1).unwrap();
        let np = net.num_params();
        Checkpoint {
            net,
            adam: super::super::AdamState::new(np),
            step: 0,
            schedule: ScheduleParams::default(),
            config_digest: "x".into(),
            dataset_digest: "y".into(),
        }
        .save(&path)
        .unwrap();
        assert!(Checkpoint::load_checked(&path, 1, 1).is_ok());
        assert!(matches!(Checkpoint::load_checked(&path, 8, 1), Err(Error::Shape(_))));
        assert!(matches!(Checkpoint::load_checked(&path, 1, 16), Err(Error::Shape(_))));
    }
}

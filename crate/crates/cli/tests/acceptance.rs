//! Acceptance checks, one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use ldad_core::config::{ConditionMode, ExperimentConfig};
use ldad_core::denoiser::{
    smoothed, train, AdamState, AnalyticDenoiser, ArchetypeMixture, ConditionEmbedding, DenoiserNet, EpsModel, NetShape,
    TrainExample,
};
use ldad_core::evaluate::{select_best, slide_prompts, training_pairs, EvalData, EvalReport, Evaluator, ReportMeta, SweepRow};
use ldad_core::metrics::{auc, aupr, dice_iou, tnr};
use ldad_core::prompting::ImageEmbedder;
use ldad_core::rng::{normal_latent, rng_from, standard_normal, Rng};
use ldad_core::sampler::{reconstruct_batch, sample_batch, SamplerConfig, SamplerKind};
use ldad_core::scoring::{anomaly_score, erode, segment, slide_scores, ScoreMap, Stage};
use ldad_core::synthdata::{generate_slides, Split};
use ldad_core::{Latent, NoiseSchedule};

// Values observed on the first seeded run of the default configuration.
const PINNED_ORACLE_AUC: f64 = 0.9968072180669704;
const PINNED_ORACLE_NULL_AUC: f64 = 0.7267;
const PINNED_TRAINED_AUC: f64 = 0.9956;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

/// Log-density of the diffused mixture, written out independently of the
/// library's score code.
fn log_q(mix: &ArchetypeMixture, w: &[f64], z: &[f64], ab: f64) -> f64 {
    let terms: Vec<f64> = (0..mix.components())
        .map(|k| {
            let mut l = w[k].ln();
            for d in 0..z.len() {
                let v = ab * mix.variances[k][d] + 1.0 - ab;
                let r = z[d] - ab.sqrt() * mix.means[k][d];
                l -= 0.5 * (r * r / v + (2.0 * std::f64::consts::PI * v).ln());
            }
            l
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn ac1_oracle() -> Check {
    let start = Instant::now();
    let s = sched();
    let mut rng = rng_from(101, &[]);
    let (k, d, de) = (3, 4, 5);
    let unit = |rng: &mut Rng| {
        let v: Vec<f64> = (0..de).map(|_| standard_normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let means = (0..k).map(|_| Latent::new((0..d).map(|_| 2.0 * standard_normal(&mut rng)).collect())).collect();
    let vars = (0..k).map(|_| (0..d).map(|_| rng.random_range(0.2..1.5)).collect()).collect();
    let emb = (0..k).map(|_| unit(&mut rng)).collect();
    let mix = ArchetypeMixture::new(vec![0.2, 0.3, 0.5], means, vars, emb, 4.0).map_err(e)?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(1..=1000usize);
        let z = normal_latent(&mut rng, d);
        let c = ConditionEmbedding::new((0..de).map(|_| standard_normal(&mut rng)).collect()).map_err(e)?;
        let w = ldad_core::denoiser::condition_weights(&c, &mix).map_err(e)?;
        let eps = mix.analytic_eps(&z, t, &c, &s).map_err(e)?;
        let ab = s.alpha_bar(t);
        let h = 1e-4;
        for i in 0..d {
            let mut zp = z.as_slice().to_vec();
            let mut zm = zp.clone();
            zp[i] += h;
            zm[i] -= h;
            let want = -(1.0 - ab).sqrt() * (log_q(&mix, &w, &zp, ab) - log_q(&mix, &w, &zm, ab)) / (2.0 * h);
            worst = worst.max((eps[i] - want).abs() / want.abs().max(1e-3));
        }
    }
    let el = start.elapsed();
    ensure(worst <= 1e-4, || format!("max relative error {worst:.2e}"))?;
    ensure(el < Duration::from_secs(5), || format!("took {el:?}"))?;
    Ok(format!("max relative error {worst:.2e} over 100 triples in {:.2}s", el.as_secs_f64()))
}

fn ac2_gradients() -> Check {
    let s = sched();
    let shapes = [
        NetShape { latent_dim: 1, cond_dim: 1, time_dim: 2, hidden: vec![2], steps: 1000 },
        NetShape { latent_dim: 2, cond_dim: 1, time_dim: 2, hidden: vec![4], steps: 1000 },
        NetShape { latent_dim: 1, cond_dim: 1, time_dim: 2, hidden: vec![3, 3], steps: 1000 },
    ];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (si, shape) in shapes.into_iter().enumerate() {
        let mut net = DenoiserNet::new(shape.clone(), si as u64).map_err(e)?;
        // random condition weights so their gradients are exercised too
        let mut rng = rng_from(7, &[si as u64]);
        let p: Vec<f64> = net.params_flat().iter().map(|_| 0.5 * standard_normal(&mut rng)).collect();
        net.set_params_flat(&p).map_err(e)?;
        ensure(net.num_params() <= 50, || format!("net has {} parameters", net.num_params()))?;
        let batch: Vec<TrainExample> = (0..5)
            .map(|_| TrainExample {
                z0: normal_latent(&mut rng, shape.latent_dim),
                t: rng.random_range(1..=1000),
                cond: ConditionEmbedding::new(vec![rng.random_range(-1.0..1.0)]).unwrap(),
                eps: normal_latent(&mut rng, shape.latent_dim),
            })
            .collect();
        let g = net.loss_and_grad(&batch, &s).map_err(e)?.1.flat();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            let mut plus = net.clone();
            plus.set_params_flat(&q).map_err(e)?;
            q[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_params_flat(&q).map_err(e)?;
            let fd = (plus.loss_and_grad(&batch, &s).map_err(e)?.0 - minus.loss_and_grad(&batch, &s).map_err(e)?.0) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / fd.abs().max(1e-6));
            checked += 1;
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("{checked} entries over 3 nets, max relative error {worst:.2e}"))
}

fn ac3_forward() -> Check {
    let s = sched();
    let z0 = Latent::new(vec![1.0, -2.0, 0.5]);
    let n = 10_000usize;
    let mut notes = Vec::new();
    for t in [1usize, 100, 500, 1000] {
        let mut rng = rng_from(3, &[t as u64]);
        let ab = s.alpha_bar(t);
        let samples: Vec<Latent> =
            (0..n).map(|_| s.forward_diffuse(&z0, t, &normal_latent(&mut rng, 3)).unwrap()).collect();
        for d in 0..3 {
            let m = samples.iter().map(|x| x[d]).sum::<f64>() / n as f64;
            let v = samples.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let var = 1.0 - ab;
            // 4-sigma bands for the sample mean and variance of a Gaussian
            let mb = 4.0 * (var / n as f64).sqrt();
            let vb = 4.0 * var * (2.0 / (n - 1) as f64).sqrt();
            ensure((m - ab.sqrt() * z0[d]).abs() <= mb, || format!("t={t} d={d} mean {m}"))?;
            ensure((v - var).abs() <= vb, || format!("t={t} d={d} variance {v} vs {var}"))?;
        }
        notes.push(format!("t={t}"));
    }
    Ok(format!("mean and variance within 4-sigma bands at {}", notes.join(", ")))
}

fn ac4_samplers() -> Check {
    let s = sched();
    let mu = [1.5, -0.5, 0.25];
    let mix = ArchetypeMixture::new(vec![1.0], vec![Latent::new(mu.to_vec())], vec![vec![1.0; 3]], vec![vec![1.0]], 1.0)
        .map_err(e)?;
    let model = AnalyticDenoiser::new(mix, s.clone());
    let n = 5000;
    let conds = vec![ConditionEmbedding::null(1); n];
    let mut stats = Vec::new();
    for (kind, steps, seed) in [(SamplerKind::Ancestral, 1000, 1u64), (SamplerKind::Plms, 100, 2)] {
        let mut rngs: Vec<_> = (0..n).map(|i| rng_from(seed, &[i as u64])).collect();
        let xs = sample_batch(&model, &conds, &s, &SamplerConfig { kind, n_steps: steps }, &mut rngs).map_err(e)?;
        let m: Vec<f64> = (0..3).map(|d| xs.iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
        let v: Vec<f64> = (0..3).map(|d| xs.iter().map(|x| (x[d] - m[d]).powi(2)).sum::<f64>() / (n - 1) as f64).collect();
        for d in 0..3 {
            ensure((m[d] - mu[d]).abs() <= 0.06, || format!("{kind:?} mean[{d}] = {}", m[d]))?;
            ensure((0.9..=1.1).contains(&v[d]), || format!("{kind:?} var[{d}] = {}", v[d]))?;
        }
        stats.push((m, v));
    }
    let mut gap: f64 = 0.0;
    for d in 0..3 {
        gap = gap.max((stats[0].0[d] - stats[1].0[d]).abs()).max((stats[0].1[d] - stats[1].1[d]).abs());
    }
    ensure(gap <= 0.05, || format!("sampler moments differ by {gap}"))?;
    Ok(format!("moments within bounds, max ancestral/PLMS gap {gap:.4}"))
}

fn ac5_reconstruction() -> Check {
    let s = sched();
    let mix = ArchetypeMixture::new(
        vec![0.5, 0.5],
        vec![Latent::new(vec![2.0, 0.0, -1.0]), Latent::new(vec![-2.0, 1.0, 0.0])],
        vec![vec![0.25; 3]; 2],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        5.0,
    )
    .map_err(e)?;
    let model = AnalyticDenoiser::new(mix.clone(), s.clone());
    let trials = 200;
    let mut rng = rng_from(55, &[]);
    let z0: Vec<Latent> = (0..trials).map(|_| ldad_core::synthdata::gen_patch(&mix, &mut rng)).collect();
    let conds = vec![ConditionEmbedding::null(2); trials];
    let cfg = SamplerConfig::default();
    let mut rngs: Vec<_> = (0..trials).map(|i| rng_from(1, &[i as u64])).collect();
    let id = reconstruct_batch(&z0, &conds, 0, &model, &s, &cfg, &mut rngs).map_err(e)?;
    let bit_exact = id.iter().zip(&z0).all(|(a, b)| a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(bit_exact, || "t* = 0 is not the identity".into())?;
    let mut means = Vec::new();
    for t in [0usize, 100, 300, 674] {
        let mut rngs: Vec<_> = (0..trials).map(|i| rng_from(2, &[t as u64, i as u64])).collect();
        let rec = reconstruct_batch(&z0, &conds, t, &model, &s, &cfg, &mut rngs).map_err(e)?;
        means.push(z0.iter().zip(&rec).map(|(a, b)| anomaly_score(a, b)).sum::<f64>() / trials as f64);
    }
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || format!("errors not non-decreasing: {means:?}"))?;
    Ok(format!("identity at t*=0; mean errors {:?}", means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()))
}

struct Run {
    cfg: ExperimentConfig,
    data: EvalData,
    sched: NoiseSchedule,
    pool: ldad_core::prompting::KeywordPool,
    embedder: Box<dyn ImageEmbedder>,
    meta: ReportMeta,
}

impl Run {
    fn default_dataset() -> Result<Self, String> {
        let cfg = ExperimentConfig::default();
        let spec = cfg.dataset_spec().map_err(e)?;
        let slides = generate_slides(&spec).map_err(e)?.into_iter().map(|x| x.0);
        let data = EvalData::from_slides(slides).map_err(e)?;
        Ok(Run {
            sched: cfg.schedule().map_err(e)?,
            pool: cfg.keyword_pool(&spec).map_err(e)?,
            embedder: cfg.image_embedder().map_err(e)?,
            meta: ReportMeta { config_digest: cfg.digest(), dataset_digest: spec.digest() },
            cfg,
            data,
        })
    }

    fn evaluate(&self, model: &dyn EpsModel, mode: ConditionMode) -> Result<EvalReport, String> {
        let ev = Evaluator {
            model,
            schedule: &self.sched,
            sampler: self.cfg.sampler_config(),
            embedder: self.embedder.as_ref(),
            pool: &self.pool,
            top_k: self.cfg.prompt.top_k,
            mode,
            znorm: self.cfg.eval.znorm,
            repeats: self.cfg.eval.repeats,
            seed: self.cfg.seed,
        };
        single_thread(|| ev.evaluate(&self.data, self.cfg.sampler.t_star, &self.meta)).map(|o| o.report).map_err(e)
    }
}

fn ac6_oracle_pipeline(run: &Run) -> Check {
    let start = Instant::now();
    let spec = run.cfg.dataset_spec().map_err(e)?;
    let model = AnalyticDenoiser::new(spec.normal.clone(), run.sched.clone());
    let cond = run.evaluate(&model, ConditionMode::Conditioned)?;
    let null = run.evaluate(&model, ConditionMode::Null)?;
    let el = start.elapsed();
    let (a, b) = (cond.patch_auc, null.patch_auc);
    ensure(a >= 0.95, || format!("conditioned AUC {a}"))?;
    ensure(a > b, || format!("conditioned {a} <= null {b}"))?;
    ensure((a - PINNED_ORACLE_AUC).abs() <= 1e-9, || format!("conditioned AUC {a} differs from pinned {PINNED_ORACLE_AUC}"))?;
    ensure((b - PINNED_ORACLE_NULL_AUC).abs() <= 5e-4, || format!("null AUC {b} differs from pinned {PINNED_ORACLE_NULL_AUC}"))?;
    ensure(el < Duration::from_secs(300), || format!("took {el:?}"))?;
    Ok(format!("conditioned AUC {a:.4} > null AUC {b:.4}, single thread {:.1}s", el.as_secs_f64()))
}

fn ac7_trained_pipeline(run: &Run) -> Check {
    let start = Instant::now();
    let cfg = &run.cfg;
    let spec = cfg.dataset_spec().map_err(e)?;
    let train_slides: Vec<_> = generate_slides(&spec).map_err(e)?.into_iter().map(|x| x.0).filter(|s| s.split == Split::Train).collect();
    let pairs = training_pairs(&train_slides, run.embedder.as_ref(), &run.pool, cfg.prompt.top_k).map_err(e)?;
    let mut net = DenoiserNet::new(cfg.net_shape(run.pool.dim()), cfg.seed).map_err(e)?;
    let mut adam = AdamState::new(net.num_params());
    let out = train(&mut net, &mut adam, 0, &pairs, &run.sched, &cfg.train_hyper()).map_err(e)?;
    let losses: Vec<f64> = out.losses.iter().map(|x| x.1).collect();
    let sm = smoothed(&losses, cfg.model.smoothing_window);
    let (first, last) = (sm[0], sm[sm.len() - 1]);
    ensure(out.losses.len() == 20_000, || format!("{} steps", out.losses.len()))?;
    ensure(last < 0.5 * first, || format!("smoothed loss {first} -> {last}"))?;
    let cond = run.evaluate(&net, ConditionMode::Conditioned)?;
    let null = run.evaluate(&net, ConditionMode::Null)?;
    let (a, b) = (cond.patch_auc, null.patch_auc);
    ensure(a >= 0.85, || format!("trained conditioned AUC {a}"))?;
    ensure(a > b, || format!("trained conditioned {a} <= null {b}"))?;
    ensure((a - PINNED_TRAINED_AUC).abs() <= 5e-3, || format!("trained AUC {a} differs from pinned {PINNED_TRAINED_AUC}"))?;
    Ok(format!(
        "20000 steps, smoothed loss {first:.3} -> {last:.3}; conditioned AUC {a:.4} > null AUC {b:.4} ({:.0}s)",
        start.elapsed().as_secs_f64()
    ))
}

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut w = 0.0;
    for p in pos {
        for n in neg {
            w += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    w / (pos.len() * neg.len()) as f64
}

fn brute_aupr(pos: &[f64], neg: &[f64]) -> f64 {
    let mut th: Vec<f64> = pos.iter().chain(neg).copied().collect();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut sum = 0.0;
    for t in th {
        let tp = pos.iter().filter(|&&s| s >= t).count();
        let fp = neg.iter().filter(|&&s| s >= t).count();
        let new = pos.iter().filter(|&&s| s == t).count();
        if new > 0 {
            sum += new as f64 * tp as f64 / (tp + fp) as f64;
        }
    }
    sum / pos.len() as f64
}

fn ac8_metric_oracles() -> Check {
    let mut rng = rng_from(808, &[]);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(2..=200usize);
        let np = rng.random_range(1..n);
        let coarse = trial % 3 == 0;
        let draw = |r: &mut Rng| {
            let x: f64 = r.random();
            if coarse { (x * 6.0).floor() } else { x }
        };
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (np..n).map(|_| draw(&mut rng)).collect();
        worst = worst.max((auc(&pos, &neg).map_err(e)? - brute_auc(&pos, &neg)).abs());
        worst = worst.max((aupr(&pos, &neg).map_err(e)? - brute_aupr(&pos, &neg)).abs());

        let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let mut gt: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        gt[rng.random_range(0..n)] = true;
        let (d, i) = dice_iou(&pred, &gt).map_err(e)?;
        let (mut inter, mut union, mut p, mut g) = (0, 0, 0, 0);
        for k in 0..n {
            inter += usize::from(pred[k] && gt[k]);
            union += usize::from(pred[k] || gt[k]);
            p += usize::from(pred[k]);
            g += usize::from(gt[k]);
        }
        worst = worst.max((d - 2.0 * inter as f64 / (p + g) as f64).abs());
        worst = worst.max((i - inter as f64 / union as f64).abs());
        let negs = pred.iter().filter(|x| !**x).count();
        worst = worst.max((tnr(&pred).map_err(e)? - negs as f64 / n as f64).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.2e}"))?;
    for trial in 0..100u64 {
        let mut r = rng_from(909, &[trial]);
        let (h, w) = (r.random_range(1..=16usize), r.random_range(1..=16usize));
        let v: Vec<f64> = (0..h * w).map(|_| standard_normal(&mut r)).collect();
        let got = erode(&ScoreMap::new("m", h, w, v.clone(), Stage::Z).map_err(e)?).map_err(e)?;
        for i in 0..h {
            for j in 0..w {
                let mut m = f64::INFINITY;
                for a in i..=(i + 1).min(h - 1) {
                    for b in j..=(j + 1).min(w - 1) {
                        m = m.min(v[a * w + b]);
                    }
                }
                ensure(got.values[i * w + j] == m, || format!("erosion differs at ({i},{j}) of a {h}x{w} map"))?;
            }
        }
    }
    Ok(format!("100 metric instances within {worst:.1e}; 100 erosions exact"))
}

fn ldad(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ldad")).args(args).output().map_err(e)?;
    if !out.status.success() {
        return Err(format!("ldad {args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const SMALL: &str = "seed = 11
[data]
height = 16
width = 16
n_train = 4
n_val = 2
n_test_in = 4
n_test_out = 4
region_max_side = 4
[model]
hidden = [32]
steps = 300
batch_size = 32
log_every = 50
[sampler]
n_steps = 25
t_star = 250
";

fn ac9_protocol(run: &Run) -> Check {
    let mut rng = rng_from(99, &[]);
    for _ in 0..100 {
        let v: Vec<f64> = (0..100).map(|_| standard_normal(&mut rng)).collect();
        let (zmax, z99) = slide_scores(&ScoreMap::new("m", 10, 10, v, Stage::Eroded).map_err(e)?).map_err(e)?;
        ensure(zmax == z99, || format!("Z_99 {z99} != Z_MAX {zmax}"))?;
    }

    let slides: Vec<_> = run.data.test_in.iter().chain(&run.data.test_out).cloned().collect();
    let prompts = slide_prompts(&slides, run.embedder.as_ref(), &run.pool, run.cfg.prompt.top_k).map_err(e)?;
    for (p, _) in &prompts {
        ensure(p.terms.len() == 5, || format!("prompt has {} terms", p.terms.len()))?;
        ensure(p.terms[2].1 == 1.0, || format!("median weight {}", p.terms[2].1))?;
    }

    let seg = segment(&ScoreMap::new("m", 1, 4, vec![0.0, -0.0, 1e-12, -1e-12], Stage::Eroded).map_err(e)?).map_err(e)?;
    ensure(seg == [false, false, true, false], || format!("segmentation {seg:?}"))?;

    let row = |t, a| SweepRow { t_star: t, slide_auc_z99: a, slide_auc_zmax: 0.0, patch_auc: 0.0, mean_dice: 0.0 };
    ensure(select_best(&[row(375, 0.9), row(125, 0.9), row(250, 0.8)]) == 125, || "tie not broken toward smaller t*".into())?;

    let dir = tempfile::tempdir().map_err(e)?;
    let p = |n: &str| dir.path().join(n).display().to_string();
    std::fs::write(dir.path().join("small.toml"), SMALL).map_err(e)?;
    let cfg = p("small.toml");
    ldad(&["--config", &cfg, "gen", "--out", &p("data")])?;
    let stdout = ldad(&["--config", &cfg, "sweep", "--data", &p("data"), "--out", &p("sweep")])?;
    let table = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).map_err(e)?;
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    ensure(rows.len() == 8, || format!("sweep has {} rows", rows.len()))?;
    let best = stdout.lines().last().unwrap_or_default().to_string();
    Ok(format!("Z_99 = Z_MAX on 100 maps; {} prompts with median weight 1.0; z=0 negative; sweep 8 rows, {best}", prompts.len()))
}

fn dir_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn ac10_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let p = |n: &str| dir.path().join(n).display().to_string();
    std::fs::write(dir.path().join("small.toml"), SMALL).map_err(e)?;
    let cfg = p("small.toml");
    let mut compared = 0;
    for cmd in ["gen", "train", "eval", "eval-null", "eval-trained", "sweep", "keywords"] {
        let mut outputs = Vec::new();
        for (run, jobs) in [(0, "1"), (1, "4"), (2, "2")] {
            let out = p(&format!("{cmd}-{run}"));
            let mut args: Vec<String> = vec!["--config".into(), cfg.clone(), "--jobs".into(), jobs.into()];
            let data = p("gen-0");
            let ck = format!("{}/checkpoint.txt", p("train-0"));
            let rest: Vec<&str> = match cmd {
                "gen" => vec!["gen", "--out", &out],
                "train" => vec!["train", "--data", &data, "--out", &out],
                "eval" => vec!["eval", "--data", &data, "--out", &out],
                "eval-null" => vec!["eval", "--data", &data, "--out", &out, "--mode", "null"],
                "eval-trained" => vec!["eval", "--data", &data, "--out", &out, "--checkpoint", &ck],
                "sweep" => vec!["sweep", "--data", &data, "--out", &out],
                _ => vec!["keywords", "--data", &data, "--out", &out],
            };
            args.extend(rest.iter().map(|s| s.to_string()));
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            ldad(&refs)?;
            outputs.push(dir_files(Path::new(&out)));
        }
        for o in &outputs[1..] {
            ensure(o == &outputs[0], || format!("`{cmd}` outputs differ between runs"))?;
        }
        compared += outputs[0].len();
    }
    Ok(format!("7 commands x 3 runs (--jobs 1/4/2), {compared} files byte-identical"))
}

fn main() {
    // `cargo test` forwards harness flags and name filters; a filter that
    // does not match this target skips it.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if let Some(f) = &filter {
        if !"acceptance".contains(f.as_str()) {
            return;
        }
    }
    let run = Run::default_dataset();
    type Crit<'a> = (&'a str, Box<dyn Fn() -> Check + 'a>);
    let shared = |f: fn(&Run) -> Check| {
        let run = &run;
        move || match run {
            Ok(r) => f(r),
            Err(err) => Err(format!("default dataset: {err}")),
        }
    };
    let criteria: Vec<Crit> = vec![
        ("AC1 oracle exactness", Box::new(ac1_oracle)),
        ("AC2 gradient correctness", Box::new(ac2_gradients)),
        ("AC3 forward-process statistics", Box::new(ac3_forward)),
        ("AC4 sampler fidelity", Box::new(ac4_samplers)),
        ("AC5 reconstruction laws", Box::new(ac5_reconstruction)),
        ("AC6 conditioned beats null with the oracle", Box::new(shared(ac6_oracle_pipeline))),
        ("AC7 trained denoiser pipeline", Box::new(shared(ac7_trained_pipeline))),
        ("AC8 metric oracle equivalence", Box::new(ac8_metric_oracles)),
        ("AC9 protocol unit checks", Box::new(shared(ac9_protocol))),
        ("AC10 determinism across --jobs", Box::new(ac10_determinism)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

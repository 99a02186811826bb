use ldad_core::config::ExperimentConfig;
use ldad_core::denoiser::{AnalyticDenoiser, ArchetypeMixture, ConditionEmbedding};
use ldad_core::metrics::auc;
use ldad_core::prompting::condition_for_patch;
use ldad_core::rng::rng_from;
use ldad_core::sampler::{reconstruct, reconstruct_batch, SamplerConfig};
use ldad_core::scoring::anomaly_score;
use ldad_core::synthdata::gen_patch;
use ldad_core::{Latent, NoiseSchedule};

const TRIALS: usize = 200;

fn mean_error(model: &AnalyticDenoiser, sched: &NoiseSchedule, z0: &[Latent], conds: &[ConditionEmbedding], t: usize) -> Vec<f64> {
    let cfg = SamplerConfig { n_steps: 100.min(t.max(1)), ..SamplerConfig::default() };
    let mut rngs: Vec<_> = (0..z0.len()).map(|i| rng_from(77, &[t as u64, i as u64])).collect();
    let rec = reconstruct_batch(z0, conds, t, model, sched, &cfg, &mut rngs).unwrap();
    z0.iter().zip(&rec).map(|(a, b)| anomaly_score(a, b)).collect()
}

#[test]
fn identity_at_zero_and_error_grows_with_t_star() {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mu = Latent::new(vec![0.5, -1.0, 2.0, 0.0]);
    let mix = ArchetypeMixture::new(vec![1.0], vec![mu.clone()], vec![vec![0.25; 4]], vec![vec![1.0]], 1.0).unwrap();
    let model = AnalyticDenoiser::new(mix.clone(), sched.clone());
    let mut rng = rng_from(5, &[]);
    let z0: Vec<Latent> = (0..TRIALS).map(|_| gen_patch(&mix, &mut rng)).collect();
    let conds = vec![ConditionEmbedding::null(1); TRIALS];

    let z = reconstruct(&z0[0], 0, &conds[0], &model, &sched, &SamplerConfig::default(), &mut rng_from(1, &[])).unwrap();
    assert_eq!(z.as_slice(), z0[0].as_slice());

    let mut prev = -1.0;
    for t in [0, 100, 300, 674] {
        let errs = mean_error(&model, &sched, &z0, &conds, t);
        let m = errs.iter().sum::<f64>() / TRIALS as f64;
        assert!(m >= prev, "t*={t}: {m} < {prev}");
        prev = m;
    }
    // small t* keeps the input close to the mode
    let at_mu = vec![mu.clone(); TRIALS];
    let small = mean_error(&model, &sched, &at_mu, &conds, 50).iter().sum::<f64>() / TRIALS as f64;
    let large = mean_error(&model, &sched, &at_mu, &conds, 674).iter().sum::<f64>() / TRIALS as f64;
    assert!(small <= large && small < 0.05, "{small} {large}");
}

#[test]
fn ood_inputs_reconstruct_worse_than_in_distribution_inputs() {
    let cfg = ExperimentConfig::default();
    let spec = cfg.dataset_spec().unwrap();
    let sched = cfg.schedule().unwrap();
    let pool = cfg.keyword_pool(&spec).unwrap();
    let emb = cfg.synthetic_embedder().unwrap();
    let model = AnalyticDenoiser::new(spec.normal.clone(), sched.clone());
    let mut rng = rng_from(9, &[]);
    let mut run = |mix: &ArchetypeMixture| -> Vec<f64> {
        let z0: Vec<Latent> = (0..TRIALS).map(|_| gen_patch(mix, &mut rng)).collect();
        let conds: Vec<ConditionEmbedding> =
            z0.iter().map(|z| condition_for_patch(&emb, &pool, "p", z, 5).unwrap().1).collect();
        mean_error(&model, &sched, &z0, &conds, 674)
    };
    let id = run(&spec.normal);
    let ood = run(&spec.ood);
    // one-sided Mann-Whitney test, normal approximation
    let n = TRIALS as f64;
    let u = auc(&ood, &id).unwrap() * n * n;
    let z = (u - n * n / 2.0) / (n * n * (2.0 * n + 1.0) / 12.0).sqrt();
    assert!(z > 2.326, "z = {z}");
}

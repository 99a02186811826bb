//! `ldad`: dataset generation, training, evaluation, timestep sweeps and
//! keyword statistics for conditioned latent-diffusion anomaly detection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use ldad_core::config::{ConditionMode, DenoiserKind, ExperimentConfig};
use ldad_core::denoiser::{smoothed, train, AdamState, AnalyticDenoiser, Checkpoint, DenoiserNet, EpsModel};
use ldad_core::evaluate::{slide_prompts, training_pairs, EvalData, Evaluator, ReportMeta};
use ldad_core::prompting::{frequencies_csv, keyword_frequencies, ImageEmbedder, KeywordPool};
use ldad_core::synthdata::{gen_dataset, DatasetDir, DatasetSpec, Split};
use ldad_core::NoiseSchedule;

#[derive(Parser, Debug)]
#[command(name = "ldad", version, about = "Conditioned latent-diffusion anomaly detection on synthetic slides")]
struct Cli {
    /// TOML configuration; built-in defaults fill missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    Gen(OutArgs),
    /// Train the network denoiser.
    Train {
        #[command(flatten)]
        io: DataOutArgs,
        /// Continue from this checkpoint up to `model.steps`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the evaluation protocol at `sampler.t_star`.
    Eval {
        #[command(flatten)]
        io: DataOutArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        t_star: Option<usize>,
    },
    /// Evaluate every `eval.sweep_candidates` timestep and pick the best.
    Sweep {
        #[command(flatten)]
        io: DataOutArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Keyword selection frequencies over test slides.
    Keywords {
        #[command(flatten)]
        io: DataOutArgs,
        /// Restrict to one split (train, val, test_in, test_out).
        #[arg(long)]
        split: Option<String>,
    },
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory; must be absent or empty.
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Debug)]
struct DataOutArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// conditioned or null
    #[arg(long)]
    mode: Option<String>,
    /// Use a trained checkpoint instead of the analytic denoiser.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<ldad_core::Error>().map(|e| e.exit_code()).unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Some(Command::Eval { model, t_star, .. }) => {
            apply_model_args(&mut cfg, model)?;
            if let Some(t) = t_star {
                cfg.sampler.t_star = *t;
            }
        }
        Some(Command::Sweep { model, .. }) => apply_model_args(&mut cfg, model)?,
        _ => {}
    }
    cfg.validate()?;
    if cli.print_config {
        print!("{}", config_text(&cfg));
        return Ok(());
    }
    let command = cli.command.ok_or_else(|| anyhow!("no command given (try --help)"))?;
    rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().context("starting worker threads")?;
    match command {
        Command::Gen(out) => cmd_gen(&cfg, &out),
        Command::Train { io, resume } => cmd_train(&cfg, &io, resume.as_deref()),
        Command::Eval { io, .. } => cmd_eval(&cfg, &io),
        Command::Sweep { io, .. } => cmd_sweep(&cfg, &io),
        Command::Keywords { io, split } => cmd_keywords(&cfg, &io, split.as_deref()),
    }
}

fn apply_model_args(cfg: &mut ExperimentConfig, m: &ModelArgs) -> anyhow::Result<()> {
    if let Some(mode) = &m.mode {
        cfg.eval.mode = mode.parse::<ConditionMode>()?;
    }
    if let Some(ck) = &m.checkpoint {
        cfg.model.kind = DenoiserKind::Trained;
        cfg.model.checkpoint = ck.display().to_string();
    }
    Ok(())
}

fn config_text(cfg: &ExperimentConfig) -> String {
    format!("# config_digest={}\n{}", cfg.digest(), cfg.to_toml())
}

/// Creates `dir`, refusing to reuse a non-empty one unless `overwrite`.
fn prepare_out(cfg: &ExperimentConfig, out: &OutArgs) -> anyhow::Result<()> {
    if out.out.exists() {
        let non_empty = std::fs::read_dir(&out.out)
            .with_context(|| format!("reading {}", out.out.display()))?
            .next()
            .is_some();
        if non_empty && !out.overwrite {
            bail!("output directory {} is not empty (pass --overwrite to reuse it)", out.out.display());
        }
    }
    std::fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
    write(&out.out.join("config.toml"), config_text(cfg))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(cfg: &ExperimentConfig, out: &OutArgs) -> anyhow::Result<()> {
    let spec = cfg.dataset_spec()?;
    prepare_out(cfg, out)?;
    let manifest = gen_dataset(&spec, &out.out)?;
    println!(
        "wrote {} slides ({} train, {} val, {} test_in, {} test_out) to {}",
        manifest.rows.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::TestIn),
        manifest.count(Split::TestOut),
        out.out.display()
    );
    println!("dataset_digest={}", manifest.dataset_digest);
    Ok(())
}

/// The dataset on disk, checked against the one this configuration describes.
fn open_dataset(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<(DatasetDir, DatasetSpec)> {
    let data = DatasetDir::open(dir)?;
    let spec = cfg.dataset_spec()?;
    let expected = spec.digest();
    if data.manifest.dataset_digest != expected {
        return Err(ldad_core::Error::DigestMismatch {
            what: format!("dataset at {} was generated from a different [data] section or seed", dir.display()),
            expected,
            found: data.manifest.dataset_digest.clone(),
        }
        .into());
    }
    Ok((data, spec))
}

fn cmd_train(cfg: &ExperimentConfig, io: &DataOutArgs, resume: Option<&Path>) -> anyhow::Result<()> {
    let (data, spec) = open_dataset(cfg, &io.data)?;
    let sched = cfg.schedule()?;
    let pool = cfg.keyword_pool(&spec)?;
    let embedder = cfg.image_embedder()?;
    let (mut net, mut adam, start) = match resume {
        Some(path) => {
            let ck = Checkpoint::load_checked(path, spec.latent_dim(), pool.dim())?;
            if ck.dataset_digest != data.manifest.dataset_digest {
                bail!("checkpoint {} was trained on a different dataset", path.display());
            }
            if ck.schedule != sched.params() {
                bail!("checkpoint {} uses a different noise schedule", path.display());
            }
            (ck.net, ck.adam, ck.step)
        }
        None => {
            let net = DenoiserNet::new(cfg.net_shape(pool.dim()), cfg.seed)?;
            let adam = AdamState::new(net.num_params());
            (net, adam, 0)
        }
    };
    prepare_out(cfg, &io.out)?;
    let slides = data.load_split(Split::Train)?;
    let pairs = training_pairs(&slides, embedder.as_ref(), &pool, cfg.prompt.top_k)?;
    let h = cfg.train_hyper();
    let outcome = train(&mut net, &mut adam, start, &pairs, &sched, &h)?;
    let step = start.max(h.steps);
    let ck = Checkpoint {
        net,
        adam,
        step,
        schedule: sched.params(),
        config_digest: cfg.digest(),
        dataset_digest: data.manifest.dataset_digest.clone(),
    };
    ck.save(&io.out.out.join("checkpoint.txt"))?;

    let losses: Vec<f64> = outcome.losses.iter().map(|x| x.1).collect();
    let smooth = smoothed(&losses, cfg.model.smoothing_window);
    let mut csv = format!("# config_digest={}\nstep,loss,smoothed\n", cfg.digest());
    let last = outcome.losses.len().saturating_sub(1);
    for (i, (s, l)) in outcome.losses.iter().enumerate() {
        if s % cfg.model.log_every == 0 || i == last {
            let _ = writeln!(csv, "{s},{l:?},{:?}", smooth[i]);
        }
    }
    write(&io.out.out.join("loss.csv"), csv)?;
    if let (Some(first), Some(last)) = (smooth.first(), smooth.last()) {
        println!("trained steps {start}..{step}: smoothed loss {first:.4} -> {last:.4}");
    } else {
        println!("checkpoint already at step {step}; nothing to do");
    }
    Ok(())
}

/// Analytic oracle or trained network, per configuration.
fn load_model(
    cfg: &ExperimentConfig,
    spec: &DatasetSpec,
    sched: &NoiseSchedule,
    pool: &KeywordPool,
    dataset_digest: &str,
) -> anyhow::Result<Box<dyn EpsModel>> {
    match cfg.model.kind {
        DenoiserKind::Analytic => Ok(Box::new(AnalyticDenoiser::new(spec.normal.clone(), sched.clone()))),
        DenoiserKind::Trained => {
            let path = Path::new(&cfg.model.checkpoint);
            let ck = Checkpoint::load_checked(path, spec.latent_dim(), pool.dim())?;
            if ck.dataset_digest != dataset_digest {
                return Err(ldad_core::Error::DigestMismatch {
                    what: format!("checkpoint {} was trained on a different dataset", path.display()),
                    expected: dataset_digest.to_string(),
                    found: ck.dataset_digest,
                }
                .into());
            }
            if ck.schedule != sched.params() {
                bail!("checkpoint {} uses a different noise schedule", path.display());
            }
            Ok(Box::new(ck.net))
        }
    }
}

struct EvalSetup {
    sched: NoiseSchedule,
    pool: KeywordPool,
    embedder: Box<dyn ImageEmbedder>,
    model: Box<dyn EpsModel>,
    data: EvalData,
    meta: ReportMeta,
}

impl EvalSetup {
    fn new(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Self> {
        let (data, spec) = open_dataset(cfg, dir)?;
        let sched = cfg.schedule()?;
        let pool = cfg.keyword_pool(&spec)?;
        let embedder = cfg.image_embedder()?;
        let model = load_model(cfg, &spec, &sched, &pool, &data.manifest.dataset_digest)?;
        let meta = ReportMeta { config_digest: cfg.digest(), dataset_digest: data.manifest.dataset_digest.clone() };
        Ok(EvalSetup { sched, pool, embedder, model, data: EvalData::load(&data)?, meta })
    }

    fn evaluator<'a>(&'a self, cfg: &ExperimentConfig) -> Evaluator<'a> {
        Evaluator {
            model: self.model.as_ref(),
            schedule: &self.sched,
            sampler: cfg.sampler_config(),
            embedder: self.embedder.as_ref(),
            pool: &self.pool,
            top_k: cfg.prompt.top_k,
            mode: cfg.eval.mode,
            znorm: cfg.eval.znorm,
            repeats: cfg.eval.repeats,
            seed: cfg.seed,
        }
    }
}

fn cmd_eval(cfg: &ExperimentConfig, io: &DataOutArgs) -> anyhow::Result<()> {
    let setup = EvalSetup::new(cfg, &io.data)?;
    prepare_out(cfg, &io.out)?;
    let outcome = setup.evaluator(cfg).evaluate(&setup.data, cfg.sampler.t_star, &setup.meta)?;
    outcome.write(&io.out.out, cfg.eval.heatmaps, cfg.eval.pgm)?;
    let r = &outcome.report;
    println!(
        "t_star={} mode={:?}: patch AUC {:.4} AUPR {:.4} | slide AUC Z_MAX {:.4} Z_99 {:.4} | DICE {:.4} IoU {:.4} TNR {:.4}",
        r.t_star, r.mode, r.patch_auc, r.patch_aupr, r.slide_auc_zmax, r.slide_auc_z99, r.mean_dice, r.mean_iou, r.mean_tnr
    );
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, io: &DataOutArgs) -> anyhow::Result<()> {
    let setup = EvalSetup::new(cfg, &io.data)?;
    prepare_out(cfg, &io.out)?;
    let sweep = setup.evaluator(cfg).sweep(&setup.data, &cfg.eval.sweep_candidates, &setup.meta)?;
    write(&io.out.out.join("sweep.csv"), sweep.to_csv(&setup.meta.config_digest))?;
    for r in &sweep.rows {
        println!("t_star={:>4}  slide AUC Z_99 {:.4}  Z_MAX {:.4}  patch AUC {:.4}", r.t_star, r.slide_auc_z99, r.slide_auc_zmax, r.patch_auc);
    }
    println!("best t_star={}", sweep.best);
    Ok(())
}

fn cmd_keywords(cfg: &ExperimentConfig, io: &DataOutArgs, split: Option<&str>) -> anyhow::Result<()> {
    let (data, spec) = open_dataset(cfg, &io.data)?;
    let pool = cfg.keyword_pool(&spec)?;
    let embedder = cfg.image_embedder()?;
    let splits = match split {
        Some(s) => vec![s.parse::<Split>()?],
        None => vec![Split::TestIn, Split::TestOut],
    };
    prepare_out(cfg, &io.out)?;
    let mut slides = Vec::new();
    for s in splits {
        slides.extend(data.load_split(s)?);
    }
    let prompts: Vec<_> = slide_prompts(&slides, embedder.as_ref(), &pool, cfg.prompt.top_k)?.into_iter().map(|p| p.0).collect();
    let table = keyword_frequencies(&prompts);
    let csv = format!("# config_digest={}\n{}", cfg.digest(), frequencies_csv(&table)?);
    write(&io.out.out.join("keywords.csv"), csv)?;
    for (k, c) in table.iter().take(10) {
        println!("{c:>8}  {k}");
    }
    Ok(())
}

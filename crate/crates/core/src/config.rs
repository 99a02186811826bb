//! Experiment configuration: TOML with every key defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{ArchetypeMixture, NetShape, TrainHyper};
use crate::error::{Error, Result};
use crate::prompting::{load_pool, synthetic_keyword_names, FileEmbedder, ImageEmbedder, KeywordPool, SyntheticEmbedder};
use crate::sampler::{SamplerConfig, SamplerKind};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::synthdata::{DatasetSpec, MixtureGeometry, RegionSpec, SplitCounts};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub data: DataSection,
    pub prompt: PromptSection,
    pub model: ModelSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    pub n_normal_components: usize,
    pub n_ood_components: usize,
    pub component_radius: f64,
    pub shared_offset: f64,
    pub variance: f64,
    pub kappa: f64,
    pub region_min_count: usize,
    pub region_max_count: usize,
    pub region_min_side: usize,
    pub region_max_side: usize,
    /// JSON file with `normal` and `ood` mixtures; replaces the built-in
    /// geometry when non-empty.
    pub mixture_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub top_k: usize,
    pub keywords_per_archetype: usize,
    pub jitter: f64,
    /// Keyword embedding file; the synthetic pool is used when empty.
    pub pool_path: String,
    /// Precomputed image embeddings keyed by `slide:row:col`; the synthetic
    /// projection is used when empty.
    pub embedding_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    Analytic,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: DenoiserKind,
    /// Checkpoint used when `kind = "trained"`.
    pub checkpoint: String,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub p_drop: f64,
    /// Loss-curve logging interval in steps.
    pub log_every: usize,
    pub smoothing_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub n_steps: usize,
    pub t_star: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    Conditioned,
    Null,
}

impl std::str::FromStr for ConditionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditioned" => Ok(ConditionMode::Conditioned),
            "null" => Ok(ConditionMode::Null),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected conditioned or null)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZNormSource {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: ConditionMode,
    pub znorm: ZNormSource,
    /// Reconstructions averaged per patch.
    pub repeats: usize,
    pub sweep_candidates: Vec<usize>,
    pub heatmaps: bool,
    pub pgm: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let p = ScheduleParams::default();
        ScheduleSection { steps: p.steps, beta_start: p.beta_start, beta_end: p.beta_end }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            latent_dim: 8,
            embed_dim: 16,
            height: 32,
            width: 32,
            n_train: 200,
            n_val: 20,
            n_test_in: 20,
            n_test_out: 20,
            n_normal_components: 4,
            n_ood_components: 2,
            component_radius: 3.0,
            shared_offset: 2.0,
            variance: 0.25,
            kappa: 20.0,
            region_min_count: 1,
            region_max_count: 3,
            region_min_side: 2,
            region_max_side: 8,
            mixture_path: String::new(),
        }
    }
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection {
            top_k: 5,
            keywords_per_archetype: 4,
            jitter: 0.2,
            pool_path: String::new(),
            embedding_path: String::new(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        ModelSection {
            kind: DenoiserKind::Analytic,
            checkpoint: String::new(),
            time_dim: 16,
            hidden: vec![128, 128],
            learning_rate: h.learning_rate,
            batch_size: h.batch_size,
            steps: h.steps,
            p_drop: h.p_drop,
            log_every: 100,
            smoothing_window: 500,
        }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSection { kind: s.kind, n_steps: s.n_steps, t_star: 500 }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            mode: ConditionMode::Conditioned,
            znorm: ZNormSource::Val,
            repeats: 1,
            sweep_candidates: (1..=8).map(|i| i * 125).collect(),
            heatmaps: true,
            pgm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureFile {
    normal: ArchetypeMixture,
    ood: ArchetypeMixture,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Fully resolved TOML, every key present.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of [`Self::to_toml`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks cross-key constraints. Messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let s = &self.schedule;
        NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end)
            .map_err(|e| Error::Config(format!("schedule: {e}")))?;
        let d = &self.data;
        if d.region_max_side > d.height.min(d.width) {
            return err(format!(
                "data.region_max_side ({}) exceeds the {}x{} grid",
                d.region_max_side, d.height, d.width
            ));
        }
        if d.region_min_side == 0 || d.region_min_side > d.region_max_side {
            return err(format!("data.region_min_side ({}) must be in 1..=data.region_max_side", d.region_min_side));
        }
        if d.region_min_count == 0 || d.region_min_count > d.region_max_count {
            return err(format!("data.region_min_count ({}) must be in 1..=data.region_max_count", d.region_min_count));
        }
        if !(d.variance > 0.0) {
            return err("data.variance must be positive".into());
        }
        let p = &self.prompt;
        if p.top_k == 0 || p.top_k % 2 == 0 {
            return err(format!("prompt.top_k must be odd and positive (got {})", p.top_k));
        }
        if p.pool_path.is_empty() && p.top_k > d.n_normal_components * p.keywords_per_archetype {
            return err(format!(
                "prompt.top_k ({}) exceeds the synthetic pool size ({})",
                p.top_k,
                d.n_normal_components * p.keywords_per_archetype
            ));
        }
        let m = &self.model;
        if m.batch_size == 0 || m.log_every == 0 {
            return err("model.batch_size and model.log_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&m.p_drop) {
            return err(format!("model.p_drop ({}) must lie in [0, 1]", m.p_drop));
        }
        if m.kind == DenoiserKind::Trained && m.checkpoint.is_empty() {
            return err("model.checkpoint is required when model.kind = \"trained\"".into());
        }
        let sm = &self.sampler;
        if sm.t_star > s.steps {
            return err(format!("sampler.t_star ({}) exceeds schedule.steps ({})", sm.t_star, s.steps));
        }
        if sm.kind == SamplerKind::Plms && (sm.n_steps == 0 || (sm.t_star > 0 && sm.n_steps > sm.t_star)) {
            return err(format!("sampler.n_steps ({}) must be in 1..=sampler.t_star ({})", sm.n_steps, sm.t_star));
        }
        let e = &self.eval;
        if e.repeats == 0 {
            return err("eval.repeats must be positive".into());
        }
        if e.sweep_candidates.is_empty() {
            return err("eval.sweep_candidates must not be empty".into());
        }
        for &c in &e.sweep_candidates {
            if c == 0 || c > s.steps || (sm.kind == SamplerKind::Plms && c < sm.n_steps) {
                return err(format!(
                    "eval.sweep_candidates entry {c} must be in {}..={}",
                    if sm.kind == SamplerKind::Plms { sm.n_steps } else { 1 },
                    s.steps
                ));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig { kind: self.sampler.kind, n_steps: self.sampler.n_steps }
    }

    pub fn geometry(&self) -> MixtureGeometry {
        let d = &self.data;
        MixtureGeometry {
            latent_dim: d.latent_dim,
            n_normal: d.n_normal_components,
            n_ood: d.n_ood_components,
            radius: d.component_radius,
            offset: d.shared_offset,
            variance: d.variance,
            kappa: d.kappa,
        }
    }

    pub fn synthetic_embedder(&self) -> Result<SyntheticEmbedder> {
        SyntheticEmbedder::new(self.data.latent_dim, self.data.embed_dim, self.seed)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let d = &self.data;
        let (normal, ood) = if d.mixture_path.is_empty() {
            self.geometry().build(&self.synthetic_embedder()?)?
        } else {
            let path = PathBuf::from(&d.mixture_path);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let f: MixtureFile =
                serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
            (f.normal, f.ood)
        };
        let spec = DatasetSpec {
            normal,
            ood,
            height: d.height,
            width: d.width,
            counts: SplitCounts { train: d.n_train, val: d.n_val, test_in: d.n_test_in, test_out: d.n_test_out },
            regions: RegionSpec {
                min_count: d.region_min_count,
                max_count: d.region_max_count,
                min_side: d.region_min_side,
                max_side: d.region_max_side,
            },
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Keyword pool from `prompt.pool_path`, or jittered keywords around the
    /// normal archetype means.
    pub fn keyword_pool(&self, spec: &DatasetSpec) -> Result<KeywordPool> {
        let p = &self.prompt;
        let pool = if p.pool_path.is_empty() {
            let names = synthetic_keyword_names(spec.normal.components() * p.keywords_per_archetype);
            self.synthetic_embedder()?.keyword_pool(&spec.normal.means, &names, p.keywords_per_archetype, p.jitter, self.seed)?
        } else {
            load_pool(Path::new(&p.pool_path))?
        };
        if pool.len() < p.top_k {
            return Err(Error::Config(format!("prompt.top_k ({}) exceeds the pool size ({})", p.top_k, pool.len())));
        }
        if pool.dim() != spec.normal.embed_dim() {
            return Err(Error::Config(format!(
                "keyword pool dimension {} differs from archetype embedding dimension {}",
                pool.dim(),
                spec.normal.embed_dim()
            )));
        }
        Ok(pool)
    }

    pub fn image_embedder(&self) -> Result<Box<dyn ImageEmbedder>> {
        if self.prompt.embedding_path.is_empty() {
            Ok(Box::new(self.synthetic_embedder()?))
        } else {
            Ok(Box::new(FileEmbedder::load(Path::new(&self.prompt.embedding_path))?))
        }
    }

    pub fn net_shape(&self, cond_dim: usize) -> NetShape {
        NetShape {
            latent_dim: self.data.latent_dim,
            cond_dim,
            time_dim: self.model.time_dim,
            hidden: self.model.hidden.clone(),
            steps: self.schedule.steps,
        }
    }

    pub fn train_hyper(&self) -> TrainHyper {
        let m = &self.model;
        TrainHyper {
            learning_rate: m.learning_rate,
            batch_size: m.batch_size,
            steps: m.steps,
            p_drop: m.p_drop,
            seed: self.seed,
            ..TrainHyper::default()
        }
    }
}

//! End-to-end protocol: prompts, reconstructions, scores, z-maps, slide
//! scores, segmentations and metrics, plus the timestep sweep.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConditionMode, ZNormSource};
use crate::denoiser::{ConditionEmbedding, EpsModel};
use crate::error::{Error, Result};
use crate::metrics::{auc, aupr, dice_iou, tnr};
use crate::prompting::{condition_for_patch, ImageEmbedder, KeywordPool, WeightedPrompt};
use crate::rng::patch_rng;
use crate::sampler::{reconstruct_batch, SamplerConfig};
use crate::schedule::{Latent, NoiseSchedule};
use crate::scoring::{anomaly_score, erode, fit_zstats, segment, slide_scores, ScoreMap, Stage, ZStats};
use crate::synthdata::{DatasetDir, SlideGrid, Split};

/// Slides used by the protocol.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub val: Vec<SlideGrid>,
    pub test_in: Vec<SlideGrid>,
    pub test_out: Vec<SlideGrid>,
}

impl EvalData {
    pub fn load(dir: &DatasetDir) -> Result<Self> {
        Ok(EvalData {
            val: dir.load_split(Split::Val)?,
            test_in: dir.load_split(Split::TestIn)?,
            test_out: dir.load_split(Split::TestOut)?,
        })
    }

    /// Sorts slides into splits; train slides are ignored.
    pub fn from_slides(slides: impl IntoIterator<Item = SlideGrid>) -> Result<Self> {
        let mut d = EvalData { val: Vec::new(), test_in: Vec::new(), test_out: Vec::new() };
        for s in slides {
            match s.split {
                Split::Train => {}
                Split::Val => d.val.push(s),
                Split::TestIn => d.test_in.push(s),
                Split::TestOut => d.test_out.push(s),
            }
        }
        for (name, v) in [("val", &d.val), ("test_in", &d.test_in), ("test_out", &d.test_out)] {
            if v.is_empty() {
                return Err(Error::Config(format!("evaluation needs `{name}` slides")));
            }
        }
        Ok(d)
    }

    pub fn slides(&self) -> impl Iterator<Item = &SlideGrid> {
        self.val.iter().chain(&self.test_in).chain(&self.test_out)
    }
}

/// Provenance recorded in every report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_digest: String,
    pub dataset_digest: String,
}

/// Model, prompting and sampling settings for one protocol run.
pub struct Evaluator<'a> {
    pub model: &'a dyn EpsModel,
    pub schedule: &'a NoiseSchedule,
    pub sampler: SamplerConfig,
    pub embedder: &'a dyn ImageEmbedder,
    pub pool: &'a KeywordPool,
    pub top_k: usize,
    pub mode: ConditionMode,
    pub znorm: ZNormSource,
    pub repeats: usize,
    pub seed: u64,
}

/// Per-slide prompts and conditions, independent of `t_star`.
#[derive(Debug, Clone)]
pub struct Prepared<'d> {
    pub slide: &'d SlideGrid,
    pub prompts: Vec<WeightedPrompt>,
    pub conds: Vec<ConditionEmbedding>,
}

/// Raw per-cell scores of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideScores {
    pub slide_id: String,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub raw: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSummary {
    pub slide_id: String,
    pub split: Split,
    pub z_max: f64,
    pub z_99: f64,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub tnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub dataset_digest: String,
    pub t_star: usize,
    pub mode: ConditionMode,
    pub zstats: ZStats,
    pub patch_auc: f64,
    pub patch_aupr: f64,
    pub slide_auc_zmax: f64,
    pub slide_aupr_zmax: f64,
    pub slide_auc_z99: f64,
    pub slide_aupr_z99: f64,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_tnr: f64,
    pub slides: Vec<SlideSummary>,
}

/// Heatmaps of one slide at every stage.
#[derive(Debug, Clone)]
pub struct SlideMaps {
    pub raw: ScoreMap,
    pub z: ScoreMap,
    pub eroded: ScoreMap,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub scores: Vec<SlideScores>,
    pub maps: Vec<SlideMaps>,
}

impl Evaluator<'_> {
    /// Prompts and conditions for every cell, slides in parallel.
    pub fn prepare<'d>(&self, data: &'d EvalData) -> Result<Vec<Prepared<'d>>> {
        let slides: Vec<&SlideGrid> = data.slides().collect();
        slides.par_iter().map(|s| self.prepare_slide(s)).collect()
    }

    pub fn prepare_slide<'d>(&self, slide: &'d SlideGrid) -> Result<Prepared<'d>> {
        let n = slide.cells.len();
        if self.mode == ConditionMode::Null {
            return Ok(Prepared { slide, prompts: Vec::new(), conds: vec![ConditionEmbedding::null(self.pool.dim()); n] });
        }
        let mut prompts = Vec::with_capacity(n);
        let mut conds = Vec::with_capacity(n);
        for r in 0..slide.height {
            for c in 0..slide.width {
                let (p, cond) =
                    condition_for_patch(self.embedder, self.pool, &slide.patch_id(r, c), slide.cell(r, c), self.top_k)?;
                prompts.push(p);
                conds.push(cond);
            }
        }
        Ok(Prepared { slide, prompts, conds })
    }

    /// Mean reconstruction error per cell over `repeats` noise draws. Each
    /// draw uses the cell's own RNG, so results do not depend on scheduling.
    pub fn raw_scores(&self, p: &Prepared<'_>, t_star: usize) -> Result<SlideScores> {
        let slide = p.slide;
        let mut raw = vec![0.0; slide.cells.len()];
        for rep in 0..self.repeats {
            let mut rngs: Vec<_> = (0..slide.height)
                .flat_map(|r| (0..slide.width).map(move |c| (r, c)))
                .map(|(r, c)| patch_rng(self.seed, &slide.slide_id, r, c, rep))
                .collect();
            let rec = reconstruct_batch(&slide.cells, &p.conds, t_star, self.model, self.schedule, &self.sampler, &mut rngs)?;
            for ((acc, z0), zh) in raw.iter_mut().zip(&slide.cells).zip(&rec) {
                *acc += anomaly_score(z0, zh);
            }
        }
        for v in raw.iter_mut() {
            *v /= self.repeats as f64;
        }
        Ok(SlideScores {
            slide_id: slide.slide_id.clone(),
            split: slide.split,
            height: slide.height,
            width: slide.width,
            raw,
            mask: slide.mask.clone(),
        })
    }

    pub fn score_all(&self, prepared: &[Prepared<'_>], t_star: usize) -> Result<Vec<SlideScores>> {
        prepared.par_iter().map(|p| self.raw_scores(p, t_star)).collect()
    }

    pub fn evaluate(&self, data: &EvalData, t_star: usize, meta: &ReportMeta) -> Result<EvalOutcome> {
        let prepared = self.prepare(data)?;
        self.evaluate_prepared(&prepared, t_star, meta)
    }

    pub fn evaluate_prepared(&self, prepared: &[Prepared<'_>], t_star: usize, meta: &ReportMeta) -> Result<EvalOutcome> {
        let scores = self.score_all(prepared, t_star)?;
        summarize(scores, self.znorm, t_star, self.mode, meta)
    }

    /// Evaluates every candidate and picks the best slide-level AUC under
    /// Z_99; ties go to the smaller `t_star`.
    pub fn sweep(&self, data: &EvalData, candidates: &[usize], meta: &ReportMeta) -> Result<SweepOutcome> {
        if candidates.is_empty() {
            return Err(Error::Config("eval.sweep_candidates must not be empty".into()));
        }
        let prepared = self.prepare(data)?;
        let mut rows = Vec::with_capacity(candidates.len());
        for &t in candidates {
            if t > self.schedule.steps() {
                return Err(Error::TimestepOutOfRange { t, max: self.schedule.steps() });
            }
            let r = self.evaluate_prepared(&prepared, t, meta)?.report;
            rows.push(SweepRow {
                t_star: t,
                slide_auc_z99: r.slide_auc_z99,
                slide_auc_zmax: r.slide_auc_zmax,
                patch_auc: r.patch_auc,
                mean_dice: r.mean_dice,
            });
        }
        let best = select_best(&rows);
        Ok(SweepOutcome { best, rows })
    }
}

/// Prompts and conditions for every cell of `slides`, slides in parallel,
/// in slide then row-major order.
pub fn slide_prompts(
    slides: &[SlideGrid],
    embedder: &dyn ImageEmbedder,
    pool: &KeywordPool,
    top_k: usize,
) -> Result<Vec<(WeightedPrompt, ConditionEmbedding)>> {
    let per_slide: Vec<Vec<(WeightedPrompt, ConditionEmbedding)>> = slides
        .par_iter()
        .map(|s| {
            let mut out = Vec::with_capacity(s.cells.len());
            for r in 0..s.height {
                for c in 0..s.width {
                    out.push(condition_for_patch(embedder, pool, &s.patch_id(r, c), s.cell(r, c), top_k)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_slide.into_iter().flatten().collect())
}

/// `(z0, condition)` pairs for training.
pub fn training_pairs(
    slides: &[SlideGrid],
    embedder: &dyn ImageEmbedder,
    pool: &KeywordPool,
    top_k: usize,
) -> Result<Vec<(Latent, ConditionEmbedding)>> {
    let prompts = slide_prompts(slides, embedder, pool, top_k)?;
    Ok(slides.iter().flat_map(|s| s.cells.iter().cloned()).zip(prompts.into_iter().map(|p| p.1)).collect())
}

/// Argmax of `slide_auc_z99`, smaller `t_star` on ties.
pub fn select_best(rows: &[SweepRow]) -> usize {
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.slide_auc_z99 > best.slide_auc_z99 || (r.slide_auc_z99 == best.slide_auc_z99 && r.t_star < best.t_star) {
            best = r;
        }
    }
    best.t_star
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_star: usize,
    pub slide_auc_z99: f64,
    pub slide_auc_zmax: f64,
    pub patch_auc: f64,
    pub mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub best: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn to_csv(&self, config_digest: &str) -> String {
        let mut out = format!("# config_digest={config_digest}\n# best_t_star={}\n", self.best);
        out.push_str("t_star,slide_auc_z99,slide_auc_zmax,patch_auc,mean_dice\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:?},{:?},{:?},{:?}", r.t_star, r.slide_auc_z99, r.slide_auc_zmax, r.patch_auc, r.mean_dice);
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Everything downstream of the raw scores: z-statistics, maps, slide
/// scores, segmentations and metrics.
pub fn summarize(
    scores: Vec<SlideScores>,
    znorm: ZNormSource,
    t_star: usize,
    mode: ConditionMode,
    meta: &ReportMeta,
) -> Result<EvalOutcome> {
    let (fit_splits, source): (&[Split], &str) = match znorm {
        ZNormSource::Val => (&[Split::Val], "val"),
        ZNormSource::Test => (&[Split::TestIn, Split::TestOut], "test"),
    };
    let fit: Vec<f64> = scores.iter().filter(|s| fit_splits.contains(&s.split)).flat_map(|s| s.raw.iter().copied()).collect();
    let zstats = fit_zstats(&fit, source)?;

    let mut maps = Vec::with_capacity(scores.len());
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let mut slide_rows = Vec::new();
    let (mut zmax_out, mut zmax_in, mut z99_out, mut z99_in) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut dices, mut ious, mut tnrs) = (Vec::new(), Vec::new(), Vec::new());
    for s in &scores {
        let raw = ScoreMap::new(s.slide_id.clone(), s.height, s.width, s.raw.clone(), Stage::Raw)?;
        let z = raw.normalize(&zstats)?;
        let eroded = erode(&z)?;
        if s.split == Split::TestIn || s.split == Split::TestOut {
            for (&v, &m) in z.values.iter().zip(&s.mask) {
                if m { pos.push(v) } else { neg.push(v) }
            }
            let (z_max, z_99) = slide_scores(&eroded)?;
            let pred = segment(&eroded)?;
            let mut row = SlideSummary { slide_id: s.slide_id.clone(), split: s.split, z_max, z_99, dice: None, iou: None, tnr: None };
            if s.split == Split::TestOut {
                let (d, i) = dice_iou(&pred, &s.mask)?;
                dices.push(d);
                ious.push(i);
                row.dice = Some(d);
                row.iou = Some(i);
                zmax_out.push(z_max);
                z99_out.push(z_99);
            } else {
                let t = tnr(&pred)?;
                tnrs.push(t);
                row.tnr = Some(t);
                zmax_in.push(z_max);
                z99_in.push(z_99);
            }
            slide_rows.push(row);
        }
        maps.push(SlideMaps { raw, z, eroded });
    }
    if dices.is_empty() || tnrs.is_empty() {
        return Err(Error::Config("evaluation needs both test_in and test_out slides".into()));
    }
    let report = EvalReport {
        config_digest: meta.config_digest.clone(),
        dataset_digest: meta.dataset_digest.clone(),
        t_star,
        mode,
        zstats,
        patch_auc: auc(&pos, &neg)?,
        patch_aupr: aupr(&pos, &neg)?,
        slide_auc_zmax: auc(&zmax_out, &zmax_in)?,
        slide_aupr_zmax: aupr(&zmax_out, &zmax_in)?,
        slide_auc_z99: auc(&z99_out, &z99_in)?,
        slide_aupr_z99: aupr(&z99_out, &z99_in)?,
        mean_dice: mean(&dices),
        mean_iou: mean(&ious),
        mean_tnr: mean(&tnrs),
        slides: slide_rows,
    };
    Ok(EvalOutcome { report, scores, maps })
}

impl EvalOutcome {
    /// `slide_id,row,col,raw_score,z,label` for every evaluated cell.
    pub fn scores_csv(&self) -> String {
        let mut out = format!("# config_digest={}\nslide_id,row,col,raw_score,z,label\n", self.report.config_digest);
        for (s, m) in self.scores.iter().zip(&self.maps) {
            for r in 0..s.height {
                for c in 0..s.width {
                    let i = r * s.width + c;
                    let _ = writeln!(out, "{},{r},{c},{:?},{:?},{}", s.slide_id, s.raw[i], m.z.values[i], u8::from(s.mask[i]));
                }
            }
        }
        out
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serialises") + "\n"
    }

    /// Writes `scores.csv`, `report.json` and optionally heatmaps under
    /// `dir`.
    pub fn write(&self, dir: &Path, heatmaps: bool, pgm: bool) -> Result<()> {
        write_file(&dir.join("scores.csv"), self.scores_csv().as_bytes())?;
        write_file(&dir.join("report.json"), self.report_json().as_bytes())?;
        if heatmaps {
            let hdir = dir.join("heatmaps");
            std::fs::create_dir_all(&hdir).map_err(|e| Error::io(&hdir, e))?;
            let header = format!("# config_digest={}\n", self.report.config_digest);
            for m in &self.maps {
                for map in [&m.raw, &m.z, &m.eroded] {
                    let name = format!("{}.{}", map.slide_id, map.stage);
                    write_file(&hdir.join(format!("{name}.csv")), (header.clone() + &map.to_csv()).as_bytes())?;
                    if pgm {
                        let mut bytes = map.to_pgm();
                        // comment line goes right after the magic
                        bytes.splice(3..3, header.bytes());
                        write_file(&hdir.join(format!("{name}.pgm")), &bytes)?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a `scores.csv` back into per-slide raw scores. Splits come from
/// `split_of`; grid sizes from the largest row and column seen.
pub fn parse_scores_csv(text: &str, path: &Path, split_of: &HashMap<String, Split>) -> Result<Vec<SlideScores>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, Vec<(usize, usize, f64, bool)>> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let bad = |m: String| Error::parse(path, line, m);
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        let r: usize = rec[1].parse().map_err(|e| bad(format!("row: {e}")))?;
        let c: usize = rec[2].parse().map_err(|e| bad(format!("col: {e}")))?;
        let raw: f64 = rec[3].parse().map_err(|e| bad(format!("raw_score: {e}")))?;
        let label = match &rec[5] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("label must be 0 or 1, found `{other}`"))),
        };
        if !cells.contains_key(&id) {
            order.push(id.clone());
        }
        cells.entry(id).or_default().push((r, c, raw, label));
    }
    order
        .into_iter()
        .map(|id| {
            let v = &cells[&id];
            let height = v.iter().map(|x| x.0).max().unwrap_or(0) + 1;
            let width = v.iter().map(|x| x.1).max().unwrap_or(0) + 1;
            if v.len() != height * width {
                return Err(Error::parse(path, 0, format!("slide `{id}` has {} of {} cells", v.len(), height * width)));
            }
            let mut raw = vec![0.0; height * width];
            let mut mask = vec![false; height * width];
            for &(r, c, s, m) in v {
                raw[r * width + c] = s;
                mask[r * width + c] = m;
            }
            let split = *split_of.get(&id).ok_or_else(|| Error::Config(format!("slide `{id}` is not in the manifest")))?;
            Ok(SlideScores { slide_id: id, split, height, width, raw, mask })
        })
        .collect()
}

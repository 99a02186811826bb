//! Anomaly scores, z-normalisation, heatmap erosion and slide-level scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Latent;

/// Mean squared difference over latent coordinates.
pub fn anomaly_score(z0: &Latent, z0_hat: &Latent) -> f64 {
    debug_assert_eq!(z0.dim(), z0_hat.dim());
    z0.squared_distance(z0_hat) / z0.dim() as f64
}

/// Minimum number of scores accepted by [`fit_zstats`].
pub const MIN_ZSTATS_SCORES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZStats {
    pub mean: f64,
    pub std: f64,
    /// Which split the statistics came from.
    pub source: String,
}

/// Mean and population standard deviation.
pub fn fit_zstats(scores: &[f64], source: &str) -> Result<ZStats> {
    if scores.len() < MIN_ZSTATS_SCORES {
        return Err(Error::DegenerateStats(format!(
            "{} scores from `{source}`, need at least {MIN_ZSTATS_SCORES}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateStats(format!("scores from `{source}` have zero or non-finite variance")));
    }
    Ok(ZStats { mean, std, source: source.to_string() })
}

pub fn zscore(score: f64, stats: &ZStats) -> f64 {
    (score - stats.mean) / stats.std
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Z,
    Eroded,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::Z => "z",
            Stage::Eroded => "eroded",
        })
    }
}

/// Row-major `H x W` grid of per-cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub slide_id: String,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub stage: Stage,
}

impl ScoreMap {
    pub fn new(slide_id: impl Into<String>, height: usize, width: usize, values: Vec<f64>, stage: Stage) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::Shape(format!("score map of {} values for a {height}x{width} grid", values.len())));
        }
        Ok(ScoreMap { slide_id: slide_id.into(), height, width, values, stage })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    fn expect(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Invariant(format!(
                "score map {} is at stage `{}`, expected `{stage}`",
                self.slide_id, self.stage
            )));
        }
        Ok(())
    }

    /// raw -> z.
    pub fn normalize(&self, stats: &ZStats) -> Result<ScoreMap> {
        self.expect(Stage::Raw)?;
        Ok(ScoreMap { values: self.values.iter().map(|&s| zscore(s, stats)).collect(), stage: Stage::Z, ..self.clone() })
    }

    /// Comma-separated grid, one row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// 8-bit binary PGM, linearly scaled between the map's min and max.
    pub fn to_pgm(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }
}

/// 2x2 min filter anchored at the top-left cell, clamping at the bottom and
/// right edges.
pub fn erode(map: &ScoreMap) -> Result<ScoreMap> {
    map.expect(Stage::Z)?;
    let (h, w) = (map.height, map.width);
    let mut values = Vec::with_capacity(h * w);
    for i in 0..h {
        let i2 = (i + 1).min(h - 1);
        for j in 0..w {
            let j2 = (j + 1).min(w - 1);
            values.push(map.get(i, j).min(map.get(i, j2)).min(map.get(i2, j)).min(map.get(i2, j2)));
        }
    }
    Ok(ScoreMap { values, stage: Stage::Eroded, ..map.clone() })
}

/// Number of cells averaged into Z_99: everything above the nearest-rank
/// 99th percentile, at least one.
pub fn top_percentile_count(n: usize) -> usize {
    let rank = (99 * n).div_ceil(100);
    (n - rank).max(1)
}

/// `(Z_MAX, Z_99)` of an eroded map.
pub fn slide_scores(map: &ScoreMap) -> Result<(f64, f64)> {
    map.expect(Stage::Eroded)?;
    let mut sorted = map.values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = top_percentile_count(sorted.len());
    let z99 = sorted[..m].iter().sum::<f64>() / m as f64;
    Ok((sorted[0], z99))
}

/// Cells with `z > 0`.
pub fn segment(map: &ScoreMap) -> Result<Vec<bool>> {
    map.expect(Stage::Eroded)?;
    Ok(map.values.iter().map(|&z| z > 0.0).collect())
}

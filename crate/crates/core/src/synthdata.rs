//! Synthetic slides: grids of patch latents drawn from a normal mixture, with
//! rectangular regions of out-of-distribution patches in `test_out` slides.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::ArchetypeMixture;
use crate::error::{Error, Result};
use crate::prompting::SyntheticEmbedder;
use crate::rng::{derive_seed, standard_normal, Rng};
use crate::schedule::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    TestIn,
    TestOut,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::TestIn, Split::TestOut];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestIn => "test_in",
            Split::TestOut => "test_out",
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::TestIn => 2,
            Split::TestOut => 3,
        }
    }

    fn from_code(c: u8) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.code() == c)
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestIn => "in",
            Split::TestOut => "out",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_in: usize,
    pub test_out: usize,
}

impl SplitCounts {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::TestIn => self.test_in,
            Split::TestOut => self.test_out,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test_in + self.test_out
    }
}

/// Anomaly-region geometry for `test_out` slides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub min_count: usize,
    pub max_count: usize,
    pub min_side: usize,
    pub max_side: usize,
}

/// Axis-aligned rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Everything that determines a dataset's bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub normal: ArchetypeMixture,
    pub ood: ArchetypeMixture,
    pub height: usize,
    pub width: usize,
    pub counts: SplitCounts,
    pub regions: RegionSpec,
    pub seed: u64,
}

/// Parameters of the built-in archetype layout.
///
/// Component means are `offset * 1/sqrt(d) + radius * e_k`: normal components
/// use the first axes, OOD components the following ones, so every pair of
/// means is `radius * sqrt(2)` apart and all share a common direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureGeometry {
    pub latent_dim: usize,
    pub n_normal: usize,
    pub n_ood: usize,
    pub radius: f64,
    pub offset: f64,
    pub variance: f64,
    pub kappa: f64,
}

impl MixtureGeometry {
    pub fn mean(&self, axis: usize) -> Latent {
        let shared = self.offset / (self.latent_dim as f64).sqrt();
        Latent::new((0..self.latent_dim).map(|d| shared + if d == axis { self.radius } else { 0.0 }).collect())
    }

    /// Normal and OOD mixtures with archetype embeddings from `embedder`.
    pub fn build(&self, embedder: &SyntheticEmbedder) -> Result<(ArchetypeMixture, ArchetypeMixture)> {
        if self.n_normal == 0 || self.n_ood == 0 {
            return Err(Error::Config("data.n_normal_components and data.n_ood_components must be positive".into()));
        }
        if self.n_normal + self.n_ood > self.latent_dim {
            return Err(Error::Config(format!(
                "data.n_normal_components + data.n_ood_components ({}) exceeds data.latent_dim ({})",
                self.n_normal + self.n_ood,
                self.latent_dim
            )));
        }
        let make = |axes: std::ops::Range<usize>| -> Result<ArchetypeMixture> {
            let k = axes.len();
            let means: Vec<Latent> = axes.map(|a| self.mean(a)).collect();
            let emb = means.iter().map(|m| embedder.embed_latent(m.as_slice())).collect::<Result<Vec<_>>>()?;
            let mut weights = vec![1.0 / k as f64; k];
            let rest: f64 = weights[1..].iter().sum();
            weights[0] = 1.0 - rest;
            ArchetypeMixture::new(weights, means, vec![vec![self.variance; self.latent_dim]; k], emb, self.kappa)
        };
        Ok((make(0..self.n_normal)?, make(self.n_normal..self.n_normal + self.n_ood)?))
    }
}

impl DatasetSpec {
    /// Checks counts, region geometry and mean separation.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("data.height and data.width must be positive".into()));
        }
        if self.counts.val == 0 || self.counts.test_in == 0 || self.counts.test_out == 0 || self.counts.train == 0 {
            return Err(Error::Config("every split count (data.n_train, data.n_val, data.n_test_in, data.n_test_out) must be positive".into()));
        }
        let r = &self.regions;
        if r.min_count == 0 || r.min_count > r.max_count {
            return Err(Error::Config("data.region_min_count must be in 1..=data.region_max_count".into()));
        }
        if r.min_side == 0 || r.min_side > r.max_side {
            return Err(Error::Config("data.region_min_side must be in 1..=data.region_max_side".into()));
        }
        if r.max_side > self.height || r.max_side > self.width {
            return Err(Error::Config(format!(
                "data.region_max_side ({}) exceeds the {}x{} grid",
                r.max_side, self.height, self.width
            )));
        }
        self.normal.validate()?;
        self.ood.validate()?;
        if self.normal.dim() != self.ood.dim() {
            return Err(Error::Config("normal and OOD mixtures differ in latent dimension".into()));
        }
        let sep = self.separation();
        let need = 4.0 * self.normal.max_std().max(self.ood.max_std());
        if sep < need {
            return Err(Error::Config(format!(
                "OOD means are {sep:.4} from the nearest normal mean, need at least {need:.4} (4 standard deviations)"
            )));
        }
        Ok(())
    }

    /// Smallest distance between an OOD mean and a normal mean.
    pub fn separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for o in &self.ood.means {
            for n in &self.normal.means {
                best = best.min(o.squared_distance(n).sqrt());
            }
        }
        best
    }

    pub fn latent_dim(&self) -> usize {
        self.normal.dim()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn slide_id(split: Split, index: usize) -> String {
        format!("{}-{index:04}", split.id_prefix())
    }

    pub fn slide_seed(&self, split: Split, index: usize) -> u64 {
        derive_seed(self.seed, &[0x736c_6964_65, u64::from(split.code()), index as u64])
    }
}

/// An `H x W` grid of patch latents with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideGrid {
    pub slide_id: String,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub cells: Vec<Latent>,
    /// Row-major; `true` marks an anomalous cell.
    pub mask: Vec<bool>,
}

impl SlideGrid {
    pub fn dim(&self) -> usize {
        self.cells.first().map(|c| c.dim()).unwrap_or(0)
    }

    pub fn cell(&self, row: usize, col: usize) -> &Latent {
        &self.cells[row * self.width + col]
    }

    pub fn anomalous_cells(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn patch_id(&self, row: usize, col: usize) -> String {
        format!("{}:{row}:{col}", self.slide_id)
    }

    fn mask_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.mask.len().div_ceil(8)];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn mask_digest(&self) -> String {
        hex::encode(&Sha256::digest(self.mask_bytes())[..8])
    }

    /// Binary record: magic, `H W dim` (u32 LE), id length and bytes, split
    /// code, row-major f64 LE latents, then the mask packed LSB-first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.cells.len() * self.dim() * 8);
        out.extend_from_slice(SLIDE_MAGIC);
        for v in [self.height, self.width, self.dim(), self.slide_id.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(self.slide_id.as_bytes());
        out.push(self.split.code());
        for c in &self.cells {
            for v in c.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend(self.mask_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::parse(path, 0, m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated slide file"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != SLIDE_MAGIC {
            return Err(bad("not a slide file"));
        }
        let mut u32s = [0usize; 4];
        for v in u32s.iter_mut() {
            *v = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let [height, width, dim, id_len] = u32s;
        let slide_id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("slide id is not UTF-8"))?;
        let split = Split::from_code(take(1)?[0]).ok_or_else(|| bad("unknown split code"))?;
        let n = height * width;
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            let raw = take(dim * 8)?;
            cells.push(Latent::new(
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            ));
        }
        let packed = take(n.div_ceil(8))?;
        let mask = (0..n).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
        if pos != bytes.len() {
            return Err(bad("trailing bytes in slide file"));
        }
        Ok(SlideGrid { slide_id, split, height, width, cells, mask })
    }
}

const SLIDE_MAGIC: &[u8; 8] = b"LDADSLD1";

/// Draws one latent: a component by weight, then a diagonal Gaussian.
/// Returns the component index as well.
pub fn gen_patch_with_component(mix: &ArchetypeMixture, rng: &mut Rng) -> (Latent, usize) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = mix.components() - 1;
    for (i, w) in mix.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            k = i;
            break;
        }
    }
    let mu = mix.means[k].as_slice();
    let var = &mix.variances[k];
    let z = (0..mix.dim()).map(|d| mu[d] + var[d].sqrt() * standard_normal(rng)).collect();
    (Latent::new(z), k)
}

pub fn gen_patch(mix: &ArchetypeMixture, rng: &mut Rng) -> Latent {
    gen_patch_with_component(mix, rng).0
}

/// Random rectangles for a `test_out` slide.
pub fn draw_regions(spec: &DatasetSpec, rng: &mut Rng) -> Result<Vec<Rect>> {
    let r = &spec.regions;
    if r.max_side > spec.height || r.max_side > spec.width {
        return Err(Error::Generation(format!(
            "region side up to {} does not fit a {}x{} grid",
            r.max_side, spec.height, spec.width
        )));
    }
    let count = rng.random_range(r.min_count..=r.max_count);
    Ok((0..count)
        .map(|_| {
            let height = rng.random_range(r.min_side..=r.max_side);
            let width = rng.random_range(r.min_side..=r.max_side);
            let row = rng.random_range(0..=spec.height - height);
            let col = rng.random_range(0..=spec.width - width);
            Rect { row, col, height, width }
        })
        .collect())
}

/// Fills a grid, planting OOD patches inside `regions`.
pub fn gen_slide_with_regions(
    spec: &DatasetSpec,
    split: Split,
    slide_id: String,
    regions: &[Rect],
    rng: &mut Rng,
) -> Result<SlideGrid> {
    let (h, w) = (spec.height, spec.width);
    let mut mask = vec![false; h * w];
    for r in regions {
        if r.row + r.height > h || r.col + r.width > w {
            return Err(Error::Generation(format!("region {r:?} exceeds the {h}x{w} grid")));
        }
        for i in r.row..r.row + r.height {
            for j in r.col..r.col + r.width {
                mask[i * w + j] = true;
            }
        }
    }
    let cells = mask
        .iter()
        .map(|&m| if m { gen_patch(&spec.ood, rng) } else { gen_patch(&spec.normal, rng) })
        .collect();
    Ok(SlideGrid { slide_id, split, height: h, width: w, cells, mask })
}

/// One slide of the given split; only `test_out` slides receive anomalies.
pub fn gen_slide(spec: &DatasetSpec, split: Split, slide_id: String, rng: &mut Rng) -> Result<SlideGrid> {
    let regions = if split == Split::TestOut { draw_regions(spec, rng)? } else { Vec::new() };
    gen_slide_with_regions(spec, split, slide_id, &regions, rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub slide_id: String,
    pub split: Split,
    pub n_anomalous_cells: usize,
    pub seed: u64,
    pub mask_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dataset_digest: String,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# dataset_digest={}\nslide_id,split,n_anomalous_cells,seed,mask_digest\n", self.dataset_digest);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.slide_id, r.split, r.n_anomalous_cells, r.seed, r.mask_digest);
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let first = text.lines().next().unwrap_or_default();
        let dataset_digest = first
            .strip_prefix("# dataset_digest=")
            .ok_or_else(|| Error::parse(path, 1, "missing `# dataset_digest=` header"))?
            .to_string();
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 3;
            let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if rec.len() != 5 {
                return Err(Error::parse(path, line, format!("expected 5 columns, found {}", rec.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| Error::parse(path, line, e.to_string()));
            rows.push(ManifestRow {
                slide_id: rec[0].to_string(),
                split: rec[1].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
                n_anomalous_cells: num(&rec[2])? as usize,
                seed: num(&rec[3])?,
                mask_digest: rec[4].to_string(),
            });
        }
        Ok(Manifest { dataset_digest, rows })
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }
}

fn slide_path(root: &Path, id: &str) -> PathBuf {
    root.join("slides").join(format!("{id}.slide"))
}

/// Generates every slide in memory, in manifest order.
pub fn generate_slides(spec: &DatasetSpec) -> Result<Vec<(SlideGrid, u64)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.counts.total());
    for split in Split::ALL {
        for i in 0..spec.counts.get(split) {
            let seed = spec.slide_seed(split, i);
            let mut rng = crate::rng::rng_from(seed, &[]);
            out.push((gen_slide(spec, split, DatasetSpec::slide_id(split, i), &mut rng)?, seed));
        }
    }
    Ok(out)
}

/// Writes `dataset.json`, `manifest.csv` and `slides/*.slide` under `root`.
pub fn gen_dataset(spec: &DatasetSpec, root: &Path) -> Result<Manifest> {
    let slides = generate_slides(spec)?;
    let slides_dir = root.join("slides");
    std::fs::create_dir_all(&slides_dir).map_err(|e| Error::io(&slides_dir, e))?;
    let mut rows = Vec::with_capacity(slides.len());
    for (slide, seed) in &slides {
        let path = slide_path(root, &slide.slide_id);
        std::fs::write(&path, slide.to_bytes()).map_err(|e| Error::io(&path, e))?;
        rows.push(ManifestRow {
            slide_id: slide.slide_id.clone(),
            split: slide.split,
            n_anomalous_cells: slide.anomalous_cells(),
            seed: *seed,
            mask_digest: slide.mask_digest(),
        });
    }
    let manifest = Manifest { dataset_digest: spec.digest(), rows };
    let spec_path = root.join("dataset.json");
    let json = serde_json::to_string_pretty(spec).expect("spec serialises");
    std::fs::write(&spec_path, json + "\n").map_err(|e| Error::io(&spec_path, e))?;
    let mpath = root.join("manifest.csv");
    std::fs::write(&mpath, manifest.to_csv()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// A dataset on disk.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl DatasetDir {
    pub fn open(root: &Path) -> Result<Self> {
        let mpath = root.join("manifest.csv");
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Ok(DatasetDir { root: root.to_path_buf(), manifest: Manifest::parse(&text, &mpath)? })
    }

    pub fn spec(&self) -> Result<DatasetSpec> {
        let path = self.root.join("dataset.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
    }

    pub fn load_slide(&self, id: &str) -> Result<SlideGrid> {
        let path = slide_path(&self.root, id);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        SlideGrid::from_bytes(&bytes, &path)
    }

    /// All slides of a split in manifest order; errors if the split is empty.
    pub fn load_split(&self, split: Split) -> Result<Vec<SlideGrid>> {
        let ids: Vec<&str> = self.manifest.rows.iter().filter(|r| r.split == split).map(|r| r.slide_id.as_str()).collect();
        if ids.is_empty() {
            return Err(Error::Config(format!("dataset at {} has no `{split}` slides", self.root.display())));
        }
        ids.into_iter().map(|id| self.load_slide(id)).collect()
    }
}

//! Keyword pool, image-keyword alignment and weighted condition composition.
//!
//! A patch is aligned with every keyword by cosine similarity; the top `k`
//! keywords are kept and weighted by their similarity divided by the median
//! selected similarity. The condition is the weight-normalised blend of the
//! selected keyword embeddings.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{dot, norm, ConditionEmbedding};
use crate::error::{Error, Result};
use crate::rng::{rng_from, standard_normal};
use crate::schedule::Latent;

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub keyword: String,
    pub embedding: Vec<f64>,
}

/// Unique keywords with unit-norm embeddings of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordPool {
    dim: usize,
    entries: Vec<KeywordEntry>,
}

impl KeywordPool {
    pub fn new(entries: Vec<KeywordEntry>) -> Result<Self> {
        let dim = entries.first().map(|e| e.embedding.len()).unwrap_or(0);
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.keyword.as_str()) {
                return Err(Error::Config(format!("duplicate keyword `{}`", e.keyword)));
            }
            if e.embedding.len() != dim {
                return Err(Error::Shape(format!("keyword `{}` has dimension {}, expected {dim}", e.keyword, e.embedding.len())));
            }
            if (norm(&e.embedding) - 1.0).abs() > NORM_TOL {
                return Err(Error::Config(format!("keyword `{}` embedding is not unit-norm", e.keyword)));
            }
        }
        Ok(KeywordPool { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KeywordEntry] {
        &self.entries
    }

    pub fn index_of(&self, keyword: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.keyword == keyword)
    }

    /// Serialises to the embeddings-file format.
    pub fn to_text(&self) -> String {
        embeddings_to_text(self.dim, self.entries.iter().map(|e| (e.keyword.as_str(), e.embedding.as_slice())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn embeddings_to_text<'a>(dim: usize, rows: impl Iterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = format!("dim={dim}\n");
    for (k, v) in rows {
        out.push_str(k);
        out.push('\t');
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{x:?}");
        }
        out.push('\n');
    }
    out
}

/// Parses `dim=<d>` followed by `key<TAB>f f ... f` rows.
fn parse_embeddings(text: &str, path: &Path) -> Result<(usize, Vec<(String, Vec<f64>)>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.trim().parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::parse(path, 1, "expected header `dim=<positive integer>`"))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let key = parts.next().unwrap_or_default();
        let values = parts.next().ok_or_else(|| Error::parse(path, n, "missing TAB between key and values"))?;
        if parts.next().is_some() {
            return Err(Error::parse(path, n, "more than one TAB in row"));
        }
        if key.is_empty() {
            return Err(Error::parse(path, n, "empty key"));
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::parse(path, n, format!("duplicate key `{key}`")));
        }
        let v = values
            .split(' ')
            .map(|x| x.parse::<f64>().map_err(|e| Error::parse(path, n, format!("bad number `{x}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != dim {
            return Err(Error::parse(path, n, format!("expected {dim} values, found {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(path, n, "non-finite value"));
        }
        rows.push((key.to_string(), v));
    }
    Ok((dim, rows))
}

/// Reads a keyword pool from an embeddings file.
pub fn load_pool(path: &Path) -> Result<KeywordPool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pool(&text, path)
}

pub fn parse_pool(text: &str, path: &Path) -> Result<KeywordPool> {
    let (_, rows) = parse_embeddings(text, path)?;
    for (i, (k, v)) in rows.iter().enumerate() {
        if (norm(v) - 1.0).abs() > NORM_TOL {
            // +2: header line and 1-based numbering
            return Err(Error::parse(path, i + 2, format!("embedding of `{k}` is not unit-norm")));
        }
    }
    KeywordPool::new(rows.into_iter().map(|(keyword, embedding)| KeywordEntry { keyword, embedding }).collect())
}

/// Maps a patch to a unit-norm image embedding.
pub trait ImageEmbedder: Sync {
    fn dim(&self) -> usize;

    fn embed(&self, patch_id: &str, z0: &Latent) -> Result<Vec<f64>>;
}

fn normalise(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Stand-in encoder: a fixed seeded projection with orthonormal columns,
/// followed by normalisation. Cosines in embedding space equal cosines in
/// latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEmbedder {
    /// embed_dim rows of latent_dim entries
    projection: Vec<Vec<f64>>,
}

impl SyntheticEmbedder {
    pub fn new(latent_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 || embed_dim < latent_dim {
            return Err(Error::Config(format!(
                "data.embed_dim ({embed_dim}) must be at least data.latent_dim ({latent_dim})"
            )));
        }
        let mut rng = rng_from(seed, &[0x70_726f6a]);
        // Gram-Schmidt on latent_dim random columns of length embed_dim.
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(latent_dim);
        while cols.len() < latent_dim {
            let mut v: Vec<f64> = (0..embed_dim).map(|_| standard_normal(&mut rng)).collect();
            for c in &cols {
                let p = dot(&v, c);
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= p * y;
                }
            }
            let n = norm(&v);
            if n > 1e-6 {
                cols.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let projection = (0..embed_dim).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
        Ok(SyntheticEmbedder { projection })
    }

    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        self.projection.iter().map(|row| dot(row, z)).collect()
    }

    /// `normalize(P z)`.
    pub fn embed_latent(&self, z: &[f64]) -> Result<Vec<f64>> {
        normalise(self.project(z))
    }

    /// Keywords for each archetype mean: `normalize(P mu + jitter)` with a
    /// seeded perturbation whose norm is `jitter` times `|P mu|`.
    pub fn keyword_pool(
        &self,
        archetype_means: &[Latent],
        names: &[String],
        per_archetype: usize,
        jitter: f64,
        seed: u64,
    ) -> Result<KeywordPool> {
        if names.len() != archetype_means.len() * per_archetype {
            return Err(Error::Config("keyword name count must equal archetypes x keywords_per_archetype".into()));
        }
        let mut rng = rng_from(seed, &[0x6b_6579]);
        let d = self.projection.len();
        let mut entries = Vec::with_capacity(names.len());
        for (a, mu) in archetype_means.iter().enumerate() {
            let base = self.project(mu.as_slice());
            let scale = jitter * norm(&base) / (d as f64).sqrt();
            for j in 0..per_archetype {
                let v: Vec<f64> = base.iter().map(|b| b + scale * standard_normal(&mut rng)).collect();
                entries.push(KeywordEntry { keyword: names[a * per_archetype + j].clone(), embedding: normalise(v)? });
            }
        }
        KeywordPool::new(entries)
    }
}

impl ImageEmbedder for SyntheticEmbedder {
    fn dim(&self) -> usize {
        self.projection.len()
    }

    fn embed(&self, _patch_id: &str, z0: &Latent) -> Result<Vec<f64>> {
        self.embed_latent(z0.as_slice())
    }
}

/// Precomputed image embeddings keyed by patch id (`slide:row:col`),
/// normalised on load.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FileEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (dim, rows) = parse_embeddings(&text, path)?;
        let mut table = HashMap::with_capacity(rows.len());
        for (i, (k, v)) in rows.into_iter().enumerate() {
            let v = normalise(v).map_err(|_| Error::parse(path, i + 2, format!("zero embedding for `{k}`")))?;
            table.insert(k, v);
        }
        Ok(FileEmbedder { dim, table })
    }
}

impl ImageEmbedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, patch_id: &str, _z0: &Latent) -> Result<Vec<f64>> {
        self.table
            .get(patch_id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no image embedding for patch `{patch_id}`")))
    }
}

/// Loads an image-embedding provider from a file.
pub fn load_provider(path: &Path) -> Result<FileEmbedder> {
    FileEmbedder::load(path)
}

/// Selected keywords with median-normalised weights, in descending
/// similarity order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrompt {
    pub terms: Vec<(String, f64)>,
}

impl WeightedPrompt {
    /// Renders the prompt in `(keyword)weight` form, e.g. `(germinal center)1.2857`.
    pub fn render(&self) -> String {
        self.terms.iter().map(|(k, w)| format!("({k}){w:.4}")).collect::<Vec<_>>().join(", ")
    }
}

/// Cosine similarity of the image embedding with every pool entry.
pub fn similarities(image_emb: &[f64], pool: &KeywordPool) -> Result<Vec<f64>> {
    if image_emb.len() != pool.dim() {
        return Err(Error::Shape(format!("image embedding dim {} != pool dim {}", image_emb.len(), pool.dim())));
    }
    let n = norm(image_emb);
    if n == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(pool
        .entries()
        .iter()
        .map(|e| (dot(image_emb, &e.embedding) / (n * norm(&e.embedding))).clamp(-1.0, 1.0))
        .collect())
}

/// Top-`k` keywords by similarity (ties go to the lower pool index), each
/// weighted by its similarity over the median selected similarity.
pub fn select_keywords(sims: &[f64], pool: &KeywordPool, k: usize) -> Result<WeightedPrompt> {
    if sims.len() != pool.len() {
        return Err(Error::Shape("one similarity per keyword required".into()));
    }
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("prompt.top_k must be odd and positive (got {k})")));
    }
    if k > pool.len() {
        return Err(Error::Config(format!("prompt.top_k ({k}) exceeds keyword pool size ({})", pool.len())));
    }
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);
    if let Some(&worst) = order.iter().find(|&&i| !(sims[i] > 0.0)) {
        return Err(Error::DegeneratePool { value: sims[worst] });
    }
    let median = sims[order[k / 2]];
    let terms = order
        .iter()
        .map(|&i| (pool.entries()[i].keyword.clone(), sims[i] / median))
        .collect();
    Ok(WeightedPrompt { terms })
}

/// `c = sum_i w_i e_i / sum_i w_i`; the empty prompt maps to the null
/// condition.
pub fn compose_condition(prompt: &WeightedPrompt, pool: &KeywordPool) -> Result<ConditionEmbedding> {
    if prompt.terms.is_empty() {
        return Ok(ConditionEmbedding::null(pool.dim()));
    }
    let mut acc = vec![0.0; pool.dim()];
    let mut total = 0.0;
    for (kw, w) in &prompt.terms {
        let idx = pool.index_of(kw).ok_or_else(|| Error::Config(format!("keyword `{kw}` not in pool")))?;
        for (a, e) in acc.iter_mut().zip(&pool.entries()[idx].embedding) {
            *a += w * e;
        }
        total += w;
    }
    ConditionEmbedding::new(acc.into_iter().map(|a| a / total).collect())
}

/// Full prompting path for one patch.
pub fn condition_for_patch(
    embedder: &dyn ImageEmbedder,
    pool: &KeywordPool,
    patch_id: &str,
    z0: &Latent,
    k: usize,
) -> Result<(WeightedPrompt, ConditionEmbedding)> {
    let emb = embedder.embed(patch_id, z0)?;
    let sims = similarities(&emb, pool)?;
    let prompt = select_keywords(&sims, pool, k)?;
    let cond = compose_condition(&prompt, pool)?;
    Ok((prompt, cond))
}

/// Selection counts, sorted by descending count then keyword.
pub fn keyword_frequencies(prompts: &[WeightedPrompt]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in prompts {
        for (k, _) in &p.terms {
            *counts.entry(k.as_str()).or_default() += 1;
        }
    }
    let mut table: Vec<(String, usize)> = counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table
}

/// `keyword,count` CSV.
pub fn frequencies_csv(table: &[(String, usize)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["keyword", "count"]).map_err(csv_err)?;
    for (k, c) in table {
        w.write_record([k.as_str(), &c.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 input"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invariant(format!("csv: {e}"))
}

/// Names for the built-in synthetic pool, four per archetype.
pub const SYNTHETIC_KEYWORDS: [&str; 16] = [
    "small mature lymphocytes",
    "dense lymphocytic sheets",
    "round hyperchromatic nuclei",
    "scant cytoplasm",
    "germinal center",
    "tingible body macrophages",
    "centroblasts",
    "follicular dendritic cells",
    "subcapsular sinus",
    "sinus histiocytes",
    "high endothelial venules",
    "medullary cords",
    "fibrous capsule",
    "perinodal adipose tissue",
    "reticular fiber network",
    "plasma cells",
];

/// Keyword names for `n` entries: the built-in names first, then
/// `keyword-<i>`.
pub fn synthetic_keyword_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| SYNTHETIC_KEYWORDS.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("keyword-{i}")))
        .collect()
}

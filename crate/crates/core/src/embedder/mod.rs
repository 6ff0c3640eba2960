//! Vector representations of paragraphs.
//!
//! Backends produce a [`TokenEmbeddingMatrix`] per text, which [`pool`]
//! reduces to one vector. Two backends exist: a remote HTTP service (see
//! [`remote`]) and the deterministic local [`hash`] expansion used for tests
//! and offline runs. An optional [`EmbeddingCache`] sits in front of either.

pub mod cache;
pub mod hash;
pub mod remote;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Subject;
use crate::error::{Error, Result};
use crate::serializer::{self, AspectParagraph, ParagraphKey};
use crate::util::write_atomic;

pub use cache::{cache_key, CacheStats, EmbeddingCache};
use remote::RemoteClient;

/// Row-major `token_count x dim` matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingMatrix {
    tokens: Vec<String>,
    dim: usize,
    values: Vec<f32>,
}

impl TokenEmbeddingMatrix {
    pub fn new(tokens: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dim must be positive".into()));
        }
        if tokens.is_empty() {
            return Err(Error::InvalidParameter("token matrix needs at least one row".into()));
        }
        if values.len() != tokens.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: tokens.len() * dim,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BackendFatal(format!(
                "non-finite embedding value in row {}",
                i / dim
            )));
        }
        Ok(TokenEmbeddingMatrix { tokens, dim, values })
    }

    /// Builds a matrix from explicit rows. Row labels are placeholders.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let tokens = (0..rows.len()).map(|i| format!("#{i}")).collect();
        Self::new(tokens, dim, rows.concat())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingStrategy {
    Mean,
    Cls,
    Max,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 3] = [PoolingStrategy::Mean, PoolingStrategy::Cls, PoolingStrategy::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingStrategy::Mean => "mean",
            PoolingStrategy::Cls => "cls",
            PoolingStrategy::Max => "max",
        }
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolingStrategy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown pooling strategy {s:?}")))
    }
}

/// Reduces a token matrix to one vector. Mean accumulates in `f64`.
pub fn pool(matrix: &TokenEmbeddingMatrix, strategy: PoolingStrategy) -> Vec<f32> {
    let dim = matrix.dim();
    match strategy {
        PoolingStrategy::Cls => matrix.row(0).to_vec(),
        PoolingStrategy::Mean => {
            let mut acc = vec![0.0f64; dim];
            for row in matrix.rows() {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v as f64;
                }
            }
            let n = matrix.token_count() as f64;
            acc.into_iter().map(|a| (a / n) as f32).collect()
        }
        PoolingStrategy::Max => {
            let mut out = matrix.row(0).to_vec();
            for row in matrix.rows().skip(1) {
                for (o, &v) in out.iter_mut().zip(row) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEmbedding {
    pub vector: Vec<f32>,
    pub strategy: PoolingStrategy,
    pub backend_id: String,
    pub aspect: ParagraphKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Hash,
}

/// Shape of a remote service's response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseLevel {
    #[default]
    Token,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemotePolicy {
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemotePolicy {
    fn default() -> Self {
        RemotePolicy {
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 200,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub dim: usize,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    /// Seed of the hash expansion; ignored by remote backends.
    #[serde(default)]
    pub hash_seed: u64,
    #[serde(default)]
    pub level: ResponseLevel,
    /// Pooling applied by a pre-pooled service.
    #[serde(default)]
    pub service_pooling: Option<PoolingStrategy>,
    #[serde(default)]
    pub remote: RemotePolicy,
}

fn default_max_batch() -> usize {
    32
}

impl BackendDescriptor {
    pub fn hash(dim: usize, seed: u64) -> Self {
        BackendDescriptor {
            backend_id: format!("hash-d{dim}-s{seed}"),
            dim,
            kind: BackendKind::Hash,
            endpoint: None,
            max_batch: default_max_batch(),
            hash_seed: seed,
            level: ResponseLevel::Token,
            service_pooling: None,
            remote: RemotePolicy::default(),
        }
    }

    pub fn remote(backend_id: &str, endpoint: &str, dim: usize) -> Self {
        BackendDescriptor {
            backend_id: backend_id.to_string(),
            dim,
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.to_string()),
            max_batch: default_max_batch(),
            hash_seed: 0,
            level: ResponseLevel::Token,
            service_pooling: None,
            remote: RemotePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("backend {}: {m}", self.backend_id)));
        if self.backend_id.is_empty() {
            return Err(Error::InvalidParameter("backend id must be non-empty".into()));
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.max_batch == 0 {
            return bad("max_batch must be positive");
        }
        match (self.kind, &self.endpoint) {
            (BackendKind::Remote, None) => return bad("remote backend requires an endpoint"),
            (BackendKind::Hash, Some(_)) => return bad("hash backend takes no endpoint"),
            _ => {}
        }
        if self.kind == BackendKind::Remote && self.remote.max_in_flight == 0 {
            return bad("max_in_flight must be positive");
        }
        if self.level == ResponseLevel::Pooled && self.service_pooling.is_none() {
            return bad("pre-pooled backend must declare service_pooling");
        }
        Ok(())
    }

    /// Pooling strategies this backend can serve.
    pub fn supported_pooling(&self) -> Vec<PoolingStrategy> {
        match (self.kind, self.level) {
            (BackendKind::Remote, ResponseLevel::Pooled) => self.service_pooling.into_iter().collect(),
            _ => PoolingStrategy::ALL.to_vec(),
        }
    }
}

/// Backend plus optional cache.
pub struct Embedder {
    backend: BackendDescriptor,
    client: Option<RemoteClient>,
    cache: Option<EmbeddingCache>,
}

impl Embedder {
    pub fn new(backend: BackendDescriptor) -> Result<Self> {
        backend.validate()?;
        let client = match backend.kind {
            BackendKind::Remote => Some(RemoteClient::new(backend.clone())?),
            BackendKind::Hash => None,
        };
        Ok(Embedder {
            backend,
            client,
            cache: None,
        })
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend(&self) -> &BackendDescriptor {
        &self.backend
    }

    pub fn cache_stats(&self) -> Option<CacheStats> {
        self.cache.as_ref().map(EmbeddingCache::stats)
    }

    pub fn supported_pooling(&self) -> Vec<PoolingStrategy> {
        self.backend.supported_pooling()
    }

    fn check_pooling(&self, strategy: PoolingStrategy) -> Result<()> {
        if self.supported_pooling().contains(&strategy) {
            Ok(())
        } else {
            Err(Error::UnsupportedPooling {
                backend_id: self.backend.backend_id.clone(),
                requested: strategy.to_string(),
            })
        }
    }

    pub fn embed_tokens(&self, paragraph: &AspectParagraph) -> Result<TokenEmbeddingMatrix> {
        let mut out = self.embed_texts(&[paragraph.text.as_str()])?;
        Ok(out.pop().expect("one text in, one matrix out"))
    }

    /// Embeds texts in input order. Cache hits are served first; misses are
    /// deduplicated, batched by `max_batch` and computed in parallel.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddingMatrix>> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(Error::InvalidParameter("cannot embed empty text".into()));
        }
        let id = self.backend.backend_id.as_str();
        let mut slots: Vec<Option<TokenEmbeddingMatrix>> = match &self.cache {
            Some(c) => texts.par_iter().map(|t| c.lookup(id, t)).collect(),
            None => vec![None; texts.len()],
        };
        let mut misses: Vec<&str> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (t, s) in texts.iter().zip(&slots) {
            if s.is_none() && !seen.contains_key(t) {
                seen.insert(t, misses.len());
                misses.push(t);
            }
        }
        if !misses.is_empty() {
            let computed = self.compute(&misses)?;
            for (m, t) in computed.iter().zip(&misses) {
                if m.dim() != self.backend.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.backend.dim,
                        actual: m.dim(),
                    });
                }
                if let Some(c) = &self.cache {
                    c.store(id, t, m)?;
                }
            }
            for (t, s) in texts.iter().zip(slots.iter_mut()) {
                if s.is_none() {
                    *s = Some(computed[seen[t]].clone());
                }
            }
        }
        Ok(slots.into_iter().map(|s| s.expect("filled")).collect())
    }

    fn compute(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddingMatrix>> {
        match &self.client {
            None => {
                let (dim, seed) = (self.backend.dim, self.backend.hash_seed);
                Ok(texts.par_iter().map(|t| hash::embed(t, dim, seed)).collect())
            }
            Some(client) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(self.backend.remote.max_in_flight)
                    .build()
                    .map_err(|e| Error::BackendFatal(format!("cannot start request pool: {e}")))?;
                let batches: Vec<&[&str]> = texts.chunks(self.backend.max_batch).collect();
                // Collecting an indexed parallel iterator keeps batch order
                // regardless of completion order.
                let results: Vec<Vec<TokenEmbeddingMatrix>> =
                    pool.install(|| batches.par_iter().map(|b| client.embed_batch(b)).collect::<Result<_>>())?;
                Ok(results.into_iter().flatten().collect())
            }
        }
    }

    /// Pooled embeddings of a subject's six aspect paragraphs, in aspect order.
    pub fn embed_subject(
        &self,
        paragraphs: &[AspectParagraph],
        strategy: PoolingStrategy,
    ) -> Result<Vec<PooledEmbedding>> {
        self.check_pooling(strategy)?;
        let mut ordered: Vec<&AspectParagraph> = paragraphs.iter().collect();
        ordered.sort_by_key(|p| p.aspect);
        let keys: Vec<ParagraphKey> = ordered.iter().map(|p| p.aspect).collect();
        let expected: Vec<ParagraphKey> = serializer::AspectId::ALL.iter().map(|&a| a.into()).collect();
        if keys != expected {
            return Err(Error::InvalidParagraphs(
                "expected exactly one paragraph per aspect".into(),
            ));
        }
        let texts: Vec<&str> = ordered.iter().map(|p| p.text.as_str()).collect();
        let matrices = self.embed_texts(&texts)?;
        Ok(matrices
            .iter()
            .zip(keys)
            .map(|(m, aspect)| PooledEmbedding {
                vector: pool(m, strategy),
                strategy,
                backend_id: self.backend.backend_id.clone(),
                aspect,
            })
            .collect())
    }

    /// Embeds the requested paragraphs of every subject and pools each
    /// matrix under every requested strategy. Token matrices are dropped
    /// after pooling, in chunks, so memory stays proportional to one chunk.
    pub fn embed_cohort(
        &self,
        subjects: &[Subject],
        keys: &[ParagraphKey],
        strategies: &[PoolingStrategy],
    ) -> Result<Vec<CohortEmbeddings>> {
        for &s in strategies {
            self.check_pooling(s)?;
        }
        let mut out: Vec<CohortEmbeddings> = strategies
            .iter()
            .map(|&strategy| CohortEmbeddings {
                backend_id: self.backend.backend_id.clone(),
                dim: self.backend.dim,
                strategy,
                subject_ids: subjects.iter().map(|s| s.subject_id.clone()).collect(),
                vectors: keys.iter().map(|&k| (k, Vec::with_capacity(subjects.len()))).collect(),
            })
            .collect();
        const CHUNK: usize = 64;
        for chunk in subjects.chunks(CHUNK) {
            let mut texts: Vec<(ParagraphKey, String)> = Vec::with_capacity(chunk.len() * keys.len());
            for s in chunk {
                let paragraphs = serializer::serialize_all(s);
                for &k in keys {
                    let text = match k {
                        ParagraphKey::Aspect(a) => paragraphs[a.index()].text.clone(),
                        ParagraphKey::Combined => serializer::concatenate_paragraphs(&paragraphs)?.text,
                    };
                    texts.push((k, text));
                }
            }
            let refs: Vec<&str> = texts.iter().map(|(_, t)| t.as_str()).collect();
            let matrices = self.embed_texts(&refs)?;
            for ((k, _), m) in texts.iter().zip(&matrices) {
                for ce in out.iter_mut() {
                    let v = pool(m, ce.strategy);
                    ce.vectors.get_mut(k).expect("key registered").push(v);
                }
            }
        }
        Ok(out)
    }
}

impl Embedder {
    /// Embeds a paragraph export. Every subject must carry the same set of
    /// paragraph keys; subjects keep their first-seen order.
    pub fn embed_paragraph_records(
        &self,
        records: &[serializer::ParagraphRecord],
        strategies: &[PoolingStrategy],
    ) -> Result<Vec<CohortEmbeddings>> {
        for &s in strategies {
            self.check_pooling(s)?;
        }
        let mut subject_ids: Vec<String> = Vec::new();
        let mut row_of: HashMap<&str, usize> = HashMap::new();
        let mut cells: BTreeMap<ParagraphKey, Vec<Option<usize>>> = BTreeMap::new();
        for (ri, r) in records.iter().enumerate() {
            let row = *row_of.entry(r.subject_id.as_str()).or_insert_with(|| {
                subject_ids.push(r.subject_id.clone());
                subject_ids.len() - 1
            });
            let col = cells.entry(r.aspect).or_default();
            if col.len() <= row {
                col.resize(row + 1, None);
            }
            if col[row].replace(ri).is_some() {
                return Err(Error::InvalidParagraphs(format!(
                    "duplicate {} paragraph for {}",
                    r.aspect, r.subject_id
                )));
            }
        }
        let n = subject_ids.len();
        let mut index: BTreeMap<ParagraphKey, Vec<usize>> = BTreeMap::new();
        for (k, mut col) in cells {
            col.resize(n, None);
            let rows: Option<Vec<usize>> = col.into_iter().collect();
            let rows = rows.ok_or_else(|| Error::InvalidParagraphs(format!("some subjects lack a {k} paragraph")))?;
            index.insert(k, rows);
        }
        let mut out: Vec<CohortEmbeddings> = strategies
            .iter()
            .map(|&strategy| CohortEmbeddings {
                backend_id: self.backend.backend_id.clone(),
                dim: self.backend.dim,
                strategy,
                subject_ids: subject_ids.clone(),
                vectors: index.keys().map(|&k| (k, Vec::with_capacity(n))).collect(),
            })
            .collect();
        for (&k, rows) in &index {
            for chunk in rows.chunks(256) {
                let texts: Vec<&str> = chunk.iter().map(|&ri| records[ri].text.as_str()).collect();
                for m in self.embed_texts(&texts)? {
                    for ce in out.iter_mut() {
                        let v = pool(&m, ce.strategy);
                        ce.vectors.get_mut(&k).expect("key registered").push(v);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Pooled vectors for a whole cohort under one strategy, keyed by paragraph,
/// with rows aligned to `subject_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortEmbeddings {
    pub backend_id: String,
    pub dim: usize,
    pub strategy: PoolingStrategy,
    pub subject_ids: Vec<String>,
    pub vectors: BTreeMap<ParagraphKey, Vec<Vec<f32>>>,
}

impl CohortEmbeddings {
    pub fn get(&self, key: ParagraphKey) -> Option<&[Vec<f32>]> {
        self.vectors.get(&key).map(Vec::as_slice)
    }

    /// Rows reordered (or subset) by subject index.
    pub fn select(&self, rows: &[usize]) -> CohortEmbeddings {
        CohortEmbeddings {
            backend_id: self.backend_id.clone(),
            dim: self.dim,
            strategy: self.strategy,
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            vectors: self
                .vectors
                .iter()
                .map(|(&k, v)| (k, rows.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    subject_id: String,
    aspect: ParagraphKey,
    strategy: PoolingStrategy,
    backend_id: String,
    vector: Vec<f32>,
}

/// Writes one JSON record per (subject, paragraph).
pub fn write_embeddings(path: &Path, emb: &CohortEmbeddings) -> Result<()> {
    let mut buf = Vec::new();
    for (i, sid) in emb.subject_ids.iter().enumerate() {
        for (&k, rows) in &emb.vectors {
            let rec = EmbeddingRecord {
                subject_id: sid.clone(),
                aspect: k,
                strategy: emb.strategy,
                backend_id: emb.backend_id.clone(),
                vector: rows[i].clone(),
            };
            serde_json::to_writer(&mut buf, &rec)?;
            buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    write_atomic(path, &buf)
}

/// Reads an embedding export back. Subjects keep their first-seen order.
pub fn read_embeddings(path: &Path) -> Result<CohortEmbeddings> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut subject_ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: BTreeMap<ParagraphKey, Vec<Option<Vec<f32>>>> = BTreeMap::new();
    let mut header: Option<(String, PoolingStrategy, usize)> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRow {
            row: i + 1,
            column: "record".into(),
            reason,
        };
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match &header {
            None => header = Some((rec.backend_id.clone(), rec.strategy, rec.vector.len())),
            Some((b, s, d)) => {
                if *b != rec.backend_id || *s != rec.strategy {
                    return Err(malformed("mixed backends or strategies".into()));
                }
                if *d != rec.vector.len() {
                    return Err(Error::DimensionMismatch {
                        expected: *d,
                        actual: rec.vector.len(),
                    });
                }
            }
        }
        let row = *index.entry(rec.subject_id.clone()).or_insert_with(|| {
            subject_ids.push(rec.subject_id.clone());
            subject_ids.len() - 1
        });
        let col = cells.entry(rec.aspect).or_default();
        if col.len() <= row {
            col.resize(row + 1, None);
        }
        if col[row].replace(rec.vector).is_some() {
            return Err(malformed(format!("duplicate record for {} {}", rec.subject_id, rec.aspect)));
        }
    }
    let (backend_id, strategy, dim) =
        header.ok_or_else(|| Error::InvalidCohort(format!("{}: no embeddings", path.display())))?;
    let n = subject_ids.len();
    let mut vectors = BTreeMap::new();
    for (k, mut col) in cells {
        col.resize(n, None);
        let rows: Option<Vec<Vec<f32>>> = col.into_iter().collect();
        let rows = rows.ok_or_else(|| Error::InvalidCohort(format!("missing {k} embedding for some subjects")))?;
        vectors.insert(k, rows);
    }
    Ok(CohortEmbeddings {
        backend_id,
        dim,
        strategy,
        subject_ids,
        vectors,
    })
}

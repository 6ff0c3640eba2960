//! Numeric feature construction: tabular encodings, fold-local PCA of
//! embeddings, and the fusion strategies that combine them.
//!
//! Missing values are [`MISSING`] (`NaN`); the tree learner routes them by a
//! learned default direction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cohort::{Analyte, SeriesSummary, Sex, Subject, TriState};
use crate::embedder::PooledEmbedding;
use crate::error::{Error, Result};
use crate::serializer::{AspectId, ParagraphKey};
use crate::util::write_atomic;

pub const MISSING: f64 = f64::NAN;

/// Default number of principal components kept per aspect.
pub const DEFAULT_PCA_COMPONENTS: usize = 16;

pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Tabular,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub aspect: ParagraphKey,
    pub kind: BlockKind,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureBlock {
    fn tabular(aspect: AspectId) -> Self {
        FeatureBlock {
            aspect: aspect.into(),
            kind: BlockKind::Tabular,
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, value: f64) {
        self.names.push(name.into());
        self.values.push(value);
    }

    fn push_opt(&mut self, name: impl Into<String>, value: Option<f64>) {
        self.push(name, value.unwrap_or(MISSING));
    }

    fn push_one_hot(&mut self, prefix: &str, vocab: &[String], value: Option<&str>) {
        let hit = value.map(|v| vocab.iter().position(|x| x.eq_ignore_ascii_case(v.trim())));
        for (i, word) in vocab.iter().enumerate() {
            let v = match hit {
                None => MISSING,
                Some(h) => f64::from(u8::from(h == Some(i))),
            };
            self.push(format!("{prefix}.{}", slug(word)), v);
        }
        let other = match hit {
            None => MISSING,
            Some(h) => f64::from(u8::from(h.is_none())),
        };
        self.push(format!("{prefix}.other"), other);
    }
}

fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

/// Fixed one-hot vocabularies. Values outside a vocabulary go to an extra
/// `other` column, so feature width never depends on the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Vocabularies {
    pub race: Vec<String>,
    pub surgery_type: Vec<String>,
}

impl Default for Vocabularies {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Vocabularies {
            race: own(&[
                "White",
                "Black",
                "Asian",
                "American Indian or Alaska Native",
                "Native Hawaiian or Pacific Islander",
            ]),
            surgery_type: own(&[
                "Decompressive craniectomy",
                "Craniotomy for hematoma evacuation",
                "Burr hole evacuation",
                "Elevation of depressed skull fracture",
                "Intracranial pressure monitor placement",
            ]),
        }
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn opt_flag(b: Option<bool>) -> Option<f64> {
    b.map(flag)
}

fn tri(t: TriState) -> f64 {
    match t {
        TriState::Present => 1.0,
        TriState::Absent => 0.0,
        TriState::Indeterminate | TriState::NotReported => MISSING,
    }
}

/// The summary fields used as lab features.
const LAB_FIELDS: [(&str, fn(&SeriesSummary) -> f64); 6] = [
    ("max", |s| s.max),
    ("time_of_max", |s| s.time_of_max),
    ("last", |s| s.last),
    ("min", |s| s.min),
    ("mean", |s| s.mean),
    ("std", |s| s.std),
];

/// One tabular block per aspect, in aspect order.
pub fn encode_tabular(subject: &Subject, vocab: &Vocabularies) -> Vec<FeatureBlock> {
    AspectId::ALL
        .iter()
        .map(|&a| encode_aspect(subject, a, vocab))
        .collect()
}

pub fn encode_aspect(subject: &Subject, aspect: AspectId, vocab: &Vocabularies) -> FeatureBlock {
    let mut b = FeatureBlock::tabular(aspect);
    let num = |v: Option<u8>| v.map(f64::from);
    match aspect {
        AspectId::Gcs => {
            let g = &subject.gcs;
            b.push_opt("gcs.total_worst", num(g.total_worst));
            b.push_opt("gcs.total_best", num(g.total_best));
            b.push_opt("gcs.eye_worst", num(g.eye_worst));
            b.push_opt("gcs.eye_best", num(g.eye_best));
            b.push_opt("gcs.verbal_worst", num(g.verbal_worst));
            b.push_opt("gcs.verbal_best", num(g.verbal_best));
            b.push_opt("gcs.motor_worst", num(g.motor_worst));
            b.push_opt("gcs.motor_best", num(g.motor_best));
        }
        AspectId::HospitalCourse => {
            let c = &subject.course;
            b.push("course.icu_admitted", flag(c.icu_admitted));
            // Zero days when never admitted; missing only when admitted
            // without a recorded stay.
            let icu_days = if c.icu_admitted { c.icu_days } else { Some(0.0) };
            b.push_opt("course.icu_days", icu_days);
            b.push("course.surgery_performed", flag(c.surgery_performed));
            b.push_opt("course.hours_to_surgery", c.hours_to_surgery);
            let surgery_type = if c.surgery_performed { c.surgery_type.as_deref() } else { None };
            b.push_one_hot("course.surgery_type", &vocab.surgery_type, surgery_type);
            b.push("course.acute_seizure_7d", flag(c.acute_seizure_7d));
        }
        AspectId::CtFindings => {
            let ct = &subject.ct;
            b.push("ct.contusion", tri(ct.contusion));
            b.push("ct.epidural_hematoma", tri(ct.epidural_hematoma));
            b.push("ct.intracerebral_hemorrhage", tri(ct.intracerebral_hemorrhage));
            b.push("ct.skull_fracture", tri(ct.skull_fracture));
            b.push("ct.subarachnoid_hemorrhage", tri(ct.subarachnoid_hemorrhage));
            b.push_opt("ct.marshall_score", num(ct.marshall_score));
        }
        AspectId::ImagingNotes => {
            b.push("imaging.ct_report_present", flag(subject.imaging.ct_report.is_some()));
            b.push("imaging.mri_report_present", flag(subject.imaging.mri_report.is_some()));
        }
        AspectId::Labs => {
            for analyte in Analyte::ALL {
                let s = subject.labs.get(analyte);
                for (field, get) in LAB_FIELDS {
                    b.push_opt(format!("labs.{}.{field}", analyte.key()), s.map(get));
                }
            }
        }
        AspectId::HistoryDemographics => {
            let h = &subject.history;
            b.push("history.age_years", f64::from(h.age_years));
            let (female, male) = match h.sex {
                None => (MISSING, MISSING),
                Some(s) => (flag(s == Sex::Female), flag(s == Sex::Male)),
            };
            b.push("history.sex.female", female);
            b.push("history.sex.male", male);
            b.push_one_hot("history.race", &vocab.race, h.race.as_deref());
            b.push_opt("history.prior_epilepsy", opt_flag(h.prior_epilepsy));
            b.push_opt("history.prior_seizures", opt_flag(h.prior_seizures));
            b.push_opt("history.neurodegenerative", opt_flag(h.neurodegenerative));
            b.push_opt("history.prior_neuro_illness", opt_flag(h.prior_neuro_illness));
            b.push_opt("history.tia_stroke", opt_flag(h.tia_stroke));
            b.push_opt("history.anticoagulant", opt_flag(h.anticoagulant));
            b.push_opt("history.antiplatelet", opt_flag(h.antiplatelet));
        }
    }
    b
}

/// Centered projection onto the leading right singular directions of a
/// training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub aspect: ParagraphKey,
    pub mean: Vec<f64>,
    /// `k` rows of length `d`, orthonormal, by descending singular value.
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `components · (vector − mean)`.
    pub fn transform(&self, vector: &[f64]) -> Result<Vec<f64>> {
        if vector.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: vector.len(),
            });
        }
        let centered: Vec<f64> = vector.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn transform_f32(&self, vector: &[f32]) -> Result<Vec<f64>> {
        let v: Vec<f64> = vector.iter().map(|&x| f64::from(x)).collect();
        self.transform(&v)
    }

    /// `mean + componentsᵀ · z`.
    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (o, &x) in out.iter_mut().zip(c) {
                *o += w * x;
            }
        }
        out
    }
}

/// Fits a PCA model with `min(k, d, n − 1, rank)` components.
pub fn fit_pca(aspect: ParagraphKey, train: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let n = train.len();
    if n < 2 {
        return Err(Error::InsufficientTrainingData(format!(
            "pca for {aspect} needs at least 2 rows, got {n}"
        )));
    }
    let d = train[0].len();
    if d == 0 {
        return Err(Error::InvalidParameter("pca input has zero columns".into()));
    }
    if let Some(bad) = train.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    for (i, row) in train.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row: i, column: j });
        }
    }
    let mut mean = vec![0.0; d];
    for row in train {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let x = DMatrix::from_fn(n, d, |i, j| train[i][j] - mean[j]);
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let top = order.first().map_or(0.0, |&i| sv[i]);
    let tol = top * (n.max(d) as f64) * f64::EPSILON;
    let rank = order.iter().filter(|&&i| sv[i] > tol).count();
    let keep = k.min(d).min(n - 1).min(rank);

    let mut components = Vec::with_capacity(keep);
    let mut singular_values = Vec::with_capacity(keep);
    for &i in order.iter().take(keep) {
        let mut c: Vec<f64> = v_t.row(i).iter().copied().collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut c {
            *v /= norm;
        }
        let mut lead = 0;
        for (j, v) in c.iter().enumerate() {
            if v.abs() > c[lead].abs() {
                lead = j;
            }
        }
        if c[lead] < 0.0 {
            for v in &mut c {
                *v = -*v;
            }
        }
        components.push(c);
        singular_values.push(sv[i]);
    }
    Ok(PcaModel {
        aspect,
        mean,
        components,
        singular_values,
    })
}

pub type PcaSet = BTreeMap<ParagraphKey, PcaModel>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    TabularOnly,
    EmbeddingsOnly,
    NaiveFusion,
    ModalityAware,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::TabularOnly,
        FusionStrategy::EmbeddingsOnly,
        FusionStrategy::NaiveFusion,
        FusionStrategy::ModalityAware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::TabularOnly => "tabular_only",
            FusionStrategy::EmbeddingsOnly => "embeddings_only",
            FusionStrategy::NaiveFusion => "naive_fusion",
            FusionStrategy::ModalityAware => "modality_aware",
        }
    }

    /// Aspects encoded as embeddings under modality-aware fusion.
    pub fn modality_embedded(aspect: AspectId) -> bool {
        matches!(
            aspect,
            AspectId::HospitalCourse | AspectId::ImagingNotes | AspectId::HistoryDemographics
        )
    }

    pub fn plan(self) -> FeaturePlan {
        let tab = AspectId::ALL.iter().map(|&a| Source::Tabular(a));
        let emb = AspectId::ALL.iter().map(|&a| Source::Embedding(a.into()));
        let sources = match self {
            FusionStrategy::TabularOnly => tab.collect(),
            FusionStrategy::EmbeddingsOnly => emb.collect(),
            FusionStrategy::NaiveFusion => tab.chain(emb).collect(),
            FusionStrategy::ModalityAware => {
                let t = AspectId::ALL
                    .iter()
                    .filter(|&&a| !Self::modality_embedded(a))
                    .map(|&a| Source::Tabular(a));
                let e = AspectId::ALL
                    .iter()
                    .filter(|&&a| Self::modality_embedded(a))
                    .map(|&a| Source::Embedding(a.into()));
                t.chain(e).collect()
            }
        };
        FeaturePlan { sources }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown fusion strategy {s:?}")))
    }
}

/// One block of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "aspect")]
pub enum Source {
    Tabular(AspectId),
    Embedding(ParagraphKey),
}

/// Ordered list of blocks making up a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeaturePlan {
    pub sources: Vec<Source>,
}

impl FeaturePlan {
    /// A single aspect's embedding as the only input.
    pub fn single_embedding(key: impl Into<ParagraphKey>) -> Self {
        FeaturePlan {
            sources: vec![Source::Embedding(key.into())],
        }
    }

    /// Embedding keys that need a PCA model.
    pub fn embedding_keys(&self) -> Vec<ParagraphKey> {
        self.sources
            .iter()
            .filter_map(|s| match s {
                Source::Embedding(k) => Some(*k),
                Source::Tabular(_) => None,
            })
            .collect()
    }

    pub fn uses_embeddings(&self) -> bool {
        !self.embedding_keys().is_empty()
    }

    pub fn feature_names(&self, vocab: &Vocabularies, pca: &PcaSet) -> Result<Vec<String>> {
        let probe = Subject::blank("probe", false);
        let mut names = Vec::new();
        for s in &self.sources {
            match *s {
                Source::Tabular(a) => names.extend(encode_aspect(&probe, a, vocab).names),
                Source::Embedding(k) => {
                    let model = pca.get(&k).ok_or_else(|| Error::PcaNotFitted(k.to_string()))?;
                    names.extend((1..=model.k()).map(|i| format!("emb.{k}.pc{i}")));
                }
            }
        }
        Ok(names)
    }
}

/// A subject-level feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

/// Assembles one subject's features under `plan`. Embeddings are looked up
/// by paragraph key; each one used must have a fitted PCA model.
pub fn assemble_features(
    subject: &Subject,
    plan: &FeaturePlan,
    vocab: &Vocabularies,
    embeddings: &[PooledEmbedding],
    pca: &PcaSet,
) -> Result<FeatureVector> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for s in &plan.sources {
        match *s {
            Source::Tabular(a) => {
                let b = encode_aspect(subject, a, vocab);
                names.extend(b.names);
                values.extend(b.values);
            }
            Source::Embedding(k) => {
                let model = pca.get(&k).ok_or_else(|| Error::PcaNotFitted(k.to_string()))?;
                let e = embeddings.iter().find(|e| e.aspect == k).ok_or_else(|| {
                    Error::InvalidParameter(format!("no {k} embedding for {}", subject.subject_id))
                })?;
                values.extend(model.transform_f32(&e.vector)?);
                names.extend((1..=model.k()).map(|i| format!("emb.{k}.pc{i}")));
            }
        }
    }
    Ok(FeatureVector { names, values })
}

/// Row-aligned feature matrix with a shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Tabular blocks for every subject, computed once per cohort.
pub fn tabular_table(subjects: &[Subject], vocab: &Vocabularies) -> Vec<Vec<FeatureBlock>> {
    subjects.iter().map(|s| encode_tabular(s, vocab)).collect()
}

/// Per-key embedding rows for a cohort, aligned with the subject order.
pub type EmbeddingTable<'a> = BTreeMap<ParagraphKey, &'a [Vec<f32>]>;

/// Fits one PCA model per embedding key of `plan`, on `train_rows` only.
pub fn fit_plan_pca(
    plan: &FeaturePlan,
    embeddings: &EmbeddingTable<'_>,
    train_rows: &[usize],
    k: usize,
) -> Result<PcaSet> {
    let mut set = PcaSet::new();
    for key in plan.embedding_keys() {
        let rows = embeddings
            .get(&key)
            .ok_or_else(|| Error::InvalidParameter(format!("no {key} embeddings available")))?;
        let train: Vec<Vec<f64>> = train_rows
            .iter()
            .map(|&i| rows[i].iter().map(|&x| f64::from(x)).collect())
            .collect();
        set.insert(key, fit_pca(key, &train, k)?);
    }
    Ok(set)
}

/// Feature matrix for the given rows under `plan`.
pub fn build_matrix(
    plan: &FeaturePlan,
    vocab: &Vocabularies,
    tabular: &[Vec<FeatureBlock>],
    embeddings: &EmbeddingTable<'_>,
    pca: &PcaSet,
    rows: &[usize],
) -> Result<FeatureMatrix> {
    let names = plan.feature_names(vocab, pca)?;
    let mut out = Vec::with_capacity(rows.len());
    for &i in rows {
        let mut values = Vec::with_capacity(names.len());
        for s in &plan.sources {
            match *s {
                Source::Tabular(a) => values.extend_from_slice(&tabular[i][a.index()].values),
                Source::Embedding(k) => {
                    let model = pca.get(&k).ok_or_else(|| Error::PcaNotFitted(k.to_string()))?;
                    let e = embeddings
                        .get(&k)
                        .ok_or_else(|| Error::InvalidParameter(format!("no {k} embeddings available")))?;
                    values.extend(model.transform_f32(&e[i])?);
                }
            }
        }
        debug_assert_eq!(values.len(), names.len());
        out.push(values);
    }
    Ok(FeatureMatrix { names, rows: out })
}

/// Writes a feature matrix as CSV with a leading `subject_id` column;
/// missing values become empty cells.
pub fn write_feature_matrix(path: &Path, subject_ids: &[String], m: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("subject_id").chain(m.names.iter().map(String::as_str)))?;
    for (id, row) in subject_ids.iter().zip(&m.rows) {
        let cells = row
            .iter()
            .map(|v| if is_missing(*v) { String::new() } else { format!("{v:?}") });
        w.write_record(std::iter::once(id.clone()).chain(cells))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, GcsRecord, SyntheticConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exemplar() -> Subject {
        let mut s = Subject::blank("EX", true);
        s.gcs = GcsRecord {
            total_worst: Some(3),
            total_best: Some(15),
            eye_worst: Some(1),
            eye_best: Some(4),
            verbal_worst: Some(1),
            verbal_best: Some(5),
            motor_worst: Some(1),
            motor_best: Some(6),
        };
        s.course.acute_seizure_7d = true;
        s.ct.contusion = TriState::Indeterminate;
        s
    }

    fn get(blocks: &[FeatureBlock], name: &str) -> f64 {
        for b in blocks {
            if let Some(i) = b.names.iter().position(|n| n == name) {
                return b.values[i];
            }
        }
        panic!("no feature {name}");
    }

    #[test]
    fn tabular_examples() {
        let v = Vocabularies::default();
        let blocks = encode_tabular(&exemplar(), &v);
        assert_eq!(blocks.len(), 6);
        assert_eq!(get(&blocks, "course.acute_seizure_7d"), 1.0);
        assert!(is_missing(get(&blocks, "ct.contusion")));
        assert_eq!(get(&blocks, "gcs.total_worst"), 3.0);
        assert_eq!(get(&blocks, "gcs.total_best"), 15.0);
        assert!(is_missing(get(&blocks, "labs.creatinine.max")));
        assert!(is_missing(get(&blocks, "history.race.white")));
        assert_eq!(get(&blocks, "course.icu_days"), 0.0);
        assert_eq!(
            blocks[AspectId::Labs.index()].names.len(),
            6 * Analyte::ALL.len()
        );
    }

    #[test]
    fn one_hot_other_bucket() {
        let v = Vocabularies::default();
        let mut s = exemplar();
        s.history.race = Some("Martian".into());
        let b = encode_aspect(&s, AspectId::HistoryDemographics, &v);
        let other = b.names.iter().position(|n| n == "history.race.other").unwrap();
        assert_eq!(b.values[other], 1.0);
        assert_eq!(b.values.iter().filter(|x| **x == 1.0).count(), 1);
        s.history.race = Some("white".into());
        let b = encode_aspect(&s, AspectId::HistoryDemographics, &v);
        assert_eq!(get(&[b], "history.race.white"), 1.0);
    }

    #[test]
    fn schema_is_subject_independent() {
        let v = Vocabularies::default();
        let cohort = generate_synthetic_cohort(&SyntheticConfig::new(4, 40, 0.25)).unwrap();
        let reference: Vec<Vec<String>> = encode_tabular(&cohort.subjects[0], &v)
            .into_iter()
            .map(|b| b.names)
            .collect();
        for s in &cohort.subjects {
            let names: Vec<Vec<String>> = encode_tabular(s, &v).into_iter().map(|b| b.names).collect();
            assert_eq!(names, reference);
        }
    }

    fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn key() -> ParagraphKey {
        AspectId::Labs.into()
    }

    #[test]
    fn components_are_orthonormal() {
        let m = fit_pca(key(), &random_rows(1, 50, 12), 16).unwrap();
        assert_eq!(m.k(), 12);
        for (i, a) in m.components.iter().enumerate() {
            for (j, b) in m.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "{i},{j}: {dot}");
            }
        }
        assert!(m.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention() {
        let m = fit_pca(key(), &random_rows(2, 30, 5), 3).unwrap();
        for c in &m.components {
            let lead = c.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn rank_and_n_caps() {
        // Points on a line in 4-D.
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0, -(i as f64)]).collect();
        assert_eq!(fit_pca(key(), &rows, 16).unwrap().k(), 1);
        assert_eq!(fit_pca(key(), &random_rows(3, 4, 10), 16).unwrap().k(), 3);
        assert!(matches!(
            fit_pca(key(), &random_rows(3, 1, 10), 16),
            Err(Error::InsufficientTrainingData(_))
        ));
    }

    #[test]
    fn transform_identities() {
        let rows = random_rows(5, 40, 6);
        let m = fit_pca(key(), &rows, 4).unwrap();
        assert!(m.transform(&m.mean).unwrap().iter().all(|v| *v == 0.0));
        let shifted: Vec<f64> = m.mean.iter().zip(&m.components[0]).map(|(a, b)| a + b).collect();
        let z = m.transform(&shifted).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert!(z[1..].iter().all(|v| v.abs() < 1e-12));
        for r in random_rows(6, 100, 6) {
            let z = m.transform(&r).unwrap();
            let pn: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cn: f64 = r.iter().zip(&m.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(pn <= cn + 1e-9);
        }
        assert!(m.transform(&[0.0; 3]).is_err());
    }

    #[test]
    fn exact_subspace_reconstruction() {
        let basis = random_rows(7, 3, 9);
        let coef = random_rows(8, 60, 3);
        let rows: Vec<Vec<f64>> = coef
            .iter()
            .map(|c| (0..9).map(|j| 0.5 + (0..3).map(|i| c[i] * basis[i][j]).sum::<f64>()).collect())
            .collect();
        let m = fit_pca(key(), &rows, 16).unwrap();
        assert_eq!(m.k(), 3);
        for r in &rows {
            let back = m.inverse_transform(&m.transform(r).unwrap());
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fusion_plans() {
        assert_eq!(FusionStrategy::TabularOnly.plan().sources.len(), 6);
        assert_eq!(FusionStrategy::EmbeddingsOnly.plan().embedding_keys().len(), 6);
        assert_eq!(FusionStrategy::NaiveFusion.plan().sources.len(), 12);
        let ma = FusionStrategy::ModalityAware.plan();
        assert_eq!(
            ma.sources,
            vec![
                Source::Tabular(AspectId::Gcs),
                Source::Tabular(AspectId::CtFindings),
                Source::Tabular(AspectId::Labs),
                Source::Embedding(AspectId::HospitalCourse.into()),
                Source::Embedding(AspectId::ImagingNotes.into()),
                Source::Embedding(AspectId::HistoryDemographics.into()),
            ]
        );
        for f in FusionStrategy::ALL {
            assert_eq!(f.as_str().parse::<FusionStrategy>().unwrap(), f);
        }
    }

    #[test]
    fn missing_pca_is_an_error() {
        let plan = FusionStrategy::EmbeddingsOnly.plan();
        let err = assemble_features(&exemplar(), &plan, &Vocabularies::default(), &[], &PcaSet::new());
        assert!(matches!(err, Err(Error::PcaNotFitted(_))));
    }
}

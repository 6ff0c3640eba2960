//! Repeated stratified cross-validation and the analyses built on it.
//!
//! Every `(seed, fold)` unit fits its PCA models and classifier on the
//! training partition only and scores the held-out fold. Units run in
//! parallel on the current rayon pool; results are gathered in
//! `(seed, fold)` order, so reports do not depend on scheduling.

mod folds;
mod metrics;
mod report;
mod subgroup;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Subject};
use crate::embedder::{CohortEmbeddings, Embedder, PoolingStrategy};
use crate::error::{Error, Result};
use crate::features::{
    build_matrix, fit_plan_pca, tabular_table, EmbeddingTable, FeatureBlock, FeaturePlan, FusionStrategy, PcaSet,
    Vocabularies, DEFAULT_PCA_COMPONENTS,
};
use crate::gbdt::{self, BoostedModel, TrainParams};
use crate::serializer::{AspectId, ParagraphKey};
use crate::util::{mean_std, sha256_hex};

pub use folds::{permute_labels, stratified_kfold, FoldPlan};
pub use metrics::{auprc, auroc, ppv_at_recall, MetricSet};
pub use report::{read_bundle, write_bundle, ReportBundle};
pub use subgroup::{subgroup_eval, Subgroup, SubgroupResult};

/// Which rows decide when boosting stops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopping {
    /// A stratified fifth of each training partition is held back for
    /// stopping. The held-out fold never influences any fitted model.
    #[default]
    InnerHoldout,
    /// The held-out fold itself is the stopping set.
    ValidationFold,
}

/// Folds of the inner stopping split; one of them is held back.
const INNER_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub plan: FeaturePlan,
    pub pooling: PoolingStrategy,
    pub params: TrainParams,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub pca_components: usize,
    pub early_stopping: EarlyStopping,
    pub permute_labels: bool,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, plan: FeaturePlan) -> Self {
        ExperimentConfig {
            name: name.into(),
            plan,
            pooling: PoolingStrategy::Mean,
            params: TrainParams::default(),
            seeds: (0..30).collect(),
            k: 5,
            pca_components: DEFAULT_PCA_COMPONENTS,
            early_stopping: EarlyStopping::default(),
            permute_labels: false,
        }
    }

    pub fn fusion(strategy: FusionStrategy) -> Self {
        Self::new(strategy.as_str(), strategy.plan())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!("k must be at least 2, got {}", self.k)));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.pca_components == 0 {
            return Err(Error::InvalidParameter("pca_components must be positive".into()));
        }
        if self.plan.sources.is_empty() {
            return Err(Error::InvalidParameter("feature plan is empty".into()));
        }
        Ok(())
    }
}

/// Everything an experiment reads: subjects, labels, tabular blocks and
/// pooled embeddings, all row-aligned.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub subjects: Vec<Subject>,
    pub labels: Vec<bool>,
    pub tabular: Vec<Vec<FeatureBlock>>,
    pub vocab: Vocabularies,
    pub embeddings: BTreeMap<PoolingStrategy, CohortEmbeddings>,
}

impl ExperimentData {
    pub fn tabular_only(cohort: &Cohort, vocab: &Vocabularies) -> Self {
        ExperimentData {
            subjects: cohort.subjects.clone(),
            labels: cohort.labels(),
            tabular: tabular_table(&cohort.subjects, vocab),
            vocab: vocab.clone(),
            embeddings: BTreeMap::new(),
        }
    }

    /// Embeds `keys` for every subject under each pooling strategy.
    pub fn build(
        cohort: &Cohort,
        vocab: &Vocabularies,
        embedder: &Embedder,
        keys: &[ParagraphKey],
        poolings: &[PoolingStrategy],
    ) -> Result<Self> {
        let mut data = Self::tabular_only(cohort, vocab);
        for e in embedder.embed_cohort(&cohort.subjects, keys, poolings)? {
            data.embeddings.insert(e.strategy, e);
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn backend_id(&self) -> Option<&str> {
        self.embeddings.values().next().map(|e| e.backend_id.as_str())
    }

    /// Restriction to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> ExperimentData {
        ExperimentData {
            subjects: rows.iter().map(|&i| self.subjects[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            tabular: rows.iter().map(|&i| self.tabular[i].clone()).collect(),
            vocab: self.vocab.clone(),
            embeddings: self.embeddings.iter().map(|(&k, e)| (k, e.select(rows))).collect(),
        }
    }

    /// Rows whose subject satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&Subject) -> bool) -> ExperimentData {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.subjects[i])).collect();
        self.subset(&rows)
    }

    fn embedding_table(&self, cfg: &ExperimentConfig) -> Result<EmbeddingTable<'_>> {
        let mut table = EmbeddingTable::new();
        let keys = cfg.plan.embedding_keys();
        if keys.is_empty() {
            return Ok(table);
        }
        let e = self.embeddings.get(&cfg.pooling).ok_or_else(|| {
            Error::InvalidParameter(format!("no embeddings pooled with {}", cfg.pooling))
        })?;
        for k in keys {
            let rows = e
                .get(k)
                .ok_or_else(|| Error::InvalidParameter(format!("no {k} embeddings available")))?;
            table.insert(k, rows);
        }
        Ok(table)
    }

    /// Digest of subject ids and labels.
    fn digest(&self) -> String {
        let mut buf = Vec::new();
        for (s, y) in self.subjects.iter().zip(&self.labels) {
            buf.extend_from_slice(s.subject_id.as_bytes());
            buf.push(if *y { 1 } else { 0 });
        }
        sha256_hex([buf.as_slice()])
    }
}

/// Models fitted for one `(seed, fold)` unit and their held-out scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub pca: PcaSet,
    pub model: BoostedModel,
    pub valid_rows: Vec<usize>,
    pub predictions: Vec<f64>,
}

fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (fold as u64 + 1)
}

/// Fits PCA and the classifier for one fold of `plan` and scores its rows.
pub fn fit_fold(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    labels: &[bool],
    plan: &FoldPlan,
    fold: usize,
) -> Result<FoldFit> {
    let table = data.embedding_table(cfg)?;
    let train_rows = plan.train_rows(fold);
    let valid_rows = plan.valid_rows(fold);
    let pca = fit_plan_pca(&cfg.plan, &table, &train_rows, cfg.pca_components)?;
    let (fit_rows, stop_rows) = match cfg.early_stopping {
        EarlyStopping::ValidationFold => (train_rows.clone(), valid_rows.clone()),
        EarlyStopping::InnerHoldout => {
            let train_labels: Vec<bool> = train_rows.iter().map(|&i| labels[i]).collect();
            let inner = stratified_kfold(&train_labels, INNER_FOLDS, inner_seed(plan.seed, fold))?;
            let pick = |f: &dyn Fn(usize) -> bool| -> Vec<usize> {
                train_rows
                    .iter()
                    .zip(&inner.assignments)
                    .filter(|(_, &a)| f(a))
                    .map(|(&i, _)| i)
                    .collect()
            };
            (pick(&|a| a != 0), pick(&|a| a == 0))
        }
    };
    let matrix = |rows: &[usize]| build_matrix(&cfg.plan, &data.vocab, &data.tabular, &table, &pca, rows);
    let select = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<bool>>();
    let fit_x = matrix(&fit_rows)?;
    let stop_x = matrix(&stop_rows)?;
    let valid_x = matrix(&valid_rows)?;
    let model = gbdt::train(&fit_x.rows, &select(&fit_rows), &stop_x.rows, &select(&stop_rows), &cfg.params)?;
    let predictions = model.predict_batch(&valid_x.rows);
    Ok(FoldFit {
        pca,
        model,
        valid_rows,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_valid_positive: usize,
    pub n_features: usize,
    pub best_round: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub auroc: MeanStd,
    pub auprc: MeanStd,
    pub ppv_at_recall_30: MeanStd,
    pub ppv_at_recall_50: MeanStd,
}

impl Aggregate {
    /// Population mean and std over fold entries, in their stored order.
    pub fn from_folds(folds: &[FoldResult]) -> Aggregate {
        let col = |f: fn(&MetricSet) -> f64| MeanStd::of(&folds.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
        Aggregate {
            auroc: col(|m| m.auroc),
            auprc: col(|m| m.auprc),
            ppv_at_recall_30: col(|m| m.ppv_at_recall_30),
            ppv_at_recall_50: col(|m| m.ppv_at_recall_50),
        }
    }

    pub fn get(&self, metric: &str) -> Option<MeanStd> {
        match metric {
            "auroc" => Some(self.auroc),
            "auprc" => Some(self.auprc),
            "ppv_at_recall_30" => Some(self.ppv_at_recall_30),
            "ppv_at_recall_50" => Some(self.ppv_at_recall_50),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub backend_id: Option<String>,
    pub n_subjects: usize,
    pub n_positive: usize,
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
    pub metadata: BTreeMap<String, String>,
}

/// A report plus out-of-fold predictions, per seed, for every subject.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    /// `oof[s][i]`: held-out probability of subject `i` under seed `s`.
    pub oof: Vec<Vec<f64>>,
    /// Labels used under each seed (shuffled for permutation runs).
    pub labels: Vec<Vec<bool>>,
}

fn metadata(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let put = |m: &mut BTreeMap<String, String>, k: &str, v: &str| m.insert(k.to_string(), v.to_string());
    put(&mut m, "early_stopping_metric", "weighted logistic loss");
    match cfg.early_stopping {
        EarlyStopping::InnerHoldout => put(
            &mut m,
            "early_stopping_set",
            "stratified fifth of each training partition; held-out folds are never seen during fitting",
        ),
        EarlyStopping::ValidationFold => put(
            &mut m,
            "early_stopping_set",
            "held-out fold; its labels choose the stopping round, so estimates are mildly optimistic",
        ),
    };
    put(&mut m, "auprc", "average precision with tied scores as one block");
    put(&mut m, "ppv_at_recall", "precision at the first cut reaching the recall target");
    put(&mut m, "pca", "fit per aspect on the training partition of each fold");
    put(&mut m, "aggregate", "population mean and standard deviation over (seed, fold)");
    if cfg.permute_labels {
        put(&mut m, "labels", "shuffled once per seed before fold planning");
    }
    m
}

pub fn run_experiment(data: &ExperimentData, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    data.embedding_table(cfg)?;
    let labels: Vec<Vec<bool>> = cfg
        .seeds
        .iter()
        .map(|&s| {
            if cfg.permute_labels {
                permute_labels(&data.labels, s)
            } else {
                data.labels.clone()
            }
        })
        .collect();
    let plans: Vec<FoldPlan> = cfg
        .seeds
        .iter()
        .zip(&labels)
        .map(|(&s, y)| stratified_kfold(y, cfg.k, s))
        .collect::<Result<_>>()?;
    let units: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..cfg.k).map(move |f| (s, f)))
        .collect();
    let fits: Vec<(FoldResult, FoldFit)> = units
        .par_iter()
        .map(|&(s, f)| {
            let y = &labels[s];
            let wrap = |e: Error| Error::Fold {
                seed: cfg.seeds[s],
                fold: f,
                source: Box::new(e),
            };
            let fit = fit_fold(data, cfg, y, &plans[s], f).map_err(wrap)?;
            let valid_y: Vec<bool> = fit.valid_rows.iter().map(|&i| y[i]).collect();
            let metrics = MetricSet::compute(&fit.predictions, &valid_y).map_err(wrap)?;
            let result = FoldResult {
                seed: cfg.seeds[s],
                fold: f,
                n_train: data.len() - fit.valid_rows.len(),
                n_valid: fit.valid_rows.len(),
                n_valid_positive: valid_y.iter().filter(|&&b| b).count(),
                n_features: fit.model.n_features,
                best_round: fit.model.best_round,
                metrics,
            };
            Ok((result, fit))
        })
        .collect::<Result<_>>()?;

    let mut oof = vec![vec![f64::NAN; data.len()]; cfg.seeds.len()];
    let mut folds = Vec::with_capacity(fits.len());
    for (&(s, _), (result, fit)) in units.iter().zip(fits) {
        for (&i, &p) in fit.valid_rows.iter().zip(&fit.predictions) {
            oof[s][i] = p;
        }
        folds.push(result);
    }
    let backend_id = if cfg.plan.uses_embeddings() {
        data.backend_id().map(str::to_string)
    } else {
        None
    };
    let fingerprint = sha256_hex([
        serde_json::to_string(cfg)?.as_bytes(),
        b"\0",
        backend_id.as_deref().unwrap_or("").as_bytes(),
        b"\0",
        data.digest().as_bytes(),
    ]);
    let report = ExperimentReport {
        name: cfg.name.clone(),
        fingerprint,
        config: cfg.clone(),
        backend_id,
        n_subjects: data.len(),
        n_positive: data.labels.iter().filter(|&&b| b).count(),
        aggregate: Aggregate::from_folds(&folds),
        folds,
        metadata: metadata(cfg),
    };
    log::info!(
        "{}: auroc {:.3} ± {:.3}, auprc {:.3} ± {:.3}",
        report.name,
        report.aggregate.auroc.mean,
        report.aggregate.auroc.std,
        report.aggregate.auprc.mean,
        report.aggregate.auprc.std
    );
    Ok(ExperimentRun { report, oof, labels })
}

/// The same protocol with labels shuffled once per seed.
pub fn permutation_baseline(data: &ExperimentData, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut cfg = cfg.clone();
    cfg.permute_labels = true;
    cfg.name = format!("{} (permuted labels)", cfg.name);
    run_experiment(data, &cfg)
}

/// One aspect's embedding as the only input.
pub fn single_aspect_experiment(
    data: &ExperimentData,
    aspect: AspectId,
    base: &ExperimentConfig,
) -> Result<ExperimentRun> {
    let mut cfg = base.clone();
    cfg.plan = FeaturePlan::single_embedding(aspect);
    cfg.name = format!("aspect:{aspect}");
    run_experiment(data, &cfg)
}

/// Imaging-notes-only run restricted to subjects with imaging text.
pub fn imaging_subset_experiment(data: &ExperimentData, base: &ExperimentConfig) -> Result<ExperimentRun> {
    let subset = data.filter(|s| s.imaging.any_present());
    let mut cfg = base.clone();
    cfg.plan = FeaturePlan::single_embedding(AspectId::ImagingNotes);
    cfg.name = "aspect:imaging_notes (available subset)".into();
    run_experiment(&subset, &cfg)
}

/// Paired input-construction and pooling variants on embeddings alone.
/// Every variant uses the same seeds and therefore the same fold plans.
/// Variants whose pooling has no embeddings in `data` are skipped.
pub fn ablation_suite(data: &ExperimentData, base: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let variants = [
        ("per-aspect, mean pooling", FusionStrategy::EmbeddingsOnly.plan(), PoolingStrategy::Mean),
        (
            "concatenated paragraph, mean pooling",
            FeaturePlan::single_embedding(ParagraphKey::Combined),
            PoolingStrategy::Mean,
        ),
        ("per-aspect, cls pooling", FusionStrategy::EmbeddingsOnly.plan(), PoolingStrategy::Cls),
        ("per-aspect, max pooling", FusionStrategy::EmbeddingsOnly.plan(), PoolingStrategy::Max),
    ];
    variants
        .into_iter()
        .filter(|(name, _, pooling)| {
            let available = data.embeddings.contains_key(pooling);
            if !available {
                log::warn!("skipping ablation variant {name:?}: no {pooling} embeddings");
            }
            available
        })
        .map(|(name, plan, pooling)| {
            let mut cfg = base.clone();
            cfg.name = format!("ablation:{name}");
            cfg.plan = plan;
            cfg.pooling = pooling;
            run_experiment(data, &cfg).map(|r| r.report)
        })
        .collect()
}

/// Paragraph keys any analysis in this module may need.
pub fn all_paragraph_keys() -> Vec<ParagraphKey> {
    AspectId::ALL
        .iter()
        .map(|&a| ParagraphKey::Aspect(a))
        .chain([ParagraphKey::Combined])
        .collect()
}

use std::path::{Path, PathBuf};

use anyhow::Context;

use pte_core::cohort::{
    apply_inclusion, generate_synthetic_cohort, load_cohort, load_lab_table, load_raw_cohort, merge_lab_table,
    write_cohort, Cohort, CohortFormat, SignalMode,
};
use pte_core::embedder::{read_embeddings, write_embeddings, Embedder, EmbeddingCache, PoolingStrategy};
use pte_core::eval::{
    ablation_suite, all_paragraph_keys, imaging_subset_experiment, permutation_baseline, read_bundle,
    run_experiment, single_aspect_experiment, subgroup_eval, write_bundle, ExperimentData, ReportBundle, Subgroup,
};
use pte_core::serializer::{paragraph_records, read_paragraphs, write_paragraphs, AspectId, ParagraphKey};
use pte_core::{write_atomic, Error};

use crate::config::RunConfig;

/// Name of the resolved configuration written next to each report.
pub const CONFIG_COPY: &str = "config.toml";

pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub prevalence: Option<f64>,
    pub signal_mode: Option<SignalMode>,
    pub out: PathBuf,
}

pub fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut syn = RunConfig::load_or_default(args.config.as_deref())?.cohort.synthetic;
    if let Some(s) = args.seed {
        syn.seed = s;
    }
    if let Some(n) = args.n {
        syn.n = n;
    }
    if let Some(p) = args.prevalence {
        syn.prevalence = p;
    }
    if let Some(m) = args.signal_mode {
        syn.signal_mode = m;
    }
    let cohort = generate_synthetic_cohort(&syn)?;
    write_cohort(&args.out, &cohort)?;
    let (pos, neg) = cohort.class_counts();
    println!(
        "wrote {} subjects ({pos} positive, {neg} negative) to {}",
        cohort.len(),
        args.out.display()
    );
    Ok(())
}

fn read_cohort_with_labs(path: &Path, labs: Option<&Path>) -> anyhow::Result<(usize, Cohort)> {
    let mut raw = load_raw_cohort(path, CohortFormat::from_path(path))
        .with_context(|| format!("loading cohort {}", path.display()))?;
    if let Some(labs) = labs {
        let table = load_lab_table(labs).with_context(|| format!("loading lab table {}", labs.display()))?;
        merge_lab_table(&mut raw, &table)?;
    }
    let loaded = raw.records.len();
    let included = apply_inclusion(raw);
    let cohort = Cohort::new(included.subjects, included.provenance, included.generator_seed)?;
    Ok((loaded, cohort))
}

pub fn ingest(input: &Path, labs: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let (loaded, cohort) = read_cohort_with_labs(input, labs)?;
    write_cohort(out, &cohort)?;
    let (pos, neg) = cohort.class_counts();
    println!(
        "included {} of {loaded} subjects ({pos} positive, {neg} negative); wrote {}",
        cohort.len(),
        out.display()
    );
    Ok(())
}

pub fn serialize(cohort: &Path, out: &Path, combined: bool) -> anyhow::Result<()> {
    let cohort = load_cohort(cohort, CohortFormat::from_path(cohort))
        .with_context(|| format!("loading cohort {}", cohort.display()))?;
    let records = paragraph_records(&cohort.subjects, combined);
    write_paragraphs(out, &records)?;
    println!("wrote {} paragraphs for {} subjects to {}", records.len(), cohort.len(), out.display());
    Ok(())
}

fn embedder(cfg: &RunConfig) -> anyhow::Result<Embedder> {
    let mut backend = cfg.backend.clone();
    if let Some(j) = cfg.runtime.jobs {
        backend.remote.max_in_flight = backend.remote.max_in_flight.min(j);
    }
    let mut e = Embedder::new(backend)?;
    if let Some(dir) = &cfg.runtime.cache_dir {
        e = e.with_cache(EmbeddingCache::open(dir)?);
    }
    Ok(e)
}

fn print_cache_stats(e: &Embedder) {
    if let Some(s) = e.cache_stats() {
        println!(
            "cache: {} hits, {} misses ({:.1}% hit rate)",
            s.hits,
            s.misses,
            100.0 * s.hit_rate()
        );
    }
}

pub fn embed(cfg: &RunConfig, paragraphs: &Path, out: &Path) -> anyhow::Result<()> {
    let records = read_paragraphs(paragraphs).with_context(|| format!("loading {}", paragraphs.display()))?;
    let e = embedder(cfg)?;
    let pooled = e.embed_paragraph_records(&records, &[cfg.experiment.pooling])?;
    let emb = &pooled[0];
    write_embeddings(out, emb)?;
    println!(
        "embedded {} paragraphs for {} subjects with {} ({} pooling, dim {}); wrote {}",
        records.len(),
        emb.subject_ids.len(),
        emb.backend_id,
        emb.strategy,
        emb.dim,
        out.display()
    );
    print_cache_stats(&e);
    Ok(())
}

pub fn load_run_cohort(cfg: &RunConfig) -> anyhow::Result<Cohort> {
    let cohort = match &cfg.cohort.path {
        Some(p) => {
            let labs = cfg.cohort.labs.as_ref().map(|l| cfg.resolve(l));
            read_cohort_with_labs(&cfg.resolve(p), labs.as_deref())?.1
        }
        None => generate_synthetic_cohort(&cfg.cohort.synthetic)?,
    };
    cohort.ensure_trainable()?;
    let (pos, neg) = cohort.class_counts();
    log::info!("cohort: {} subjects, {pos} positive, {neg} negative", cohort.len());
    Ok(cohort)
}

fn build_data(
    cfg: &RunConfig,
    cohort: &Cohort,
    keys: &[ParagraphKey],
    poolings: &[PoolingStrategy],
) -> anyhow::Result<ExperimentData> {
    if keys.is_empty() {
        return Ok(ExperimentData::tabular_only(cohort, &cfg.vocabularies));
    }
    let e = embedder(cfg)?;
    let data = ExperimentData::build(cohort, &cfg.vocabularies, &e, keys, poolings)?;
    if let Some(s) = e.cache_stats() {
        log::info!("embedding cache: {} hits, {} misses", s.hits, s.misses);
    }
    Ok(data)
}

fn finish(cfg: &RunConfig, bundle: &ReportBundle) -> anyhow::Result<()> {
    let dir = &cfg.runtime.output_dir;
    write_bundle(dir, bundle)?;
    write_atomic(&dir.join(CONFIG_COPY), cfg.semantic_toml()?.as_bytes())?;
    print!("{}", bundle.render_table());
    println!("fingerprint {}", bundle.fingerprint);
    println!("wrote report to {}", dir.display());
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = load_run_cohort(cfg)?;
    let base = cfg.experiment_config();
    let keys = base.plan.embedding_keys();
    let data = build_data(cfg, &cohort, &keys, &[base.pooling])?;

    let main = run_experiment(&data, &base)?;
    let subgroups = if cfg.experiment.subgroups {
        let groups: Vec<Subgroup> = [Subgroup::All].into_iter().chain(Subgroup::STANDARD).collect();
        subgroup_eval(&data.subjects, &main, &groups)?
    } else {
        Vec::new()
    };
    let mut experiments = Vec::new();
    if cfg.experiment.permutation {
        experiments.push(permutation_baseline(&data, &base)?.report);
    }
    experiments.push(main.report);
    finish(
        cfg,
        &ReportBundle {
            fingerprint: cfg.fingerprint()?,
            experiments,
            subgroups,
        },
    )
}

pub fn ablate(cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = load_run_cohort(cfg)?;
    let base = cfg.experiment_config();
    let supported = cfg.backend.supported_pooling();
    let poolings: Vec<PoolingStrategy> = PoolingStrategy::ALL
        .into_iter()
        .filter(|p| supported.contains(p))
        .collect();
    if !poolings.contains(&base.pooling) {
        return Err(Error::UnsupportedPooling {
            requested: base.pooling.to_string(),
            backend_id: cfg.backend.backend_id.clone(),
        }
        .into());
    }
    let data = build_data(cfg, &cohort, &all_paragraph_keys(), &poolings)?;

    let mut experiments = ablation_suite(&data, &base)?;
    if cfg.experiment.single_aspects {
        for aspect in AspectId::ALL {
            experiments.push(single_aspect_experiment(&data, aspect, &base)?.report);
        }
    }
    if cfg.experiment.imaging_subset {
        experiments.push(imaging_subset_experiment(&data, &base)?.report);
    }
    finish(
        cfg,
        &ReportBundle {
            fingerprint: cfg.fingerprint()?,
            experiments,
            subgroups: Vec::new(),
        },
    )
}

pub fn report(dir: &Path) -> anyhow::Result<()> {
    let bundle = read_bundle(dir).with_context(|| format!("reading report in {}", dir.display()))?;
    print!("{}", bundle.render_table());
    println!("fingerprint {}", bundle.fingerprint);
    Ok(())
}

/// Prints a summary of an embeddings file; used by `report --embeddings`.
pub fn describe_embeddings(path: &Path) -> anyhow::Result<()> {
    let e = read_embeddings(path).with_context(|| format!("reading {}", path.display()))?;
    let keys: Vec<String> = e.vectors.keys().map(|k| k.to_string()).collect();
    println!(
        "{}: {} subjects, backend {}, {} pooling, dim {}, paragraphs [{}]",
        path.display(),
        e.subject_ids.len(),
        e.backend_id,
        e.strategy,
        e.dim,
        keys.join(", ")
    );
    Ok(())
}

//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pte_core::cohort::SyntheticConfig;
use pte_core::embedder::{BackendDescriptor, PoolingStrategy};
use pte_core::eval::{EarlyStopping, ExperimentConfig};
use pte_core::features::{FusionStrategy, Vocabularies, DEFAULT_PCA_COMPONENTS};
use pte_core::gbdt::TrainParams;
use pte_core::{sha256_hex, Error, Result};

/// Settings that change where and how fast a run executes but never its
/// results. They are left out of the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Runtime {
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for folds and embedding requests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime {
            output_dir: PathBuf::from("pte-output"),
            cache_dir: None,
            jobs: None,
        }
    }
}

/// Either a cohort file (with an optional long-format lab table) or the
/// synthetic generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labs: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub fusion: FusionStrategy,
    pub pooling: PoolingStrategy,
    pub k: usize,
    /// Number of repetitions; seeds run from `first_seed` upward.
    pub seeds: usize,
    pub first_seed: u64,
    pub pca_components: usize,
    pub early_stopping: EarlyStopping,
    /// `evaluate`: add the shuffled-label baseline.
    pub permutation: bool,
    /// `evaluate`: per-subgroup AUROC of the main experiment.
    pub subgroups: bool,
    /// `ablate`: each aspect embedding as the only input.
    pub single_aspects: bool,
    /// `ablate`: imaging notes restricted to subjects that have them.
    pub imaging_subset: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            fusion: FusionStrategy::ModalityAware,
            pooling: PoolingStrategy::Mean,
            k: 5,
            seeds: 30,
            first_seed: 0,
            pca_components: DEFAULT_PCA_COMPONENTS,
            early_stopping: EarlyStopping::default(),
            permutation: true,
            subgroups: true,
            single_aspects: true,
            imaging_subset: true,
        }
    }
}

pub const DEFAULT_HASH_DIM: usize = 768;

fn default_backend() -> BackendDescriptor {
    BackendDescriptor::hash(DEFAULT_HASH_DIM, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub runtime: Runtime,
    pub cohort: CohortSource,
    pub backend: BackendDescriptor,
    pub experiment: ExperimentSection,
    pub classifier: TrainParams,
    pub vocabularies: Vocabularies,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            runtime: Runtime::default(),
            cohort: CohortSource::default(),
            backend: default_backend(),
            experiment: ExperimentSection::default(),
            classifier: TrainParams::default(),
            vocabularies: Vocabularies::default(),
            base_dir: PathBuf::new(),
        }
    }
}

/// Part of the configuration that determines results.
#[derive(Serialize)]
struct Semantic<'a> {
    cohort: &'a CohortSource,
    backend: &'a BackendDescriptor,
    experiment: &'a ExperimentSection,
    classifier: &'a TrainParams,
    vocabularies: &'a Vocabularies,
}

fn config_error(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        self.classifier.validate()?;
        let e = &self.experiment;
        if e.seeds == 0 {
            return Err(config_error("experiment.seeds must be positive".into()));
        }
        if e.k < 2 {
            return Err(config_error(format!("experiment.k must be at least 2, got {}", e.k)));
        }
        if e.pca_components == 0 {
            return Err(config_error("experiment.pca_components must be positive".into()));
        }
        if self.runtime.jobs == Some(0) {
            return Err(config_error("jobs must be positive".into()));
        }
        if self.cohort.labs.is_some() && self.cohort.path.is_none() {
            return Err(config_error("cohort.labs requires cohort.path".into()));
        }
        Ok(())
    }

    /// The result-determining sections as TOML.
    pub fn semantic_toml(&self) -> Result<String> {
        toml::to_string(&self.semantic()).map_err(|e| config_error(format!("cannot render config: {e}")))
    }

    fn semantic(&self) -> Semantic<'_> {
        Semantic {
            cohort: &self.cohort,
            backend: &self.backend,
            experiment: &self.experiment,
            classifier: &self.classifier,
            vocabularies: &self.vocabularies,
        }
    }

    /// SHA-256 over the result-determining sections.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&self.semantic())?;
        Ok(sha256_hex([bytes.as_slice()]))
    }

    pub fn seeds(&self) -> Vec<u64> {
        let e = &self.experiment;
        (0..e.seeds as u64).map(|i| e.first_seed + i).collect()
    }

    /// Main experiment of `evaluate`; the base of every `ablate` variant.
    pub fn experiment_config(&self) -> ExperimentConfig {
        let e = &self.experiment;
        let mut cfg = ExperimentConfig::fusion(e.fusion);
        cfg.pooling = e.pooling;
        cfg.params = self.classifier.clone();
        cfg.seeds = self.seeds();
        cfg.k = e.k;
        cfg.pca_components = e.pca_components;
        cfg.early_stopping = e.early_stopping;
        cfg
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seeds: Option<usize>,
    pub k: Option<usize>,
    pub fusion: Option<FusionStrategy>,
    pub pooling: Option<PoolingStrategy>,
    pub no_permutation: bool,
    pub no_subgroups: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.output_dir {
            cfg.runtime.output_dir = d.clone();
        } else {
            cfg.runtime.output_dir = cfg.resolve(&cfg.runtime.output_dir);
        }
        if let Some(d) = &self.cache_dir {
            cfg.runtime.cache_dir = Some(d.clone());
        } else if let Some(d) = cfg.runtime.cache_dir.take() {
            cfg.runtime.cache_dir = Some(cfg.resolve(&d));
        }
        if self.jobs.is_some() {
            cfg.runtime.jobs = self.jobs;
        }
        let e = &mut cfg.experiment;
        if let Some(s) = self.seeds {
            e.seeds = s;
        }
        if let Some(k) = self.k {
            e.k = k;
        }
        if let Some(f) = self.fusion {
            e.fusion = f;
        }
        if let Some(p) = self.pooling {
            e.pooling = p;
        }
        if self.no_permutation {
            e.permutation = false;
        }
        if self.no_subgroups {
            e.subgroups = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.seeds(), (0..30).collect::<Vec<u64>>());
        assert_eq!(cfg.cohort.synthetic.n, 256);
        assert_eq!(cfg.cohort.synthetic.positives(), 58);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[experiment]\nfolds = 3\n").unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn fingerprint_ignores_runtime_and_tracks_semantics() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.runtime.output_dir = "elsewhere".into();
        b.runtime.jobs = Some(3);
        b.runtime.cache_dir = Some("c".into());
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let mut c = a.clone();
        c.experiment.seeds = 29;
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
        let mut d = a.clone();
        d.classifier.learning_rate = 0.1;
        assert_ne!(a.fingerprint().unwrap(), d.fingerprint().unwrap());
    }

    #[test]
    fn explicit_defaults_share_the_fingerprint() {
        let explicit = RunConfig::from_toml_str(
            "[experiment]\nfusion = \"modality_aware\"\nseeds = 30\n[classifier]\nlearning_rate = 0.05\n",
        )
        .unwrap();
        assert_eq!(explicit.fingerprint().unwrap(), RunConfig::default().fingerprint().unwrap());
    }

    #[test]
    fn semantic_toml_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.experiment.seeds = 3;
        cfg.cohort.path = Some("cohort.csv".into());
        let text = cfg.semantic_toml().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.fingerprint().unwrap(), cfg.fingerprint().unwrap());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::from_toml_str("[experiment]\nseeds = 10\npooling = \"max\"\n").unwrap();
        Overrides {
            seeds: Some(3),
            no_permutation: true,
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.experiment.seeds, 3);
        assert_eq!(cfg.experiment.pooling, PoolingStrategy::Max);
        assert!(!cfg.experiment.permutation);
        assert!(cfg.experiment.subgroups);
    }

    #[test]
    fn validation_catches_bad_sections() {
        let mut cfg = RunConfig::default();
        cfg.experiment.k = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.cohort.labs = Some("labs.csv".into());
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn book_example_parses() {
        let chapter = include_str!("../../../book/src/cli.md");
        let start = chapter.find("```toml\n").expect("toml block") + "```toml\n".len();
        let len = chapter[start..].find("```").expect("closing fence");
        let cfg = RunConfig::from_toml_str(&chapter[start..start + len]).unwrap();
        assert_eq!(cfg.runtime.jobs, Some(4));
        assert_eq!(cfg.cohort.path.as_deref(), Some(Path::new("cohort.csv")));
        assert_eq!(cfg.classifier.max_depth, 3);
    }
}

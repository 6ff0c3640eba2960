//! `pte`: synthesize or ingest cohorts, serialize, embed, evaluate, ablate, report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pte_core::cohort::SignalMode;
use pte_core::embedder::PoolingStrategy;
use pte_core::features::FusionStrategy;
use pte_core::ErrorCategory;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "pte", version, about = "Post-traumatic epilepsy risk prediction pipeline")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort file.
    Synth {
        /// Config file; only its [cohort.synthetic] section is read.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of subjects.
        #[arg(long)]
        n: Option<usize>,
        /// Fraction of positive subjects, in (0, 1).
        #[arg(long)]
        prevalence: Option<f64>,
        #[arg(long, value_parser = parse_signal_mode)]
        signal_mode: Option<SignalMode>,
        /// Output path; `.csv` writes the table layout, anything else JSON lines.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a cohort file, merge lab series and apply inclusion criteria.
    Ingest {
        input: PathBuf,
        /// Long-format lab table (subject_id, analyte, time_days, value).
        #[arg(long)]
        labs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write six aspect paragraphs per subject as JSON lines.
    Serialize {
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the concatenated paragraph.
        #[arg(long)]
        combined: bool,
    },
    /// Embed a paragraphs file and write pooled vectors as JSON lines.
    Embed {
        paragraphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_pooling)]
        pooling: Option<PoolingStrategy>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the configured experiment with its baseline and subgroups.
    Evaluate(RunArgs),
    /// Run pooling, paragraph and single-aspect ablations.
    Ablate(RunArgs),
    /// Print the summary table of a report directory.
    Report {
        #[arg(required_unless_present = "embeddings")]
        dir: Option<PathBuf>,
        /// Also describe an embeddings file.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Worker threads for folds and embedding requests.
    #[arg(long)]
    jobs: Option<usize>,
    /// Number of repetition seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Folds per repetition.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionStrategy>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<PoolingStrategy>,
    /// Skip the shuffled-label baseline.
    #[arg(long)]
    no_permutation: bool,
    /// Skip subgroup analysis.
    #[arg(long)]
    no_subgroups: bool,
}

fn parse_pooling(s: &str) -> Result<PoolingStrategy, String> {
    s.parse().map_err(|e: pte_core::Error| e.to_string())
}

fn parse_fusion(s: &str) -> Result<FusionStrategy, String> {
    s.parse().map_err(|e: pte_core::Error| e.to_string())
}

fn parse_signal_mode(s: &str) -> Result<SignalMode, String> {
    match s {
        "planted" => Ok(SignalMode::Planted),
        "text_only" => Ok(SignalMode::TextOnly),
        _ => Err(format!("unknown signal mode {s:?} (planted, text_only)")),
    }
}

fn run_config(args: RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    Overrides {
        output_dir: args.out,
        cache_dir: args.cache_dir,
        jobs: args.jobs,
        seeds: args.seeds,
        k: args.k,
        fusion: args.fusion,
        pooling: args.pooling,
        no_permutation: args.no_permutation,
        no_subgroups: args.no_subgroups,
    }
    .apply(&mut cfg);
    cfg.validate()?;
    init_pool(cfg.runtime.jobs)?;
    Ok(cfg)
}

fn init_pool(jobs: Option<usize>) -> anyhow::Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            n,
            prevalence,
            signal_mode,
            out,
        } => commands::synth(commands::SynthArgs {
            config,
            seed,
            n,
            prevalence,
            signal_mode,
            out,
        }),
        Command::Ingest { input, labs, out } => commands::ingest(&input, labs.as_deref(), &out),
        Command::Serialize { cohort, out, combined } => commands::serialize(&cohort, &out, combined),
        Command::Embed {
            paragraphs,
            out,
            config,
            pooling,
            cache_dir,
            jobs,
        } => {
            let mut cfg = RunConfig::load_or_default(config.as_deref())?;
            Overrides {
                cache_dir,
                jobs,
                pooling,
                ..Default::default()
            }
            .apply(&mut cfg);
            cfg.validate()?;
            init_pool(cfg.runtime.jobs)?;
            commands::embed(&cfg, &paragraphs, &out)
        }
        Command::Evaluate(args) => commands::evaluate(&run_config(args)?),
        Command::Ablate(args) => commands::ablate(&run_config(args)?),
        Command::Report { dir, embeddings } => {
            if let Some(dir) = dir {
                commands::report(&dir)?;
            }
            if let Some(e) = embeddings {
                commands::describe_embeddings(&e)?;
            }
            Ok(())
        }
    }
}

/// 2 for configuration errors, 3 for data errors, 4 for backend errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    let category = err
        .chain()
        .find_map(|e| e.downcast_ref::<pte_core::Error>())
        .map(pte_core::Error::category);
    match category {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Backend) => 4,
        Some(ErrorCategory::Data) | None => 3,
    }
}

/// The error chain, skipping causes already quoted by an outer message.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !msg.contains(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

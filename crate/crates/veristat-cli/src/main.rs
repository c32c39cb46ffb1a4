//! Operator CLI for veristat scenarios.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or input
//! error. Identical (config, seed) runs produce byte-identical
//! artifacts; wall-clock timestamps are confined to `run_meta.json`,
//! which the manifest deliberately omits.

mod artifacts;
mod commands;
mod stats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use veristat::scenario::ScenarioConfig;

const EXPERIMENT_COLUMNS: &str = "\
Artifacts:
  samples.jsonl   one poll per line: m, q, i, status, code?, latency_ms, text, v?
  clusters.csv    question_id, node_id, n_ok, rms_scatter
  distances.csv   question_id, config_a, config_b, distance, scatter_a, scatter_b, ratio, distinguishable
  summary.csv     config_a, config_b, d_ave, scatter_a_ave, scatter_b_ave, ratio, distinguishable
  manifest.json   config hash, seed, artifact digests
  run_meta.json   timestamps only (excluded from the manifest)";

const RANK_COLUMNS: &str = "\
Artifacts:
  rank.csv        question_id, effectiveness, then one `ratio:a|b` column
                  per configuration pair; unscored questions leave the
                  score cells empty and sort last";

#[derive(Parser)]
#[command(
    name = "veristat",
    version,
    about = "Statistical verification of LLM node honesty: experiments, epochs, ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults to the scenario's out_dir, else ".".
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override polls per node per question.
    #[arg(long, global = true, value_name = "N")]
    repeats: Option<u32>,

    /// Override the per-poll timeout.
    #[arg(long = "timeout-ms", global = true, value_name = "MS")]
    timeout_ms: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Poll every node over the question set and emit cluster statistics.
    #[command(after_help = EXPERIMENT_COLUMNS)]
    Experiment,

    /// Run epochs of the validation protocol and settle stakes.
    Epoch {
        /// How many epochs to run.
        #[arg(long, default_value_t = 1)]
        epochs: u64,
    },

    /// Rank questions from a samples file by configuration separation.
    #[command(after_help = RANK_COLUMNS)]
    Rank {
        /// Samples JSONL (experiment output or imported dataset).
        #[arg(long, value_name = "PATH")]
        samples: PathBuf,
    },

    /// Probe the scenario's candidate node for admission.
    Admit,

    /// Recompute cluster statistics from an existing samples file.
    #[command(after_help = EXPERIMENT_COLUMNS)]
    Replay {
        /// Samples JSONL (experiment output or imported dataset).
        #[arg(long, value_name = "PATH")]
        samples: PathBuf,
    },
}

/// Failures split by who can fix them: bad input is the operator's
/// (exit 2), a failing run is ours (exit 1).
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

/// Shorthand for classifying error sources.
pub trait FailureExt<T> {
    fn or_config(self) -> Result<T, Failure>;
    fn or_runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailureExt<T> for Result<T, E> {
    fn or_config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn or_runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Loads the scenario named by --config, applies flag overrides, and
/// validates it. Everything here is the operator's input, so every
/// failure is config-class.
fn load_scenario(cli: &Cli) -> Result<(ScenarioConfig, String), Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("--config is required")))?;
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Config(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    let hash = artifacts::sha256_hex(&bytes);

    let mut scenario = ScenarioConfig::load(path).or_config()?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(repeats) = cli.repeats {
        scenario.repeats = repeats;
        scenario.epoch.repeats = repeats;
    }
    if let Some(timeout_ms) = cli.timeout_ms {
        scenario.timeout_ms = timeout_ms;
        scenario.epoch.timeout_ms = timeout_ms;
    }
    if let Some(out) = &cli.out {
        scenario.out_dir = Some(out.clone());
    }
    scenario.validate().or_config()?;
    Ok((scenario, hash))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Experiment => {
            let (scenario, hash) = load_scenario(&cli)?;
            commands::experiment(&scenario, &hash)
        }
        Command::Epoch { epochs } => {
            let (scenario, hash) = load_scenario(&cli)?;
            commands::epoch(&scenario, &hash, *epochs)
        }
        Command::Admit => {
            let (scenario, hash) = load_scenario(&cli)?;
            commands::admit(&scenario, &hash)
        }
        Command::Rank { samples } => commands::rank(samples, cli.out.as_deref()),
        Command::Replay { samples } => {
            let detection = match &cli.config {
                Some(_) => load_scenario(&cli)?.0.detection,
                None => Default::default(),
            };
            commands::replay(samples, cli.out.as_deref(), &detection)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use hiergeo_core::config::PipelineConfig;

/// Distance-aware hierarchical cross-view retrieval pipeline.
#[derive(Parser, Debug)]
#[command(name = "hiergeo", version, about)]
struct Cli {
    /// Pipeline config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic campus: registry and raw features.
    Gen,
    /// Train the shared encoder and embed every image.
    Train,
    /// Evaluate both retrieval directions on the test split.
    Eval {
        #[arg(long, value_enum, default_value_t = RerankChoice::None)]
        rerank: RerankChoice,
    },
    /// Hyper-parameter sweeps and the single- vs multi-scale study.
    Ablate {
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// Hinge margin of the triplet models in the single- vs multi-scale study.
        #[arg(long, default_value_t = 0.1)]
        margin: f64,
        /// Retrieval direction that is scored, one CSV row per sweep point.
        #[arg(long, value_enum, default_value_t = DirectionChoice::SatelliteToDrone)]
        direction: DirectionChoice,
    },
    /// Re-rank an external square distance matrix (HGEO1D binary or CSV).
    Rerank {
        /// Square matrix over queries followed by gallery items.
        #[arg(long)]
        matrix: PathBuf,
        /// Number of leading rows that are queries.
        #[arg(long)]
        queries: usize,
        #[arg(long, value_enum, default_value_t = RerankChoice::Standard)]
        method: RerankChoice,
    },
    /// Mean absolute rank shift per original position after re-ranking.
    ShiftProfile {
        #[arg(long, value_enum, default_value_t = RerankChoice::Msrerank)]
        rerank: RerankChoice,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RerankChoice {
    None,
    Standard,
    Msrerank,
}

impl RerankChoice {
    pub fn label(self) -> &'static str {
        match self {
            RerankChoice::None => "none",
            RerankChoice::Standard => "standard",
            RerankChoice::Msrerank => "msrerank",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Sweep {
    Tau,
    Lambda1,
    SingleVsMulti,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DirectionChoice {
    SatelliteToDrone,
    DroneToSatellite,
}

impl From<DirectionChoice> for hiergeo_core::pipeline::Direction {
    fn from(d: DirectionChoice) -> Self {
        match d {
            DirectionChoice::SatelliteToDrone => Self::SatelliteToDrone,
            DirectionChoice::DroneToSatellite => Self::DroneToSatellite,
        }
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.io.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval { rerank } => commands::eval(&cfg, rerank),
        Command::Ablate {
            sweep,
            margin,
            direction,
        } => commands::ablate(&cfg, sweep, margin, direction.into()),
        Command::Rerank {
            matrix,
            queries,
            method,
        } => commands::rerank(&cfg, &matrix, queries, method),
        Command::ShiftProfile { rerank } => commands::shift_profile(&cfg, rerank),
    }
}

/// 2 for missing or invalid inputs, 3 for config validation, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hiergeo_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 3,
                Error::Input(_) | Error::Lookup { .. } | Error::Parse(_) | Error::Shape(_) => 2,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

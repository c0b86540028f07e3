//! Command-line pipeline around the `spinfield` library.

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::{CliError, InStage, StageError};
use spinfield::Engine;
use stages::Layout;

#[derive(Debug, Parser)]
#[command(name = "spinfield", version, about = "Soft-spin Ising pipeline for territorial data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub engine: Option<EngineChoice>,
    /// Worker threads for parallel chains.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineChoice {
    Ising,
    Langevin,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Load and check the dataset, writing validated.csv.
    Validate,
    /// Composite indices, PCA and the external field.
    Field,
    /// Profile groups and coupling spectrum.
    Graph,
    /// Run the samplers and persist their traces.
    Simulate,
    /// Conformal intervals from the persisted traces.
    Conformal,
    /// Comparisons, residual analysis and group summaries.
    Analyze,
    /// Collect the tables into report.md.
    Report,
    /// All stages in order, plus a manifest.
    Pipeline,
    /// Write a synthetic dataset to <out>/synthetic.csv.
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Field => "field",
            Command::Graph => "graph",
            Command::Simulate => "simulate",
            Command::Conformal => "conformal",
            Command::Analyze => "analyze",
            Command::Report => "report",
            Command::Pipeline => "pipeline",
            Command::Synth => "synth",
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = cli.engine {
        cfg.engines = match e {
            EngineChoice::Ising => vec![Engine::Ising],
            EngineChoice::Langevin => vec![Engine::Langevin],
            EngineChoice::Both => vec![Engine::Ising, Engine::Langevin],
        };
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), StageError> {
    let stage = cli.command.name();
    let cfg = resolve_config(cli).in_stage("config")?;
    let out = Layout::new(cfg.out_dir.clone());
    if cli.command == Command::Pipeline {
        return stages::pipeline(&cfg, &out);
    }
    cfg.validate().in_stage("config")?;
    let res = match cli.command {
        Command::Validate => stages::validate(&cfg, &out).map(drop),
        Command::Field => stages::field(&cfg, &out),
        Command::Graph => stages::graph(&cfg, &out),
        Command::Simulate => stages::simulate(&cfg, &out),
        Command::Conformal => stages::conformal(&cfg, &out),
        Command::Analyze => stages::analyze(&cfg, &out),
        Command::Report => stages::report(&cfg, &out).map(drop),
        Command::Synth => {
            let path = out.file("synthetic.csv");
            stages::synth(&cfg, &path).map(|n| eprintln!("synth: {n} units -> {}", path.display()))
        }
        Command::Pipeline => unreachable!(),
    };
    res.in_stage(stage)
}

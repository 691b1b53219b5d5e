//! `spurcl`: generate scenarios, train continual learners, run the local
//! spurious feature protocol, analyze features and aggregate reports.

mod commands;
mod config;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spurcl_core::Error;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "spurcl", version, about = "Continual-learning lab for spurious features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration (defaults to the built-in synthetic config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Evaluate after every epoch as well as after every task.
    #[arg(long)]
    per_epoch: bool,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Materialize scenarios as SPFV files plus a manifest per seed.
    Generate(Common),
    /// Train every seed × grid cell and write run logs.
    Train(Common),
    /// Multi-head versus single-head gaps on class-incremental tasks.
    Localspur(Common),
    /// Classify the injected and content features of each scenario.
    Analyze(Common),
    /// Aggregate run logs under a directory into CSV tables and SVG plots.
    Report {
        /// Directory holding the runs (defaults to `--out` or the config's output_dir).
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Progress output, silenced by `--quiet`.
#[derive(Debug, Clone, Copy)]
pub struct Ui {
    pub quiet: bool,
}

impl Ui {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.eval.per_epoch |= common.per_epoch;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 1,
        Error::Io(_) | Error::Format(_) | Error::CorruptRecord { .. } => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(c) => commands::generate(&load(&c)?, Ui { quiet: c.quiet }),
        Command::Train(c) => commands::train(&load(&c)?, Ui { quiet: c.quiet }),
        Command::Localspur(c) => commands::localspur(&load(&c)?, Ui { quiet: c.quiet }),
        Command::Analyze(c) => commands::analyze(&load(&c)?, Ui { quiet: c.quiet }),
        Command::Report { dir, common } => {
            let dir = match dir {
                Some(d) => d,
                None => load(&common)?.output_dir,
            };
            report::report(&dir, Ui { quiet: common.quiet })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Command-line front end: argument parsing, config resolution and
//! exit-code mapping around the pipelines in [`pipeline`].

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod source;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::config::{ConfigError, RunConfig};
use crate::pipeline::{RunOptions, Subcommand};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Mode table of the ideal guide.
    Modes,
    /// Mean-amplitude generators, power spectral densities and mean free paths.
    Moments,
    /// Transport spectrum, equipartition state and power trajectory.
    Transport,
    /// Equipartition state and distance only.
    Equipartition,
    /// Monte Carlo validation of the diffusion limit.
    Montecarlo,
    /// Figure data for both reference geometries.
    ReproduceFigures,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Modes => Subcommand::Modes,
            Command::Moments => Subcommand::Moments,
            Command::Transport => Subcommand::Transport,
            Command::Equipartition => Subcommand::Equipartition,
            Command::Montecarlo => Subcommand::MonteCarlo,
            Command::ReproduceFigures => Subcommand::ReproduceFigures,
        }
    }
}

/// Long-range wave statistics in random rectangular waveguides.
#[derive(Debug, Parser)]
#[command(name = "waveguide", version)]
pub struct Cli {
    /// Pipeline to run.
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    /// Require a cached coupling tensor instead of assembling one.
    #[arg(long)]
    pub no_assemble: bool,
    /// Monte Carlo seed; overrides `montecarlo.seed`.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

/// Resolve the config and run options from parsed arguments.
pub fn resolve(cli: &Cli) -> Result<(RunConfig, RunOptions), ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.montecarlo.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let opts = RunOptions { out_dir: cfg.output.dir.clone(), no_assemble: cli.no_assemble };
    Ok((cfg, opts))
}

/// Parse `args`, run the pipeline and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let (cfg, opts) = match resolve(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match pipeline::run(cli.command.into(), &cfg, &opts) {
        Ok(_) => EXIT_SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

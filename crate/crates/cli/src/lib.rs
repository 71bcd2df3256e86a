//! Command-line experiments over `sfnn-core`.
//!
//! Each subcommand writes CSV tables, SVG plots, the effective `config.toml`
//! and a `manifest.json` into its output directory. Exit codes: 0 on success,
//! 2 on configuration or I/O errors, 3 on numerical failure, 64 on usage errors.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{Loaded, Overrides, Section};
use crate::error::{CliResult, EXIT_OK, EXIT_USAGE};
use crate::manifest::RunManifest;
use crate::output::RunContext;

#[derive(Debug, Parser)]
#[command(name = "sfnn", version, about = "Stochastic Fredholm fixed-point network experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory [default: out/<subcommand>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Number of simulated paths, for subcommands that simulate an ensemble.
    #[arg(long, global = true)]
    pub paths: Option<usize>,

    /// Fixed-point tolerance.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Linear stochastic Fredholm network, checked against a dense solve.
    Linear {
        /// Use the built-in contractive demo, ignoring the config file and environment.
        #[arg(long)]
        demo: bool,
    },
    /// Nonlinear Fredholm network with an activation.
    Dsfnn,
    /// Volterra–Fredholm fixed point.
    Vf,
    /// Black–Scholes pricing, barrier boundary-value problem and Galerkin projection.
    Bs,
    /// Interbank distress contagion.
    Contagion,
    /// Merton jump diffusion with a learned kernel.
    Merton,
    /// A-priori error bounds and prescribed depth.
    Bounds,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Linear { .. } => commands::linear::LinearSection::NAME,
            Command::Dsfnn => commands::dsfnn::DsfnnSection::NAME,
            Command::Vf => commands::vf::VfSection::NAME,
            Command::Bs => commands::bs::BsSection::NAME,
            Command::Contagion => commands::contagion::ContagionSection::NAME,
            Command::Merton => commands::merton::MertonSection::NAME,
            Command::Bounds => commands::bounds::BoundsSection::NAME,
        }
    }
}

fn env_lookup(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

/// Loads the section, runs `body` and writes the manifest.
fn execute<T: Section>(
    global: &GlobalArgs,
    defaults_only: bool,
    body: impl FnOnce(&Loaded<T>, &mut RunContext) -> CliResult<()>,
) -> CliResult<RunManifest> {
    let started = Instant::now();
    let overrides = Overrides {
        seed: global.seed,
        tol: global.tol,
        paths: global.paths,
    };
    let loaded = config::load::<T>(global.config.as_deref(), &overrides, &env_lookup, defaults_only)?;
    let dir = global.out.clone().unwrap_or_else(|| PathBuf::from("out").join(T::NAME));
    let mut ctx = RunContext::create(&dir)?;
    ctx.warnings.extend(loaded.warnings.iter().cloned());
    if defaults_only && global.config.is_some() {
        ctx.warnings.push("--demo ignores --config".to_owned());
    }
    ctx.write_config(&loaded.effective)?;
    body(&loaded, &mut ctx)?;
    let manifest = RunManifest {
        subcommand: T::NAME.to_owned(),
        config_digest: loaded.digest.clone(),
        config_source: loaded.source.as_ref().map(|p| p.display().to_string()),
        seed: loaded.run.seed,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        files: ctx.files().to_vec(),
        duration_seconds: started.elapsed().as_secs_f64(),
        dropped_points: ctx.dropped_points,
        warnings: ctx.warnings.clone(),
    };
    manifest.write(&ctx.dir)?;
    Ok(manifest)
}

pub fn dispatch(cli: &Cli) -> CliResult<RunManifest> {
    let g = &cli.global;
    match cli.command {
        Command::Linear { demo } => execute(g, demo, commands::linear::run),
        Command::Dsfnn => execute(g, false, commands::dsfnn::run),
        Command::Vf => execute(g, false, commands::vf::run),
        Command::Bs => execute(g, false, commands::bs::run),
        Command::Contagion => execute(g, false, commands::contagion::run),
        Command::Merton => execute(g, false, commands::merton::run),
        Command::Bounds => execute(g, false, commands::bounds::run),
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => error::EXIT_CONFIG,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(&cli) {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: wrote {} files (config {})",
                manifest.subcommand,
                manifest.files.len(),
                manifest.config_digest
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("sfnn {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}


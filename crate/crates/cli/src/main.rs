use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use meson_cli::commands;
use meson_cli::{ConfigError, Format, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "meson", version, about = "Quench spectroscopy of the Ising chain in a longitudinal field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (flat `section.key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed, overrides `plan.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[arg(long, global = true, value_parser = ["csv", "json", "both"])]
    format: Option<String>,
    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trotterized quench from the fully polarized state.
    Quench,
    /// Lowest zero-momentum levels by exact diagonalization.
    Ed,
    /// Power spectrum and labeled peaks of a trace CSV.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
    },
    /// Quench spectroscopy over `sweep.g` at fixed `sweep.h`.
    Sweep,
    /// Connected x correlations and light-cone front.
    Correlate,
    /// Print the normalized configuration.
    Config,
}

fn build_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| ConfigError(format!("override '{o}' is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.plan.seed = seed;
    }
    if let Some(f) = &cli.format {
        cfg.output.format = f.parse::<Format>()?;
    }
    if cli.parallel == Some(0) {
        return Err(ConfigError("--parallel must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<()> {
    let parallel = cli.parallel.is_none_or(|k| k > 1);
    let written = match &cli.command {
        Command::Quench => commands::cmd_quench(cfg)?,
        Command::Ed => commands::cmd_ed(cfg)?,
        Command::Spectrum { input } => commands::cmd_spectrum(cfg, input)?,
        Command::Sweep => commands::cmd_sweep(cfg, parallel)?,
        Command::Correlate => commands::cmd_correlate(cfg)?,
        Command::Config => {
            print!("{}", cfg.emit());
            Vec::new()
        }
    };
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.parallel {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| run(&cli, &cfg)),
            Err(e) => Err(e.into()),
        },
        None => run(&cli, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

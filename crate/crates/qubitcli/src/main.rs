mod artifact;
mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use error::{CliError, Result};
use pipeline::Ctx;

#[derive(Parser)]
#[command(
    name = "qubitcli",
    version,
    about = "Simulate, analyze, and fit depolarization-rate noise records"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH", default_value = "qubitcli.toml")]
    config: PathBuf,

    /// Run directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "qubitcli-out")]
    out: PathBuf,

    /// Override the master seed from the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Affects speed only, never
    /// results.
    #[arg(long, global = true, value_name = "K")]
    parallel: Option<usize>,

    /// Override the spectral fit band, Hz.
    #[arg(long, global = true, value_name = "FMIN,FMAX", value_parser = parse_band)]
    band: Option<(f64, f64)>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate Γ₁ series for every (qubit, temperature).
    Simulate,
    /// Spectra, a/f + b fits, and per-temperature tables from the series.
    Analyze,
    /// Recover physical parameters from the mean and variance tables.
    Fit,
    /// Pad-geometry QP arrival fractions and geometry ratios.
    Diffuse,
    /// Consolidate plot-ready files and write the checksum manifest.
    Report,
    /// The full pipeline: simulate, analyze, fit, diffuse, report.
    All,
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| "expected FMIN,FMAX".to_string())?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad FMIN {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad FMAX {hi:?}"))?;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(format!("need 0 < FMIN < FMAX, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(k) = cli.parallel {
        if k == 0 {
            return Err(CliError::Config("--parallel must be >= 1".into()));
        }
        // Ignore the error if a pool already exists (tests, repeated calls);
        // thread count never changes results.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    let cfg = Config::load(&cli.config, cli.seed, cli.band)?;
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
    };
    match cli.cmd {
        Cmd::Simulate => pipeline::cmd_simulate(&ctx),
        Cmd::Analyze => pipeline::cmd_analyze(&ctx),
        Cmd::Fit => pipeline::cmd_fit(&ctx),
        Cmd::Diffuse => pipeline::cmd_diffuse(&ctx),
        Cmd::Report => pipeline::cmd_report(&ctx),
        Cmd::All => pipeline::cmd_all(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qubitcli: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

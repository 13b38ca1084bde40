mod commands;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mplab::config::{Command, Manifest, RunConfig, WORKERS_ENV};

use crate::commands::{execute, Failure};

/// Marchenko-Pastur analytics and Monte Carlo checks of resolvent and
/// linear-spectral-statistic fluctuations.
#[derive(Parser)]
#[command(name = "mplab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run whatever command the config names.
    Run(RunArgs),
    /// Tabulate support, density, m(σ) and s(z).
    Law(RunArgs),
    /// Tabulate every kernel form, their ratio and PSD diagnostics.
    Kernel(RunArgs),
    /// Monte Carlo of the resolvent process against the kernel forms.
    Simulate(RunArgs),
    /// Monte Carlo of a pair of linear spectral statistics.
    Lss(RunArgs),
    /// Sample the limiting Gaussian process on a grid.
    Gp(RunArgs),
    /// Re-run the configuration recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    #[arg(long, short)]
    manifest: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Directory for outputs; overrides the config.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Worker threads; overrides the config and the MPLAB_WORKERS variable.
    #[arg(long, short)]
    workers: Option<usize>,
}

const DEFAULT_OUTPUT_DIR: &str = "mplab-out";

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn load(cmd: Cmd) -> Result<(RunConfig, Common, Option<usize>), Failure> {
    let expect = |args: RunArgs, want: Option<Command>| -> Result<(RunConfig, Common, Option<usize>), Failure> {
        let cfg = RunConfig::from_toml(&read(&args.config)?).map_err(|e| Failure::Config(e.to_string()))?;
        if let Some(want) = want {
            if cfg.command != want {
                return Err(Failure::Config(format!("config describes {:?}, not {want:?}", cfg.command)));
            }
        }
        Ok((cfg, args.common, None))
    };
    match cmd {
        Cmd::Run(a) => expect(a, None),
        Cmd::Law(a) => expect(a, Some(Command::Law)),
        Cmd::Kernel(a) => expect(a, Some(Command::Kernel)),
        Cmd::Simulate(a) => expect(a, Some(Command::Simulate)),
        Cmd::Lss(a) => expect(a, Some(Command::Lss)),
        Cmd::Gp(a) => expect(a, Some(Command::Gp)),
        Cmd::Replay(a) => {
            let m = Manifest::from_json(&read(&a.manifest)?).map_err(|e| Failure::Config(e.to_string()))?;
            Ok((m.config, a.common, Some(m.workers)))
        }
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let (cfg, common, manifest_workers) = load(cli.cmd)?;
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = match common.workers.or(manifest_workers) {
        Some(0) => return Err(Failure::Config("workers must be positive".into())),
        Some(w) => w,
        None => cfg.resolve_workers(env.as_deref()).map_err(|e| Failure::Config(e.to_string()))?,
    };
    let dir = common
        .output_dir
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let start = Instant::now();
    let mut outputs = execute(&cfg, workers)?;
    let manifest = Manifest {
        tool: "mplab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seeds: cfg.seeds(),
        config: cfg,
        workers,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: outputs.files.iter().map(|f| f.name.clone()).collect(),
    };
    let text = manifest.to_json().map_err(|e| Failure::Numerical(e.to_string()))?;
    outputs.files.push(output::OutputFile { name: "manifest.json".into(), bytes: text.into_bytes() });
    outputs
        .write_all(&dir)
        .map_err(|e| Failure::Numerical(format!("writing {}: {e}", dir.display())))?;
    for f in &outputs.files {
        println!("{}", dir.join(&f.name).display());
    }
    Ok(outputs.gate_failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("gate failure: a z-score exceeded the configured gate-z");
            ExitCode::from(1)
        }
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

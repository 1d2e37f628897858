// SPDX-License-Identifier: Apache-2.0

//! `aidac` command-line experiments.
//!
//! Every subcommand reads `--config` (a JSON path or `default`), writes its
//! artifacts under `--out` and prints one summary line. Failures print a
//! single JSON object on stderr and exit nonzero.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use aidac_core::config::{default_aidac, load_config, Config, ConfigError};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use commands::Ctx;
use output::{OutDir, Provenance};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Input(_) => "input",
            CliError::Compute(_) => "compute",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "aidac", version, about = "Behavioral simulator and cost model experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration JSON, or `default` for the reference design.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Output directory.
    #[arg(long, global = true, default_value = "aidac-out")]
    out: PathBuf,
    /// Variation seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Input conversion voltage of every code on one row.
    TransferSweep(commands::SweepArgs),
    /// Endpoint-fit INL and DNL of the input conversion.
    InlDnl(commands::SweepArgs),
    /// Monte Carlo spread of one experiment over sampled instances.
    MonteCarlo(commands::McArgs),
    /// MAC error curves of a single macro with 128 input channels.
    MacError(commands::MacErrorArgs),
    /// Run one vector-matrix multiply through the full pipeline.
    RunVmm(commands::VmmArgs),
    /// Energy, latency, area and throughput of a mapped workload.
    CostReport(commands::CostArgs),
    /// Quantized MLP accuracy, ideal digital against simulated.
    Infer(commands::InferArgs),
    /// Fit the variation sigmas to their spread targets.
    Calibrate(commands::CalibrateArgs),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::TransferSweep(_) => "transfer-sweep",
            Cmd::InlDnl(_) => "inl-dnl",
            Cmd::MonteCarlo(_) => "monte-carlo",
            Cmd::MacError(_) => "mac-error",
            Cmd::RunVmm(_) => "run-vmm",
            Cmd::CostReport(_) => "cost-report",
            Cmd::Infer(_) => "infer",
            Cmd::Calibrate(_) => "calibrate",
        }
    }
}

fn read_config(source: &str) -> Result<Config, CliError> {
    if source == "default" {
        return Ok(default_aidac());
    }
    let text = std::fs::read_to_string(source).map_err(|e| CliError::Io {
        path: source.to_string(),
        message: e.to_string(),
    })?;
    Ok(load_config(&text)?)
}

fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = read_config(&cli.common.config)?;
    let seed = cli.common.seed.unwrap_or(cfg.variation.seed);
    let prov = Provenance::new(cli.cmd.name(), &cfg.to_json(), seed);
    let out = OutDir::create(&cli.common.out, prov)?;
    let ctx = Ctx { cfg, seed, out };
    let go = || match &cli.cmd {
        Cmd::TransferSweep(a) => commands::transfer(&ctx, a),
        Cmd::InlDnl(a) => commands::inl_dnl(&ctx, a),
        Cmd::MonteCarlo(a) => commands::monte_carlo(&ctx, a),
        Cmd::MacError(a) => commands::mac_error(&ctx, a),
        Cmd::RunVmm(a) => commands::run_vmm_cmd(&ctx, a),
        Cmd::CostReport(a) => commands::cost(&ctx, a),
        Cmd::Infer(a) => commands::infer(&ctx, a),
        Cmd::Calibrate(a) => commands::calibrate(&ctx, a),
    };
    match cli.common.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(go),
        None => go(),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&CliError::Usage(first.to_string()));
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

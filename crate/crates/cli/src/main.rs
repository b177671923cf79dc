//! `bzb`: verify, sweep, trace and benchmark bang–zero–bang extremals.
//!
//! Exit status: 0 certified, 1 not certified, 2 configuration or computation error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use bzb_core::vehicle_bench::ProbeConfig;
use bzb_core::Settings;

use commands::{BenchArgs, Status};
use config::{RunConfig, OUT_DIR_VAR};

#[derive(Parser)]
#[command(name = "bzb", version, about = "Certify bang-zero-bang extremals as strict strong-local minimizers")]
struct Cli {
    /// Output directory (default: config `outputs.dir`, then $BZB_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check and write the JSON report.
    Verify { config: PathBuf },
    /// One verification per parameter value, written as a CSV table.
    Sweep {
        config: PathBuf,
        /// `T` or a key of `[parameters]`.
        #[arg(long)]
        param: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long)]
        count: usize,
    },
    /// Extremal, switching-function and Clarke singular-value curves as CSV.
    Trace { config: PathBuf },
    /// Vehicle benchmark: closed form, full verification and the cost probe.
    Bench {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long = "X", default_value_t = 1.0)]
        x: f64,
        #[arg(long = "T", default_value_t = 2.3)]
        t: f64,
        #[arg(long, default_value_t = ProbeConfig::default().radius)]
        probe_radius: f64,
        #[arg(long, default_value_t = ProbeConfig::default().points)]
        probe_points: usize,
    },
}

fn run(cli: Cli) -> Result<Status> {
    let out = cli.out_dir.as_deref();
    match cli.command {
        Command::Verify { config } => commands::verify_cmd(&RunConfig::load(&config)?, out),
        Command::Sweep { config, param, from, to, count } => {
            commands::sweep_cmd(&RunConfig::load(&config)?, &param, from, to, count, out)
        }
        Command::Trace { config } => commands::trace_cmd(&RunConfig::load(&config)?, out).map(|()| Status::Certified),
        Command::Bench { alpha, x, t, probe_radius, probe_points } => {
            let dir = out
                .map(PathBuf::from)
                .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            let probe = ProbeConfig { radius: probe_radius, points: probe_points, ..ProbeConfig::default() };
            commands::bench_cmd(&BenchArgs { alpha, x, t, probe }, &Settings::default(), &dir)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Certified) => ExitCode::SUCCESS,
        Ok(Status::NotCertified) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

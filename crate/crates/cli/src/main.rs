use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use photon_cli::{CliError, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "photon", version, about = "Photon wavefunctions in the two-component Berry-gauge representation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every identity check and write verify.json.
    Verify(Common),
    /// Scan the spin-Hall shift over angles and write shift_scan.{csv,json}.
    ShiftScan(Common),
    /// Synthesize field snapshots on a plane and write fields_t*.csv and fields.json.
    Fields(Common),
    /// Compare two Berry gauges and write gauge_demo.json.
    GaugeDemo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PHOTON_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("PHOTON_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    init_threads()?;
    let (common, f): (&Common, fn(&RunConfig, &std::path::Path) -> Result<Outcome, CliError>) = match &cli.command {
        Command::Verify(c) => (c, photon_cli::verify),
        Command::ShiftScan(c) => (c, photon_cli::shift_scan),
        Command::Fields(c) => (c, photon_cli::fields),
        Command::GaugeDemo(c) => (c, photon_cli::gauge_demo),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    f(&cfg, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) => {
            for p in &o.files {
                println!("wrote {}", p.display());
            }
            match o.first_failure {
                None if o.passed => ExitCode::SUCCESS,
                failure => {
                    eprintln!("check failed: {}", failure.unwrap_or_default());
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("photon: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

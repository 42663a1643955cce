use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparselab::lab::{self, ExperimentConfig, Overrides, EXIT_CONFIG};
use sparselab::Error;

#[derive(Parser)]
#[command(name = "sparselab", version, about = "Weighted norm experiments for sparse operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weight constants with their maximizing cubes.
    Constants(Common),
    /// Norm estimates against the theorem bound.
    CheckTheorem(Common),
    /// Constants of x^(q-1-eps) against eps, with slope fits.
    SharpnessScan(Common),
    /// Slack ratios of each step of the proof chain.
    Audit(Common),
    /// Estimates against the one-supremum constant.
    ConjectureProbe(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; the command's default otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; the main table goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

type Runner = fn(&ExperimentConfig) -> sparselab::Result<lab::CommandOutput>;

fn run(command: Command) -> Result<i32, Error> {
    let (args, default, cmd): (Common, fn() -> ExperimentConfig, Runner) = match command {
        Command::Constants(a) => (a, ExperimentConfig::constants_default, lab::cmd_constants),
        Command::CheckTheorem(a) => (a, ExperimentConfig::battery, lab::cmd_check_theorem),
        Command::SharpnessScan(a) => (a, ExperimentConfig::sharpness_default, lab::cmd_sharpness_scan),
        Command::Audit(a) => (a, ExperimentConfig::battery, lab::cmd_audit),
        Command::ConjectureProbe(a) => (a, ExperimentConfig::battery, lab::cmd_conjecture_probe),
    };
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => default(),
    };
    cfg.apply(&Overrides {
        depth: args.depth,
        p: args.p,
        q: args.q,
        r: args.r,
        gamma: args.gamma,
        seed: args.seed,
        out: args.out,
    });
    let output = cmd(&cfg)?;
    output.write(cfg.out.as_deref())?;
    eprintln!("{}", output.summary);
    for f in &output.flagged {
        eprintln!("flagged: {f}");
    }
    Ok(output.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("SPARSELAB_THREADS").ok().and_then(|v| v.parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e @ (Error::Io(_) | Error::Csv(_))) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    };
    ExitCode::from(code as u8)
}

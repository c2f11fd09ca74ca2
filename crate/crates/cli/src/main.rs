use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trajrisk::hrg::RiskMetricSwitches;
use trajrisk::model::FusionMode;
use trajrisk_cli::commands;
use trajrisk_cli::config::{load, Overrides};

/// Heterogeneous trajectory forecasting with risk and scene graphs.
#[derive(Debug, Parser)]
#[command(name = "trajrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// dot, res or hrg-only.
    #[arg(long, global = true)]
    fusion: Option<FusionMode>,
    /// Comma list of nrr, mpr, ttc, mdr, osr (nrr is always on).
    #[arg(long = "risk-metrics", global = true)]
    risk_metrics: Option<RiskMetricSwitches>,
    /// Sampled futures per agent.
    #[arg(long = "h", global = true)]
    h: Option<usize>,
    /// Smooth samples with a Bezier curve anchored at the last observation.
    #[arg(long, global = true)]
    bezier: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trajectory file or directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic trajectory and map files.
    Simulate,
    /// Fit a model; writes the checkpoint and a per-epoch loss log.
    Train,
    /// Sample futures from a checkpoint into a forecast file.
    Predict,
    /// Score a forecast file against the data.
    Evaluate,
    /// Risk edges of one window under the five metric presets.
    RiskMatrix,
    /// Draw the scene graph of one observed frame.
    Plot,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let overrides = Overrides {
        seed: cli.seed,
        fusion: cli.fusion,
        risk_metrics: cli.risk_metrics,
        h: cli.h,
        bezier: cli.bezier,
        out: cli.out,
        data: cli.data,
    };
    let result = load(cli.config.as_deref(), &overrides).and_then(|l| {
        let force = cli.force;
        match cli.command {
            Command::Simulate => commands::simulate(&l, force),
            Command::Train => commands::train(&l, force),
            Command::Predict => commands::predict(&l, force),
            Command::Evaluate => commands::evaluate(&l, force).map(|(report, files)| {
                print!("{}", report.table());
                files
            }),
            Command::RiskMatrix => commands::risk_matrix(&l, force),
            Command::Plot => commands::plot(&l, force),
        }
    });
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(trajrisk_cli::exit_code(&e))
        }
    }
}

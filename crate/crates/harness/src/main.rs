use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use hetnet_harness::commands::{self, Command};
use hetnet_harness::{ExperimentConfig, HarnessError, Preset};

#[derive(Parser)]
#[command(name = "hetnet", version, about = "HetNet antenna-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML config; fields not given fall back to the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts and metrics.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Preset the config is applied over; wins over the file's own preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Sample the deployment and typical UEs.
    Deploy,
    /// Offline mean-field training, interference table and eta.
    TrainOffline,
    /// Localization network.
    TrainDnn,
    /// Online feature-based Q-learning for the target cell.
    TrainOnline,
    /// Proposed policy against the initial configuration and the oracle.
    Evaluate,
    /// Normalized performance across small-cell densities, over seeds.
    SweepEta,
    /// Proposed, online mean-field and single-agent gains, over seeds.
    CompareBaselines,
    /// Best fixed action by exhaustive evaluation.
    Oracle,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Deploy => Command::Deploy,
            Cmd::TrainOffline => Command::TrainOffline,
            Cmd::TrainDnn => Command::TrainDnn,
            Cmd::TrainOnline => Command::TrainOnline,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::SweepEta => Command::SweepEta,
            Cmd::CompareBaselines => Command::CompareBaselines,
            Cmd::Oracle => Command::Oracle,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.preset)?,
        None => ExperimentConfig::preset(cli.preset.unwrap_or(Preset::Desk)),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = Command::from(cli.command);
    let start = Instant::now();
    let result = load(&cli).and_then(|cfg| commands::run(cmd, &cfg, &cli.out));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            // Timing stays out of the artifacts so reruns are byte-identical.
            eprintln!("{} finished in {:.2}s", cmd.name(), start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={:?}", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}

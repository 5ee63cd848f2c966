use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use fugu::cli::{
    cmd_ablate, cmd_evaluate, cmd_report, cmd_simulate, cmd_train, AblateArgs, EvaluateArgs,
    ReportArgs, SimulateArgs, TrainArgs,
};

/// Adaptive bitrate experiments: simulate schemes over network traces, train
/// the transmission-time predictor on the resulting telemetry, and evaluate.
#[derive(Parser)]
#[command(name = "fugu", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a randomized experiment and write per-scheme telemetry archives.
    Simulate(SimulateCli),
    /// Train the transmission-time predictor from telemetry archives.
    Train(TrainCli),
    /// Summarize per-scheme archives into a comparison with confidence intervals.
    Evaluate(EvaluateCli),
    /// Train and score the predictor variants on identical data.
    Ablate(AblateCli),
    /// Render a previously written plot-data file as a table.
    Report(ReportCli),
}

#[derive(Args)]
struct SimulateCli {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated scheme list overriding the config.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Sessions per scheme arm.
    #[arg(long)]
    sessions: Option<usize>,
}

#[derive(Args)]
struct TrainCli {
    #[arg(long)]
    config: PathBuf,
    /// Telemetry archive directories (repeatable).
    #[arg(long = "archive", required = true)]
    archives: Vec<PathBuf>,
    /// Where to write the trained predictor.
    #[arg(long)]
    out_model: PathBuf,
    /// Training window in days.
    #[arg(long)]
    window_days: Option<u32>,
    /// Day (epoch days) the window ends on; defaults to the newest data.
    #[arg(long)]
    as_of_day: Option<i64>,
    /// Previous model to warm-start from.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateCli {
    /// Directory holding one archive subdirectory per scheme.
    #[arg(long)]
    archives: PathBuf,
    /// Where to write comparison.txt and plot_data.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
}

#[derive(Args)]
struct AblateCli {
    #[arg(long)]
    config: PathBuf,
    /// Telemetry archive directories (repeatable).
    #[arg(long = "archive", required = true)]
    archives: Vec<PathBuf>,
    /// Number of training seeds.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Where to write ablation.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCli {
    /// Plot-data file written by evaluate.
    #[arg(long)]
    plot_data: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&SimulateArgs {
            config: a.config,
            seed: a.seed,
            out: a.out,
            schemes: a.schemes,
            sessions: a.sessions,
        }),
        Command::Train(a) => cmd_train(&TrainArgs {
            config: a.config,
            archives: a.archives,
            out_model: a.out_model,
            window_days: a.window_days,
            as_of_day: a.as_of_day,
            warm_start: a.warm_start,
            seed: a.seed,
        }),
        Command::Evaluate(a) => cmd_evaluate(&EvaluateArgs {
            archive_root: a.archives,
            out: a.out,
            seed: a.seed,
            resamples: a.resamples,
        }),
        Command::Ablate(a) => cmd_ablate(&AblateArgs {
            config: a.config,
            archives: a.archives,
            seeds: a.seeds,
            out: a.out,
        }),
        Command::Report(a) => cmd_report(&ReportArgs { plot_data: a.plot_data }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

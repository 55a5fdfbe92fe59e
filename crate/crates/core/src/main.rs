use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgesplit::experiment::{self, OutputFormat, ResultRow};
use edgesplit::scenario::{Scenario, ScenarioFile};
use edgesplit::topology::load_trace;
use edgesplit::Result;

#[derive(Parser)]
#[command(
    version,
    about = "DNN split-point and edge resource allocation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Where to write results; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare MCSA with the baselines at each user's starting AP.
    Static(Common),
    /// Replay a handover trace.
    Mobility {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Re-solve at each hop count in the scenario's `hop_values`.
    HopSweep(Common),
    /// Re-solve at each round count in the scenario's `round_counts`.
    LoadSweep(Common),
    /// Cross-check Li-GD against the grid oracle.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        grid_b: usize,
        #[arg(long, default_value_t = 200)]
        grid_r: usize,
    },
}

fn load(common: &Common) -> Result<Scenario> {
    let mut file = ScenarioFile::from_file(&common.scenario)?;
    if let Some(seed) = common.seed {
        file.seed = seed;
    }
    Scenario::resolve(file)
}

fn write(rows: &[ResultRow], common: &Common) -> Result<()> {
    match &common.output {
        Some(path) => experiment::emit(rows, path, common.format),
        None => experiment::write_rows(rows, std::io::stdout().lock(), common.format),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (rows, common) = match &cli.command {
        Command::Static(c) => (experiment::run_static(&load(c)?)?, c),
        Command::Mobility { common, trace } => {
            let sc = load(common)?;
            let events = load_trace(Path::new(trace))?;
            (experiment::run_mobility(&sc, &events)?, common)
        }
        Command::HopSweep(c) => {
            let sc = load(c)?;
            let hops = sc.experiment.hop_values.clone();
            (experiment::run_hop_sweep(&sc, &hops)?, c)
        }
        Command::LoadSweep(c) => {
            let sc = load(c)?;
            let rounds = sc.experiment.round_counts.clone();
            (experiment::run_load_sweep(&sc, &rounds)?, c)
        }
        Command::OracleCheck {
            common,
            grid_b,
            grid_r,
        } => (
            experiment::oracle_check(&load(common)?, *grid_b, *grid_r)?,
            common,
        ),
    };
    write(&rows, common)
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code())
        }
    }
}

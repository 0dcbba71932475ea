mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status 2: the inputs are unusable. Anything else failing is status 1.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags an error as an input-validation failure.
pub trait InputCtx<T> {
    fn input(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> InputCtx<T> for Result<T, E> {
    fn input(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Input(e.into().context(what())))
    }
}

pub trait RuntimeCtx<T> {
    fn runtime(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> RuntimeCtx<T> for Result<T, E> {
    fn runtime(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into().context(what())))
    }
}

#[derive(Parser, Debug)]
#[command(name = "neuromesh", version, about = "Asynchronous neuromorphic mesh simulator and hardware search")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one model on one architecture and write its PPA report.
    Simulate(SimulateArgs),
    /// Q-learning search over an architecture space for one model.
    Search(SearchArgs),
    /// Search hardware for several candidate networks and pick the best pair.
    Coexplore(CoexploreArgs),
    /// Render the stored reports of a run directory.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Technology table; the built-in 180 nm table when omitted.
    #[arg(long)]
    pub tech: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Kernel worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Spike trace whose layer-0 records are the input.
    #[arg(long, conflicts_with = "gen_trace", required_unless_present = "gen_trace")]
    pub trace: Option<PathBuf>,
    /// Draw random input spikes from --seed instead of reading a trace.
    #[arg(long)]
    pub gen_trace: bool,
    /// Per-(timestep, input neuron) spike probability for --gen-trace.
    #[arg(long, default_value_t = 0.3)]
    pub input_rate: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Replay every layer's spikes from --trace instead of computing them.
    #[arg(long, requires = "trace")]
    pub replay: bool,
    /// Stop the simulation at this time; the report is then marked truncated.
    #[arg(long)]
    pub time_limit_ns: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub bounds: PathBuf,
    #[arg(long)]
    pub reward_spec: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Accuracy of the network, in [0, 1].
    #[arg(long)]
    pub accuracy: f64,
    #[arg(long)]
    pub episodes: usize,
    /// Starting architecture; the smallest one in the bounds when omitted.
    #[arg(long)]
    pub initial_arch: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CoexploreArgs {
    /// Candidate list with accuracy table.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bounds: PathBuf,
    #[arg(long)]
    pub reward_spec: PathBuf,
    /// Total episodes over all candidates.
    #[arg(long)]
    pub budget: usize,
    /// Give episodes a candidate could not use to later candidates.
    #[arg(long)]
    pub reallocate: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let res = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Search(a) => commands::search(a, &argv),
        Command::Coexplore(a) => commands::coexplore(a, &argv),
        Command::Report(a) => report::render(a).map(|text| print!("{text}")),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Input(err) | CliError::Runtime(err)) = &e;
            eprintln!("error: {err:#}");
            ExitCode::from(e.code())
        }
    }
}

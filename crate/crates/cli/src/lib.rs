//! `r2d` command-line front end.
//!
//! Every subcommand accepts `--config <file>` with flat `key=value` lines
//! named after its long flags; flags given on the command line win.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use r2d::ProblemSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    /// A verification run completed but some check failed.
    Failed,
    /// Already reported by clap.
    Exit(i32),
}

impl From<r2d::Error> for CliError {
    fn from(e: r2d::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "r2d", version, about = "Certified unlearning by rewinding gradient descent")]
pub struct Cli {
    /// Flat key=value file of defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train with full-batch gradient descent and save the checkpoint at T-K
    Train(TrainArgs),
    /// Reconstruct the checkpoint K steps back from final weights
    Rewind(RewindArgs),
    /// Unlearn a forget set from a checkpoint and emit a certificate
    Unlearn(UnlearnArgs),
    /// Tabulate h(K), sigma(K) and the distance bound for K = 0..T
    Calibrate(CalibrateArgs),
    /// Run the coupled-trajectory verification sweep
    Verify(VerifyArgs),
    /// Compare unlearning, retraining and rewinding cost
    Bench(BenchArgs),
}

fn parse_problem(s: &str) -> Result<ProblemSpec, String> {
    ProblemSpec::by_name(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// scalar_quadratic, least_squares, logistic, sine_pl or tiny_mlp
    #[arg(long, value_parser = parse_problem)]
    pub problem: ProblemSpec,
    /// Number of samples to generate
    #[arg(long)]
    pub n: Option<usize>,
    /// Input width of the generated features
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset CSV to use instead of generated data
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Declared gradient bound G (default: derived around the initial point)
    #[arg(long)]
    pub grad_bound: Option<f64>,
    /// Declared smoothness L (default: derived around the initial point)
    #[arg(long)]
    pub smoothness: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub eta: f64,
    #[arg(long = "T")]
    pub steps: usize,
    #[arg(long = "K", default_value_t = 0)]
    pub rewind: usize,
    /// Forget-set size the step size must allow for
    #[arg(long, default_value_t = 0)]
    pub m: usize,
    #[arg(long)]
    pub record_stride: Option<usize>,
    /// Include the recorded iterates in the trajectory CSV
    #[arg(long)]
    pub with_theta: bool,
    #[arg(long, default_value = "r2d-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RewindArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Final-weights file written by `train`
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    #[arg(long = "K")]
    pub rewind: usize,
    /// Step size (default: the one stored in the weights file)
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub checkpoint_out: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol_scale: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct UnlearnArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Length of the original training run
    #[arg(long = "T")]
    pub steps: usize,
    /// Rewind depth (default: T minus the checkpoint step)
    #[arg(long = "K")]
    pub rewind: Option<usize>,
    /// Forget this many samples chosen by --seed
    #[arg(long, conflicts_with = "forget")]
    pub m: Option<usize>,
    /// Forget these sample indices
    #[arg(long, value_delimiter = ',')]
    pub forget: Option<Vec<usize>>,
    #[arg(long, conflicts_with = "sigma")]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Use this noise scale instead of calibrating one
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Seed of the Gaussian perturbation (default: --seed)
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, default_value = "r2d-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Derive G and L from this problem's generated data
    #[arg(long, value_parser = parse_problem)]
    pub problem: Option<ProblemSpec>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub eta: f64,
    #[arg(long = "T")]
    pub steps: usize,
    #[arg(long)]
    pub grad_bound: Option<f64>,
    #[arg(long)]
    pub smoothness: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Write the table here instead of stdout
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Tally {
    /// The gradient-norm bound exactly as stated
    Printed,
    /// The gradient-norm bound summed over all T-K learning steps
    Full,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_problem)]
    pub problems: Option<Vec<ProblemSpec>>,
    /// Number of seeds, 0..N
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [50, 200])]
    pub ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5])]
    pub ms: Vec<usize>,
    #[arg(long = "T", value_delimiter = ',', default_values_t = [50, 200])]
    pub steps: Vec<usize>,
    /// Noise draws per utility check; 0 skips the utility checks
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Step size as a fraction of 1/L
    #[arg(long, default_value_t = r2d::certify::DEFAULT_ETA_FRACTION)]
    pub eta_fraction: f64,
    /// Multiply the certified G by this factor (below 1 injects a fault)
    #[arg(long, default_value_t = 1.0)]
    pub g_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Which gradient-norm bound decides the exit code
    #[arg(long, value_enum, default_value_t = Tally::Printed)]
    pub tally: Tally,
    #[arg(long, default_value = "r2d-verify")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "T")]
    pub steps: usize,
    #[arg(long = "K")]
    pub rewind: usize,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    /// Step size (default: half the largest allowed)
    #[arg(long)]
    pub eta: Option<f64>,
    /// Timing repetitions; the median is reported
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// The clap command with repeatable flags, so config values can be overridden.
pub fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match dispatch(argv) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
        Err(CliError::Failed) => {
            eprintln!("verification failed");
            EXIT_FAILURE
        }
        Err(CliError::Exit(code)) => code,
    }
}

fn dispatch(argv: Vec<OsString>) -> Result<(), CliError> {
    let cmd = command();
    let argv = config::merge(&cmd, argv)?;
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.exit_code() {
                0 => Ok(()),
                _ => Err(CliError::Exit(EXIT_USAGE)),
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let echo = resolved(cmd.find_subcommand(name).expect("known subcommand"), sub);
    match cli.command {
        Cmd::Train(a) => commands::train(&a, &echo),
        Cmd::Rewind(a) => commands::rewind(&a),
        Cmd::Unlearn(a) => commands::unlearn(&a, &echo),
        Cmd::Calibrate(a) => commands::calibrate(&a),
        Cmd::Verify(a) => commands::verify(&a, &echo),
        Cmd::Bench(a) => commands::bench(&a, &echo),
    }
}

/// Every argument's resolved value as `(long name, value)`.
fn resolved(cmd: &clap::Command, matches: &clap::ArgMatches) -> Vec<(String, String)> {
    cmd.get_arguments()
        .filter_map(|a| {
            let long = a.get_long()?;
            if long == "help" || long == "config" {
                return None;
            }
            let raw = matches.get_raw(a.get_id().as_str())?;
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((long.to_string(), values.join(",")))
        })
        .collect()
}

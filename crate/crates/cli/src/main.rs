//! `odeformer`: dataset generation, training, inference, gradient checks and
//! runtime benchmarks for the continuous-depth Evoformer.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "odeformer", version, about)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config for the subcommand. Explicit flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic teacher trajectories and a manifest.
    GenData(GenDataArgs),
    /// Train a student field on a generated dataset.
    Train(TrainArgs),
    /// Integrate one input trajectory and write the predicted endpoint.
    Infer(InferArgs),
    /// Check tape, solver and adjoint gradients on tiny shapes.
    Gradcheck(GradcheckArgs),
    /// Time forward integration across residue counts and fit cost models.
    Benchmark(BenchmarkArgs),
}

/// Field dimensions. Unset values fall back to the config file, then to the
/// command's default.
#[derive(Debug, Clone, Default, Args)]
struct FieldArgs {
    #[arg(long)]
    c_m: Option<usize>,
    #[arg(long)]
    c_z: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Blocks between recorded checkpoints.
    #[arg(long, default_value_t = 8)]
    stride: u32,
    /// Sequences per MSA (S).
    #[arg(long, default_value_t = 4)]
    sequences: usize,
    /// Residues per protein (R), at most 350.
    #[arg(long, default_value_t = 16)]
    residues: usize,
    #[command(flatten)]
    field: FieldArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Preliminary,
    Main,
    Both,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
    phase: PhaseArg,
    /// Epoch cap per phase. The preliminary phase never exceeds 20.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Start from a saved parameter file instead of a fresh init.
    #[arg(long, value_name = "PATH")]
    init: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Student head split; channels always follow the dataset.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Rk4,
    Dopri5,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long, value_name = "PATH")]
    params: PathBuf,
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Must be f64.
    #[arg(long, value_enum)]
    precision: Precision,
    /// Corrupt the sigmoid backward rule; the check must then fail.
    #[arg(long)]
    corrupt: bool,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated residue counts.
    #[arg(long, value_delimiter = ',')]
    residues: Option<Vec<usize>>,
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Worker threads for matrix products. Timing is single-threaded unless
    /// this is above 1.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    field: FieldArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::GenData(args) => commands::gen_data(&cli, args),
        Command::Train(args) => commands::train(&cli, args),
        Command::Infer(args) => commands::infer(&cli, args),
        Command::Gradcheck(args) => commands::gradcheck(&cli, args),
        Command::Benchmark(args) => commands::benchmark(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

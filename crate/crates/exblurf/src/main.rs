use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exblurf::cli;
use exblurf::io::read_json;
use exblurf::Error;

/// Sharp radiance fields and camera trajectories from motion-blurred views.
#[derive(Parser)]
#[command(name = "exblurf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config for the command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (1 = bitwise-deterministic sequential mode);
    /// falls back to EXBLURF_THREADS, then to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blurred multi-view dataset.
    Generate(CommonArgs),
    /// Optimize a radiance field and camera trajectories on a dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from the newest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Render sharp images from a checkpoint at a chosen pose source.
    Render(CommonArgs),
    /// Report image metrics and trajectory error against a dataset.
    Eval(CommonArgs),
    /// Measure model and transient memory across sub-frame counts.
    #[command(name = "benchmark-memory")]
    BenchmarkMemory(CommonArgs),
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
            std::env::var("EXBLURF_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Format(_) => 2,
        Error::Io(_) => 3,
        Error::Numeric(_)
        | Error::LogBranchCut { .. }
        | Error::Capacity { .. }
        | Error::MissingContext(_) => 4,
    }
}

fn run(cli: Cli) -> exblurf::Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let threads = resolve_threads(args.threads);
            let mut cfg: exblurf::io::config::GenerateConfig = read_json(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            cli::cmd_generate(&cfg, &args.out, threads)
        }
        Command::Train { common, resume } => {
            let threads = resolve_threads(common.threads);
            let cfg: exblurf::io::config::TrainCliConfig = read_json(&common.config)?;
            cli::cmd_train(&cfg, &common.out, common.seed, threads, resume)
        }
        Command::Render(args) => {
            let threads = resolve_threads(args.threads);
            let cfg: exblurf::io::config::RenderCliConfig = read_json(&args.config)?;
            cli::cmd_render(&cfg, &args.out, threads)
        }
        Command::Eval(args) => {
            let threads = resolve_threads(args.threads);
            let cfg: exblurf::io::config::EvalCliConfig = read_json(&args.config)?;
            cli::cmd_eval(&cfg, &args.out, threads)
        }
        Command::BenchmarkMemory(args) => {
            let threads = resolve_threads(args.threads);
            let cfg: exblurf::io::config::BenchmarkConfig = read_json(&args.config)?;
            if let Some(seed) = args.seed {
                let mut cfg = cfg;
                cfg.seed = seed;
                return cli::cmd_benchmark_memory(&cfg, &args.out, threads);
            }
            cli::cmd_benchmark_memory(&cfg, &args.out, threads)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

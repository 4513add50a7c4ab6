use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use bevpf_cli::commands::{
    cmd_bench, cmd_evaluate, cmd_print_config, cmd_run, cmd_simulate, resolve_out_dir,
};
use bevpf_cli::{CmdError, RunConfig};

#[derive(Parser)]
#[command(
    name = "bevpf",
    about = "Sequential cross-view geo-localization: simulate feature worlds, run the particle filter, evaluate trajectories",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON run configuration (see `bevpf print-config`).
    #[arg(long)]
    config: PathBuf,
    /// Override every RNG seed in the config (S, S+1, ... per section).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Output/artifact directory (default: config `out_dir`, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a feature world, ground-truth trajectory and noisy odometry.
    Simulate(CommonArgs),
    /// Run the particle filter over simulated or ingested observations.
    Run(CommonArgs),
    /// Compare an estimate CSV against ground truth: ATE plus error CDF.
    Evaluate {
        /// Estimated trajectory CSV.
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth trajectory CSV.
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for the CDF CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of CDF thresholds.
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
    /// Measure per-phase filter latencies over at least 200 steps.
    Bench(CommonArgs),
    /// Print the default configuration as JSON.
    PrintConfig,
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CmdError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) -> Result<(), CmdError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CmdError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CmdError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Simulate(args) => {
            init_threads(args.threads)?;
            let cfg = load_config(&args)?;
            let out = resolve_out_dir(args.out.clone(), Some(&cfg));
            cmd_simulate(&cfg, &out)
        }
        Command::Run(args) => {
            init_threads(args.threads)?;
            let cfg = load_config(&args)?;
            let out = resolve_out_dir(args.out.clone(), Some(&cfg));
            cmd_run(&cfg, &out)
        }
        Command::Evaluate { est, gt, out, bins } => {
            if bins == 0 {
                return Err(CmdError::Config("--bins must be >= 1".into()));
            }
            cmd_evaluate(&est, &gt, &resolve_out_dir(out, None), bins)
        }
        Command::Bench(args) => {
            init_threads(args.threads)?;
            let cfg = load_config(&args)?;
            let out = resolve_out_dir(args.out.clone(), Some(&cfg));
            cmd_bench(&cfg, &out)
        }
        Command::PrintConfig => {
            cmd_print_config();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("BEVPF_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

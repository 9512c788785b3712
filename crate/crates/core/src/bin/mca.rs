use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mca_core::harness::{commands, exit_code, ExperimentConfig, Invocation, SolveKind};

#[derive(Parser)]
#[command(name = "mca", version, about = "Markov chain approximation of controlled diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate and save one transition kernel per sampling period.
    BuildKernel,
    /// Solve the discounted or average-cost MDP.
    Solve {
        #[arg(long, value_enum, default_value = "discounted")]
        kind: Kind,
    },
    /// Value-convergence sweep over `h_list`.
    Sweep,
    /// Roll optimal chain policies out on the diffusion.
    Rollout,
    /// Drift checks and invariant-measure sweep.
    Lyapunov,
    /// Synchronous coupling of the diffusion and the chain.
    Coupling,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Discounted,
    Average,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let Some(path) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let result = ExperimentConfig::load(&path).and_then(|loaded| {
        let inv = Invocation::new(loaded, cli.seed, cli.out.as_deref());
        match cli.command {
            Command::BuildKernel => commands::build_kernels(&inv),
            Command::Solve { kind } => commands::solve(
                &inv,
                match kind {
                    Kind::Discounted => SolveKind::Discounted,
                    Kind::Average => SolveKind::Average,
                },
            ),
            Command::Sweep => commands::sweep(&inv),
            Command::Rollout => commands::rollout(&inv),
            Command::Lyapunov => commands::lyapunov(&inv),
            Command::Coupling => commands::coupling(&inv),
        }
    });
    match result {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

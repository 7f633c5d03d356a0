use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prtrade::verify::Fault;
use prtrade_cli::commands;
use prtrade_cli::{exit, CliError};

/// Precision-recall trade-offs of autoregressive models: training,
/// temperature sweeps, artificial-case curves and the oracle suite.
///
/// Exit status: 0 ok, 1 verification failure, 2 invalid configuration,
/// 3 training divergence, 4 I/O or corrupt file.
#[derive(Debug, Parser)]
#[command(name = "prtrade", version)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $PRTRADE_OUT_DIR, else ./prtrade-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the multiplication task.
    Train,
    /// Sample a checkpoint over a temperature grid and write precision/recall.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated temperatures (overrides [eval] t_grid).
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        /// Samples per temperature (overrides [eval] n_samples).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Closed-form PR table of the two-defect construction ([artcase] section).
    Artcase {
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
    },
    /// Run the oracle suite; exits 1 naming any failing property.
    Verify {
        /// Comma-separated criteria 1-8 [default: all].
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Estimate conditional support sizes of a model or of the reference.
    Sparsity {
        /// Model to probe [default: the reference distribution].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Probability mass the support must cover.
        #[arg(long, default_value_t = 0.9)]
        mass: f64,
        /// Number of probe sequences.
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let config = cli.config.as_deref();
    let out = cli.out.as_deref();
    match cli.command {
        Command::Train => {
            let dir = commands::train(commands::TrainArgs { config, out, seed: cli.seed })?;
            println!("wrote {}", dir.display());
        }
        Command::Sweep { checkpoint, t_grid, n } => {
            let path = commands::sweep(commands::SweepArgs {
                checkpoint: &checkpoint,
                config,
                out,
                seed: cli.seed,
                t_grid,
                n_samples: n,
            })?;
            println!("wrote {}", path.display());
        }
        Command::Artcase { t_grid, lambda_grid } => {
            let config = config.ok_or_else(|| CliError::config("artcase needs --config with an [artcase] section"))?;
            let outcome = commands::artcase(commands::ArtCaseArgs { config, out, t_grid, lambda_grid })?;
            println!("wrote {}", outcome.csv.display());
        }
        Command::Verify { only, json, inject_fault } => {
            commands::verify(commands::VerifyArgs {
                criteria: &only,
                fault: inject_fault,
                json: json.as_deref(),
            })?;
        }
        Command::Sparsity { checkpoint, mass, n } => {
            commands::sparsity(commands::SparsityArgs {
                checkpoint: checkpoint.as_deref(),
                config,
                out,
                seed: cli.seed,
                mass,
                n_samples: n,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

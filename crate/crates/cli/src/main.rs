//! `carve`: command-line front end for carve-core.

mod commands;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use carve_core::harness::AblationAxis;
use carve_core::{CarveError, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "carve",
    version,
    about = "Visual-token pruning and merging on a toy prefill"
)]
struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides `input.seed` (carve, gen) or shifts the seed list to start here (sweep, ablate).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Carve one input and write the compressed tensors and reports.
    Carve {
        #[command(flatten)]
        common: Common,
        /// Full `L x d` input sequence; segment lengths come from `input` in the config.
        /// A synthetic input is generated when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a strategy x budget x seed sweep and write sweep.csv and summary.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategies, e.g. `ipgs,attention_only,random:3`.
        #[arg(long)]
        strategies: Option<String>,
        /// Comma-separated visual-token budgets.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary lambda or rho at a fixed budget and write ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Comma-separated grid points.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the numerical rank and singular values of a 2-D tensor file.
    Rank {
        tensor: PathBuf,
        /// Relative singular-value tolerance.
        #[arg(long, default_value_t = carve_core::linalg::DEFAULT_RANK_REL_TOL)]
        tol: f64,
    },
    /// Write a synthetic input sequence.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Axis {
    Lambda,
    Rho,
}

impl From<Axis> for AblationAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Lambda => Self::Lambda,
            Axis::Rho => Self::Rho,
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Numeric => 2,
        ErrorKind::Io => 3,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Numeric => "numeric",
        ErrorKind::Io => "io",
    }
}

fn report(kind: ErrorKind, message: String) -> ExitCode {
    let body = serde_json::json!({
        "error": { "kind": kind_name(kind), "message": message, "exit_code": exit_code(kind) }
    });
    eprintln!("{body}");
    ExitCode::from(exit_code(kind))
}

fn run(cli: Cli) -> carve_core::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CarveError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Carve { common, input, out } => commands::carve(&common, input.as_deref(), &out),
        Command::Sweep {
            common,
            strategies,
            budgets,
            out,
        } => commands::sweep(&common, strategies.as_deref(), budgets, &out),
        Command::Ablate {
            common,
            axis,
            points,
            out,
        } => commands::ablate(&common, axis.map(Into::into), points, &out),
        Command::Rank { tensor, tol } => commands::rank(&tensor, tol),
        Command::Gen { common, out } => commands::gen(&common, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CARVE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(ErrorKind::Config, e.to_string().trim().to_owned()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.kind(), e.to_string()),
    }
}

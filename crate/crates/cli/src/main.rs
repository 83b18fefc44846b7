//! `scmpc`: sample-complexity tables, closed-loop experiments and bound checks.
//!
//! Exit codes: 0 success, 2 invalid input (arguments, config schema,
//! inadmissible pair without `--force`), 3 infeasible scenario program in
//! hard-constraint mode, 1 anything else (I/O, numerical failures).

mod config;
mod simulate;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use scmpc::complexity::{admissibility_bound, min_sample_size};
use scmpc::removal::{GreedyMetric, RemovalAlgorithm};
use scmpc::simulator::{bound_validation_experiment, BoundValidation};

#[derive(Debug)]
pub enum CliError {
    Schema(String),
    Infeasible { step: Option<usize>, message: String },
    Io(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Infeasible { .. } => 3,
            CliError::Io(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "invalid input: {m}"),
            CliError::Infeasible { step: Some(t), message } => write!(f, "infeasible at step {t}: {message}"),
            CliError::Infeasible { step: None, message } => write!(f, "infeasible: {message}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<scmpc::Error> for CliError {
    fn from(e: scmpc::Error) -> Self {
        use scmpc::Error as E;
        match e {
            E::Infeasible { time } => CliError::Infeasible {
                step: time,
                message: e.to_string(),
            },
            E::Config(_) | E::Usage(_) | E::Dimension { .. } | E::Inadmissible { .. } | E::CombinatorialLimit { .. } => {
                CliError::Schema(e.to_string())
            }
            E::Quadrature { .. } | E::Numerical(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "scmpc", version, about = "Scenario-based stochastic MPC with constraint removal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest admissible sample size per number of removals.
    Complexity(ComplexityArgs),
    /// Run a closed-loop experiment from a JSON config.
    Simulate(simulate::SimulateArgs),
    /// Compare the empirical mean violation of a one-step toy problem with the bound.
    ValidateBound(ValidateArgs),
}

#[derive(clap::Args)]
struct ComplexityArgs {
    /// Support-rank bound of the constraint.
    #[arg(long)]
    rho1: usize,
    /// Admissible expected violation probability, in (0, 0.5).
    #[arg(long)]
    eps: f64,
    /// Removal counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    removals: Vec<usize>,
    /// Emit `removals,samples,bound` rows for every K up to this value instead of the table.
    #[arg(long, value_name = "K_MAX")]
    sweep: Option<usize>,
    /// Write the sweep CSV here instead of stdout.
    #[arg(long, requires = "sweep")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RemovalArg {
    Greedy,
    GreedyFirstStage,
    Optimal,
    Marginal,
}

impl From<RemovalArg> for RemovalAlgorithm {
    fn from(r: RemovalArg) -> Self {
        match r {
            RemovalArg::Greedy => RemovalAlgorithm::Greedy(GreedyMetric::TotalCost),
            RemovalArg::GreedyFirstStage => RemovalAlgorithm::Greedy(GreedyMetric::FirstStageCost),
            RemovalArg::Optimal => RemovalAlgorithm::Optimal,
            RemovalArg::Marginal => RemovalAlgorithm::Marginal,
        }
    }
}

#[derive(clap::Args)]
struct ValidateArgs {
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    removals: usize,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "greedy")]
    removal: RemovalArg,
}

fn complexity(args: &ComplexityArgs) -> Result<(), CliError> {
    if !(args.eps > 0.0 && args.eps < 0.5) {
        return Err(CliError::Schema(format!("--eps must lie in (0, 0.5), got {}", args.eps)));
    }
    if args.rho1 == 0 {
        return Err(CliError::Schema("--rho1 must be at least 1".into()));
    }
    let stdout = std::io::stdout();
    if let Some(k_max) = args.sweep {
        let mut out: Box<dyn Write> = match &args.output {
            Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
            None => Box::new(stdout.lock()),
        };
        writeln!(out, "removals,samples,bound")?;
        for &r in &args.removals {
            for k in (r + args.rho1)..=k_max {
                let b: f64 = admissibility_bound(k, r, args.rho1)?;
                writeln!(out, "{r},{k},{b:.10}")?;
            }
        }
        return Ok(());
    }
    let mut out = stdout.lock();
    writeln!(out, "R\tK\tbound")?;
    for &r in &args.removals {
        let k = min_sample_size(r, args.rho1, args.eps)?;
        let b: f64 = admissibility_bound(k, r, args.rho1)?;
        writeln!(out, "{r}\t{k}\t{b:.6}")?;
    }
    Ok(())
}

fn validate_bound(args: &ValidateArgs) -> Result<(), CliError> {
    let mut cfg = BoundValidation::new(args.samples, args.removals, args.draws, args.seed);
    cfg.removal = args.removal.into();
    info!("bound validation with K={}, R={}, {} draws", cfg.samples, cfg.removals, cfg.draws);
    let r = bound_validation_experiment::<f64>(&cfg)?;
    let report = serde_json::json!({
        "samples": cfg.samples,
        "removals": cfg.removals,
        "draws": r.draws,
        "seed": cfg.seed,
        "mean_violation": r.mean,
        "standard_error": r.standard_error,
        "bound": r.bound,
        "within_bound": r.mean <= r.bound + 3.0 * r.standard_error,
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SCMPC_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Complexity(a) => complexity(a),
        Command::Simulate(a) => simulate::run(a),
        Command::ValidateBound(a) => validate_bound(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scmpc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

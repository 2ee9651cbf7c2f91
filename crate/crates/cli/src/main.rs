use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Exit status when a checked guarantee or invariant fails.
const EXIT_VIOLATION: u8 = 2;
/// Exit status for malformed or infeasible input.
const EXIT_INPUT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fbcrs", version, about = "Forward-backward contention resolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Root seed of the Monte Carlo streams.
    #[arg(long, env = "FBCRS_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanArg {
    Lp,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KnapsackPlanArg {
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FillArg {
    /// Acceptance tables from exact propagation.
    Exact,
    /// Acceptance tables estimated from simulated histories.
    Replicas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    /// LPOPT on uniform instances against the closed-form guarantee.
    Lpopt,
    /// Gap between the dual certificate and LPOPT.
    DualGap,
    /// Smallest pair mean of the knapsack scheme on uniform instances.
    KnapsackMin,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the headline constants, each computed from its closed form.
    Constants {
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Solve the selection LP of a single-unit instance (JSON report).
    LpSolve {
        #[arg(long)]
        instance: PathBuf,
        /// Also report the dual objective and the dual feasibility residual.
        #[arg(long)]
        dual: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Build and verify the explicit dual certificate on a uniform instance (JSON report).
    DualCertificate {
        /// Number of elements; must be odd.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo run of the single-unit scheme (CSV per element).
    SimulateSingleUnit {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = PlanArg::Lp)]
        plan: PlanArg,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Exact or Monte Carlo run of the knapsack scheme (CSV per element).
    SimulateKnapsack {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = KnapsackPlanArg::Closed)]
        plan: KnapsackPlanArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        /// Monte Carlo trials (mc mode only; default 100000).
        #[arg(long)]
        trials: Option<u64>,
        /// Where the Monte Carlo executor gets its acceptance tables.
        #[arg(long, value_enum, default_value_t = FillArg::Exact)]
        fill: FillArg,
        /// Simulated histories for `--fill replicas`.
        #[arg(long)]
        replicas: Option<usize>,
        /// Check the induction inequalities before every step (exact mode).
        #[arg(long)]
        monitor: bool,
        /// Write invariant violations as CSV to this path.
        #[arg(long)]
        violations: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Ration a unit of supply through the contention resolution reduction (CSV per agent).
    Ration {
        #[arg(long)]
        instance: PathBuf,
        /// `auto` for the largest common feasible target, or a JSON file with one target per agent.
        #[arg(long, default_value = "auto")]
        beta: String,
        #[arg(long, value_enum, default_value_t = PlanArg::Lp)]
        plan: PlanArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        /// Monte Carlo trials (mc mode only; default 100000).
        #[arg(long)]
        trials: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep uniform instances over a grid of sizes and masses (CSV).
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated element counts.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Comma-separated total masses.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        rho: Vec<f64>,
        /// Item size for `knapsack-min`.
        #[arg(long, default_value_t = 0.25)]
        size: f64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Bad flags or an input no algorithm can serve.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::error::Error for InputError {}

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<InputError>()
            || cause.is::<fbcrs::InstanceError>()
            || cause.downcast_ref::<fbcrs::Error>().is_some_and(fbcrs::Error::is_infeasible_input)
            || cause.downcast_ref::<fbcrs::RationingError>().is_some_and(fbcrs::RationingError::is_infeasible_input)
            || cause
                .downcast_ref::<fbcrs::LpError>()
                .is_some_and(|e| matches!(e, fbcrs::LpError::Instance(_) | fbcrs::LpError::EvenSize { .. }))
            || cause.downcast_ref::<fbcrs::KnapsackError>().is_some_and(|e| matches!(e, fbcrs::KnapsackError::MassTooLarge { .. }))
            || cause
                .downcast_ref::<fbcrs::SingleUnitError>()
                .is_some_and(|e| matches!(e, fbcrs::SingleUnitError::InfeasiblePlan { .. }))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(violations) => {
            eprintln!("fbcrs: {violations} guarantee or invariant violation(s) detected");
            ExitCode::from(EXIT_VIOLATION)
        }
        Err(err) => {
            eprintln!("fbcrs: {err:#}");
            if is_input_error(&err) {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

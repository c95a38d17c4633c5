//! Command-line interface: build and validate models, estimate
//! counterfactual effects, run both attribution layers, compare against the
//! exact oracle, replay recorded trajectories, and sweep parameters.

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cfx_core::CfxError;

#[derive(Parser)]
#[command(
    name = "cfx",
    version,
    about = "Counterfactual effect decomposition for multi-agent MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for sample fan-out (affects wall time only, never
    /// results).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Full decomposition: effects, agent attribution and state attribution.
    Decompose(RunArgs),
    /// Effect estimates and the decomposition identity only.
    Effects(RunArgs),
    /// Exact small-model oracle values (with a Monte Carlo comparison).
    Oracle(RunArgs),
    /// One decomposition per grid point, as CSV.
    Sweep(SweepArgs),
    /// Parse, audit and replay a recorded trajectory fixture.
    Replay {
        /// Fixture path.
        fixture: std::path::PathBuf,
        /// Also replay through the compiled environment model.
        #[arg(long)]
        through_model: bool,
    },
    /// Structural and observational validation of a model.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Environment preset: "gridworld" or "sepsis".
    #[arg(long, conflicts_with = "model")]
    env: Option<String>,
    /// Model document (kind "scm" or "mmdp").
    #[arg(long)]
    model: Option<std::path::PathBuf>,
    /// Gridworld layout document (defaults to the built-in preset).
    #[arg(long)]
    layout: Option<std::path::PathBuf>,
    /// Sepsis trust level.
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    /// Sepsis rounds.
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    /// Random total orderings for state domains (robustness runs).
    #[arg(long)]
    ordering_seed: Option<u64>,
}

#[derive(Args, Clone)]
struct QueryArgs {
    /// Named preset query: gridworld "pickup" or "planner"; sepsis "ai" or
    /// "clinician".
    #[arg(long)]
    query: Option<String>,
    /// Intervened agent (1-based).
    #[arg(long)]
    agent: Option<usize>,
    /// Intervention timestep.
    #[arg(long)]
    time: Option<usize>,
    /// Alternative action label.
    #[arg(long)]
    action: Option<String>,
    /// Response: "return:g=0.99[,from=A,to=B]" or "state:S20".
    #[arg(long)]
    response: Option<String>,
    /// Factual trajectory document (kind "trajectory").
    #[arg(long)]
    tau: Option<std::path::PathBuf>,
    /// Sample the factual trajectory from the prior with this seed.
    #[arg(long)]
    tau_seed: Option<u64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ShapleyArg {
    Exact,
    Sampled,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Base seed; falls back to the CFX_SEED environment variable, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Posterior samples for effect estimates.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Outer draws of the nested variance estimator.
    #[arg(long, default_value_t = 100)]
    h1: usize,
    /// Inner draws per outer draw.
    #[arg(long, default_value_t = 20)]
    h2: usize,
    #[arg(long, value_enum, default_value_t = ShapleyArg::Exact)]
    shapley: ShapleyArg,
    /// Permutation budget for sampled Shapley.
    #[arg(long, default_value_t = 200)]
    permutations: usize,
    /// Consecutive state variables per attribution group.
    #[arg(long, default_value_t = 1)]
    icc_group: usize,
    /// Binary-search localization for single-spike profiles.
    #[arg(long)]
    icc_sparse: bool,
    /// Also compute exact oracle values.
    #[arg(long)]
    oracle: bool,
    /// Oracle layer-support cap.
    #[arg(long, default_value_t = cfx_core::oracle::DEFAULT_CAP)]
    oracle_cap: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Write plot-ready CSV series into this directory.
    #[arg(long)]
    csv_dir: Option<std::path::PathBuf>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Grid specification "name=v1,v2,..."; repeat for a cartesian product.
    /// Supported names: mu, ordering_seed.
    #[arg(long, required = true)]
    grid: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args, Clone)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Prior samples for the observational chi-square check.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.or_else(|| {
        std::env::var("CFX_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

fn exit_code_for(err: &CfxError) -> u8 {
    match err {
        CfxError::Config(_) | CfxError::Parse(_) => 2,
        CfxError::Inconsistent(_) => 3,
        CfxError::OracleInfeasible { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .expect("thread pool");
    let result = pool.install(|| match cli.command {
        Command::Decompose(args) => commands::decompose(args, true),
        Command::Effects(args) => commands::decompose(args, false),
        Command::Oracle(args) => commands::oracle(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Replay {
            fixture,
            through_model,
        } => commands::replay(&fixture, through_model),
        Command::Validate(args) => commands::validate(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

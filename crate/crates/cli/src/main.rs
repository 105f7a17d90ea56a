//! `sparse-ddp` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 solve did not
//! converge, 3 derivative check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sparse_ddp::analysis::{check_derivatives, io, run_sweep, timing_report, SparsityReport, SweepGrid, SweepSpec, TrendStat};
use sparse_ddp::config::ProblemConfig;
use sparse_ddp::costs::CostBreakdown;
use sparse_ddp::regularizers::LossKind;
use sparse_ddp::solver::{ExitReason, SolveResult};
use sparse_ddp::Error;

const OUT_ENV: &str = "SPARSE_DDP_OUT";

#[derive(Parser)]
#[command(name = "sparse-ddp", version, about = "DDP trajectory optimization with sparse control costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides SPARSE_DDP_OUT and `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridOverrides {
    /// Comma-separated loss kinds.
    #[arg(long, value_delimiter = ',')]
    losses: Option<Vec<LossKind>>,
    /// Comma-separated β values.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write its trajectory and reports.
    Solve(Common),
    /// Solve every (loss, β, λ) cell of a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridOverrides,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Iteration and wall-time statistics per loss at β = 1.
    Timing {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        losses: Option<Vec<LossKind>>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Compare analytic derivatives against finite differences.
    Check(Common),
}

enum Failure {
    Config(Error),
    NotConverged,
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e)
    }
}

fn output_dir(common: &Common, config: &ProblemConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| config.output.dir.clone())
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    system: &'a str,
    loss: LossKind,
    beta: f64,
    lambda: f64,
    knots: usize,
    converged: bool,
    exit_reason: ExitReason,
    iterations: usize,
    cost: CostBreakdown,
    gradient_norm: f64,
    final_mu: f64,
    wall_ms: f64,
    cost_trace: &'a [f64],
    iteration_ms: &'a [f64],
}

fn summarize<'a>(config: &'a ProblemConfig, system: &'a str, r: &'a SolveResult) -> SolveSummary<'a> {
    SolveSummary {
        system,
        loss: config.cost.loss,
        beta: config.cost.beta,
        lambda: config.cost.lambda,
        knots: config.system.knots,
        converged: r.converged,
        exit_reason: r.exit_reason,
        iterations: r.iterations,
        cost: r.cost,
        gradient_norm: r.gradient_norm,
        final_mu: r.final_mu,
        wall_ms: r.wall_ms(),
        cost_trace: &r.cost_trace,
        iteration_ms: &r.iteration_ms,
    }
}

fn solve(common: &Common) -> Result<(), Failure> {
    let config = ProblemConfig::load(&common.config)?;
    let problem = config.build_problem()?;
    let result = problem.solve(&config.solver).map_err(|e| {
        eprintln!("solve failed: {e}");
        Failure::NotConverged
    })?;
    let report = SparsityReport::for_solve(&problem, &result);
    let dir = output_dir(common, &config);
    let out = &config.output;
    io::write_atomic(&dir.join(&out.trajectory), io::trajectory_csv(&result.trajectory).as_bytes())?;
    io::write_json(&dir.join(&out.sparsity), &report)?;
    io::write_json(&dir.join(&out.result), &summarize(&config, problem.model.name(), &result))?;

    println!(
        "{} {} β={} λ={}: {} after {} iterations ({:?})",
        problem.model.name(),
        config.cost.loss,
        config.cost.beta,
        config.cost.lambda,
        if result.converged { "converged" } else { "NOT converged" },
        result.iterations,
        result.exit_reason,
    );
    println!(
        "final task cost {:.6e}, zero controls {}/{} ({:.3}), saturated {}, total variation {:.6e}",
        report.final_task_cost,
        report.zero_count,
        report.total_count,
        report.zero_fraction,
        report.bound_saturation_count,
        report.total_variation
    );
    println!("wrote {}", dir.display());
    if result.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn pick<T: Clone>(over: &Option<Vec<T>>, from: Option<Vec<T>>, field: &str) -> Result<Vec<T>, Error> {
    over.clone()
        .or(from)
        .ok_or_else(|| Error::config(field, "not given in the config or on the command line"))
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    system: &'a str,
    cells: usize,
    converged: usize,
    failed: usize,
    trends: &'a [TrendStat],
    grid: &'a SweepGrid,
}

fn sweep(common: &Common, grid: &GridOverrides, jobs: usize) -> Result<(), Failure> {
    let config = ProblemConfig::load(&common.config)?;
    let problem = config.build_problem()?;
    let base = config.sweep.clone();
    let spec = SweepSpec {
        losses: pick(&grid.losses, base.as_ref().map(|s| s.losses.clone()), "sweep.losses")?,
        betas: pick(&grid.betas, base.as_ref().map(|s| s.betas.clone()), "sweep.betas")?,
        lambdas: pick(&grid.lambdas, base.as_ref().map(|s| s.lambdas.clone()), "sweep.lambdas")?,
    };
    spec.validate().map_err(|e| match e {
        Error::EmptyGrid(axis) => Error::config(format!("sweep.{axis}"), "must not be empty"),
        other => Error::config("sweep", other.to_string()),
    })?;
    if jobs == 0 {
        return Err(Error::config("--jobs", "must be at least 1").into());
    }
    let result = run_sweep(&problem, &spec, &config.solver, jobs)?;
    let dir = output_dir(common, &config);
    io::write_atomic(&dir.join(&config.output.sweep_csv), io::sweep_csv(&result, true).as_bytes())?;
    let converged = result.cells.iter().filter(|c| c.converged).count();
    let failed = result.cells.iter().filter(|c| c.report.is_none()).count();
    io::write_json(
        &dir.join(&config.output.sweep_summary),
        &SweepSummary {
            system: problem.model.name(),
            cells: result.cells.len(),
            converged,
            failed,
            trends: &result.trends,
            grid: &result,
        },
    )?;
    println!("{} cells, {converged} converged, {failed} failed", result.cells.len());
    for t in &result.trends {
        println!(
            "{:<12} β={:<10} zero_count non-decreasing {}/{}, task cost non-decreasing {}/{}",
            t.loss.to_string(),
            t.beta,
            t.zero_count_nondecreasing,
            t.pairs,
            t.task_cost_nondecreasing,
            t.pairs
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn timing(common: &Common, losses: &Option<Vec<LossKind>>, lambdas: &Option<Vec<f64>>) -> Result<(), Failure> {
    let config = ProblemConfig::load(&common.config)?;
    let problem = config.build_problem()?;
    let losses = pick(losses, config.timing.as_ref().map(|t| t.losses.clone()), "timing.losses")?;
    let lambdas = pick(lambdas, config.timing.as_ref().map(|t| t.lambdas.clone()), "timing.lambdas")?;
    let report = timing_report(&problem, &losses, &lambdas, &config.solver).map_err(|e| match e {
        Error::EmptyGrid(axis) => Error::config(format!("timing.{axis}"), "must not be empty"),
        other => other,
    })?;
    let dir = output_dir(common, &config);
    io::write_json(&dir.join(&config.output.timing), &report)?;
    for s in &report.stats {
        println!(
            "{:<12} runs {} converged {} iterations mean {:.1} median {:.1} wall ms mean {:.1} median {:.1}",
            s.loss.to_string(),
            s.runs,
            s.converged,
            s.mean_iterations,
            s.median_iterations,
            s.mean_wall_ms,
            s.median_wall_ms
        );
    }
    let order: Vec<String> = report.ordering.iter().map(|k| k.to_string()).collect();
    println!("fastest to slowest: {}", order.join(" < "));
    println!("wrote {}", dir.display());
    Ok(())
}

fn check(common: &Common) -> Result<(), Failure> {
    let config = ProblemConfig::load(&common.config)?;
    let problem = config.build_problem()?;
    let report = check_derivatives(&problem)?;
    println!("{report}");
    let dir = output_dir(common, &config);
    io::write_json(&dir.join(&config.output.check), &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve(common) => solve(common),
        Command::Sweep { common, grid, jobs } => sweep(common, grid, *jobs),
        Command::Timing { common, losses, lambdas } => timing(common, losses, lambdas),
        Command::Check(common) => check(common),
    }
}

fn config_path(cli: &Cli) -> &Path {
    match &cli.command {
        Command::Solve(c) | Command::Check(c) => &c.config,
        Command::Sweep { common, .. } | Command::Timing { common, .. } => &common.config,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error in {}: {e}", config_path(&cli).display());
            ExitCode::from(1)
        }
        Err(Failure::NotConverged) => ExitCode::from(2),
        Err(Failure::CheckFailed) => ExitCode::from(3),
    }
}

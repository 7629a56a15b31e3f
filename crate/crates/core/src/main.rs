//! Command-line front end: builds markets from JSON configuration files,
//! solves single primal/dual instances, runs the stability and instability
//! experiments, and writes deterministic CSV/JSON result files.
//!
//! Exit codes: 0 success (for `stability`, additionally: every convergence
//! clause passed), 1 experiment ran but a clause failed, 2 configuration
//! error, 3 solver error.  Log verbosity is controlled by `RUST_LOG`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dualmax::config::{ConfigError, ExperimentConfig};
use dualmax::market::{
    arbitrage_free_price_set, check_nflvr, EndowmentBundle, FiniteMarket,
    MartingaleMeasurePolytope, NflvrCertificate,
};
use dualmax::optimizer::{
    marginal_price_set, solve_dual_with, solve_primal_with, superdifferential_u_with,
};
use dualmax::report;
use dualmax::stability::{
    counterexample_experiment, run_stability_experiment, CounterexampleSetup, StabilityError,
    StabilityThresholds,
};

/// Convex-duality engine for expected-utility maximization with random
/// endowment on finite markets, with a stability experiment harness.
#[derive(Parser)]
#[command(name = "dualmax", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for result files (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed recorded in summaries for reproducibility bookkeeping.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the largest family index of the stability ladder (for
    /// `counterexample`: the largest fixed-level spike index).
    #[arg(long = "n-max", global = true)]
    n_max: Option<usize>,
    /// Override the value and Ky–Fan verdict tolerances.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one primal/dual pair and write the solution tables.
    Solve,
    /// Run the stability experiment along the configured family.
    Stability,
    /// Write the arbitrage-free price set of the endowment bundle (and the
    /// marginal price set when a solve point is configured).
    Prices,
    /// Run the instability experiment (fixed-level and diagonal runs).
    Counterexample,
    /// Check that the configuration parses, builds, and validates.
    Validate,
}

/// Everything that can stop a command, tagged with its exit code.
enum CommandError {
    /// Configuration loading/validation failure (exit 2).
    Config(ConfigError),
    /// Computation failure (exit 3).
    Solver(String),
}

impl CommandError {
    fn exit_code(&self) -> u8 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Config(e) => write!(f, "configuration: {e}"),
            CommandError::Solver(e) => write!(f, "solver: {e}"),
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e)
    }
}

impl From<StabilityError> for CommandError {
    fn from(e: StabilityError) -> Self {
        match e {
            // A family the validator rejects is a configuration problem.
            StabilityError::InvalidFamily { .. } => {
                CommandError::Config(ConfigError::Invalid {
                    reason: e.to_string(),
                })
            }
            other => CommandError::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Solver(format!("write failed: {e}"))
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve => cmd_solve(&cli),
        Command::Stability => cmd_stability(&cli),
        Command::Prices => cmd_prices(&cli),
        Command::Counterexample => cmd_counterexample(&cli),
        Command::Validate => cmd_validate(&cli),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

/// Loads the configuration named by `--config`.
fn load_config(cli: &Cli) -> Result<ExperimentConfig, CommandError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CommandError::Config(ConfigError::Invalid {
            reason: "missing --config <path>".into(),
        })
    })?;
    Ok(ExperimentConfig::load(path)?)
}

/// Builds market + bundle and cross-checks the configured dimensions, so
/// mismatches surface as configuration errors instead of panics.
fn build_market_and_bundle(
    config: &ExperimentConfig,
) -> Result<(FiniteMarket, EndowmentBundle), CommandError> {
    let market = config.build_market()?;
    let bundle = config.build_bundle(&market)?;
    let dim = bundle.dim();
    let check = |what: &str, len: usize| -> Result<(), CommandError> {
        if len != dim {
            return Err(CommandError::Config(ConfigError::Invalid {
                reason: format!("{what} has dimension {len}, bundle has {dim}"),
            }));
        }
        Ok(())
    };
    if let Some(solve) = &config.solve {
        check("solve.q", solve.q.len())?;
        if let Some(r) = &solve.r {
            check("solve.r", r.len())?;
        }
    }
    if let Some(family) = &config.family {
        check("family.primal_limit.q", family.primal_limit.q.len())?;
        check("family.dual_limit.r", family.dual_limit.r.len())?;
    }
    Ok((market, bundle))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn write(path: &Path, contents: &str) -> Result<(), CommandError> {
    report::write_atomic(path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_solve(cli: &Cli) -> Result<ExitCode, CommandError> {
    let config = load_config(cli)?;
    let (market, bundle) = build_market_and_bundle(&config)?;
    let utility = config.build_utility()?;
    let solve = config.solve.as_ref().ok_or_else(|| {
        CommandError::Config(ConfigError::Invalid {
            reason: "the solve command needs a `solve` section".into(),
        })
    })?;

    let polytope =
        MartingaleMeasurePolytope::compute(&market).map_err(|e| CommandError::Solver(e.to_string()))?;
    let measure = market.reference_measure();
    let primal = solve_primal_with(&polytope, &measure, &utility, &bundle, solve.x, &solve.q)
        .map_err(|e| CommandError::Solver(e.to_string()))?;
    let y = solve.y.unwrap_or(primal.marginal_value);
    let r: Vec<f64> = solve
        .r
        .clone()
        .unwrap_or_else(|| primal.marginal_bundle_value.iter().copied().collect());
    let dual = solve_dual_with(&polytope, &measure, &utility, &bundle, y, &r)
        .map_err(|e| CommandError::Solver(e.to_string()))?;
    let superdiff =
        superdifferential_u_with(&polytope, &measure, &utility, &bundle, solve.x, &solve.q)
            .map_err(|e| CommandError::Solver(e.to_string()))?;
    let prices = marginal_price_set(&superdiff);

    let dir = out_dir(cli);
    let seed = cli.seed.or(config.seed);
    write(&dir.join("primal.csv"), &report::primal_csv(&primal))?;
    write(&dir.join("dual.csv"), &report::dual_csv(&dual))?;
    write(
        &dir.join("solve_summary.json"),
        &report::solve_summary(&primal, &dual, &prices, seed),
    )?;
    println!(
        "u = {}  v = {}  du/dx = {}  dv/dy = {}  price points = {}",
        report::format_sig(primal.value),
        report::format_sig(dual.value),
        report::format_sig(primal.marginal_value),
        report::format_sig(dual.capital_marginal),
        prices.points.len(),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_stability(cli: &Cli) -> Result<ExitCode, CommandError> {
    let config = load_config(cli)?;
    let (market, bundle) = build_market_and_bundle(&config)?;
    let family = config.build_family()?;
    let n_max = cli.n_max.or(config.n_max).unwrap_or(1000);
    let mut thresholds: StabilityThresholds = config.thresholds();
    if let Some(tol) = cli.tol {
        thresholds.value = tol;
        thresholds.kyfan = tol;
    }

    let report_data = run_stability_experiment(&market, &bundle, &family, n_max, &thresholds)?;

    let dir = out_dir(cli);
    let seed = cli.seed.or(config.seed);
    write(&dir.join("stability.csv"), &report::stability_csv(&report_data))?;
    write(
        &dir.join("stability_summary.json"),
        &report::stability_summary(&report_data, seed),
    )?;

    let v = &report_data.verdicts;
    let flag = |pass: bool| if pass { "PASS" } else { "FAIL" };
    println!(
        "values       {} (gap {}, derivatives {}, tolerance {})",
        flag(v.values_pass),
        report::format_sig(v.value_gap),
        report::format_sig(v.derivative_gap),
        report::format_sig(thresholds.value),
    );
    println!(
        "kyfan        {} (gap {}, tolerance {})",
        flag(v.kyfan_pass),
        report::format_sig(v.kyfan_gap),
        report::format_sig(thresholds.kyfan),
    );
    let onsets: Vec<String> = v
        .hausdorff_onsets
        .iter()
        .map(|(eps, onset)| match onset {
            Some(n) => format!("{eps:e}:{n}"),
            None => format!("{eps:e}:never"),
        })
        .collect();
    println!("hausdorff    {} (onsets {})", flag(v.hausdorff_pass), onsets.join(" "));
    println!(
        "semicontinuity {} (liminf defect {}, limsup defect {})",
        flag(v.semicontinuity_pass),
        report::format_sig(v.liminf_defect),
        report::format_sig(v.limsup_defect),
    );
    if v.all_pass() {
        println!("all clauses PASS at n_max = {n_max}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("some clauses FAIL at n_max = {n_max}");
        Ok(ExitCode::from(1))
    }
}

fn cmd_prices(cli: &Cli) -> Result<ExitCode, CommandError> {
    let config = load_config(cli)?;
    let (market, bundle) = build_market_and_bundle(&config)?;
    let polytope =
        MartingaleMeasurePolytope::compute(&market).map_err(|e| CommandError::Solver(e.to_string()))?;
    let price_set = arbitrage_free_price_set(&polytope, &bundle)
        .map_err(|e| CommandError::Solver(e.to_string()))?;

    let dir = out_dir(cli);
    write(
        &dir.join("prices.csv"),
        &report::price_points_csv(price_set.points()),
    )?;
    println!(
        "arbitrage-free price set: {} extreme points in dimension {}",
        price_set.points().len(),
        bundle.dim(),
    );

    if let Some(solve) = &config.solve {
        let utility = config.build_utility()?;
        let measure = market.reference_measure();
        let superdiff =
            superdifferential_u_with(&polytope, &measure, &utility, &bundle, solve.x, &solve.q)
                .map_err(|e| CommandError::Solver(e.to_string()))?;
        let marginal = marginal_price_set(&superdiff);
        write(
            &dir.join("marginal_prices.csv"),
            &report::price_points_csv(&marginal.points),
        )?;
        println!(
            "marginal price set at (x, q) = ({}, {:?}): {} points, diameter {}",
            solve.x,
            solve.q,
            marginal.points.len(),
            report::format_sig(marginal.diameter()),
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_counterexample(cli: &Cli) -> Result<ExitCode, CommandError> {
    let config = load_config(cli)?;
    let mut setup: CounterexampleSetup = match &config.counterexample {
        Some(section) => section.build()?,
        None => CounterexampleSetup::default(),
    };
    if let Some(n_max) = cli.n_max {
        setup.fixed_n_max = n_max;
    }

    let report_data = counterexample_experiment(&setup)?;

    let dir = out_dir(cli);
    let seed = cli.seed.or(config.seed);
    write(
        &dir.join("counterexample_fixed.csv"),
        &report::counterexample_csv(&report_data.fixed_level),
    )?;
    write(
        &dir.join("counterexample_diagonal.csv"),
        &report::counterexample_csv(&report_data.diagonal),
    )?;
    write(
        &dir.join("counterexample_summary.json"),
        &report::counterexample_summary(&report_data.fixed_level, &report_data.diagonal, seed),
    )?;

    if let Some(last) = report_data.fixed_level.last() {
        println!(
            "fixed level {}: final n = {}, tv = {}, kyfan = {}",
            last.level,
            last.n,
            report::format_sig(last.tv),
            report::format_sig(last.kyfan),
        );
    }
    if let Some(last) = report_data.diagonal.last() {
        println!(
            "diagonal level {}: n = {}, tv = {}, kyfan = {}",
            last.level,
            last.n,
            report::format_sig(last.tv),
            report::format_sig(last.kyfan),
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(cli: &Cli) -> Result<ExitCode, CommandError> {
    let config = load_config(cli)?;
    let (market, bundle) = build_market_and_bundle(&config)?;
    let nflvr = check_nflvr(&market);
    if !nflvr.holds {
        let detail = match &nflvr.certificate {
            NflvrCertificate::Arbitrage(strategy) => format!(
                "market admits arbitrage (terminal gain up to {:.3e})",
                strategy
                    .terminal_gain
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
            ),
            NflvrCertificate::EquivalentMeasure(_) => unreachable!(),
        };
        return Err(CommandError::Config(ConfigError::Invalid { reason: detail }));
    }
    let mut parts = vec![format!(
        "arbitrage-free market with {} atoms, bundle dimension {}",
        market.num_atoms(),
        bundle.dim(),
    )];
    if config.utility.is_some() {
        config.build_utility()?;
        parts.push("utility".into());
    }
    if config.family.is_some() {
        let family = config.build_family()?;
        let measure = market.reference_measure();
        family
            .validate(&measure, &[1, 2, 5, 10, 100], &[0.25, 0.5, 1.0, 2.0, 4.0])
            .map_err(|e| {
                CommandError::Config(ConfigError::Invalid {
                    reason: e.to_string(),
                })
            })?;
        parts.push("family".into());
    }
    if let Some(section) = &config.counterexample {
        section.build()?;
        parts.push("counterexample".into());
    }
    println!("configuration valid: {}", parts.join(", "));
    Ok(ExitCode::SUCCESS)
}

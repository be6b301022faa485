//! Command-line front end: simulate scenarios, tabulate analytic gains and
//! bounds, run repeated-run ensembles, decompose order variance, train and
//! evaluate policies, and summarize output directories.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 remote-agent protocol failure budget exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use echelon_core::ensemble::{self, EnsembleError};
use echelon_core::export;
use echelon_core::grpo::{self, CategoricalPolicy, Checkpoint, TrainConfig};
use echelon_core::linear::{bound_table, GainProfile, TierGainParams};
use echelon_core::policy::AgentPolicy;
use echelon_core::scenario::ScenarioConfig;

const REMOTE_ENDPOINT_VAR: &str = "ECHELON_REMOTE_ENDPOINT";

#[derive(Parser)]
#[command(name = "echelon", version, about = "Supply-chain reliability lab")]
struct Cli {
    /// Worker threads for parallel runs (defaults to the core count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory of a scenario and write it as CSV.
    Simulate(SimulateArgs),
    /// Tabulate per-tier gains and variance lower bounds.
    Analyze(AnalyzeArgs),
    /// Run R repeated trajectories and the variability metric suite.
    Ensemble(EnsembleArgs),
    /// Nested variance decomposition over demand paths and decision noise.
    Decompose(DecomposeArgs),
    /// Train the categorical policy with group-relative updates.
    Train(TrainArgs),
    /// Evaluate a policy on the classic step-demand game.
    Eval(EvalArgs),
    /// Summarize a previously written output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Order-up-to multipliers, comma separated, one per tier or one shared
    /// value.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    theta: Vec<f64>,
    /// Forecast smoothing weights, same layout as --theta.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    lambda: Vec<f64>,
    /// Number of tiers to tabulate.
    #[arg(long, default_value_t = 4)]
    tiers: usize,
    /// Demand variance feeding the demand bound.
    #[arg(long, default_value_t = 1.0)]
    sigma_d_sq: f64,
    /// Per-tier decision-shock variance feeding the decision bound.
    #[arg(long, default_value_t = 1.0)]
    sigma_eps_sq: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Denominator floor for variance ratios.
    #[arg(long, default_value_t = ensemble::DEFAULT_TAU)]
    tau: f64,
    /// Override the scenario burn-in.
    #[arg(long)]
    burn_in: Option<usize>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Outer demand paths.
    #[arg(long, default_value_t = 16)]
    outer: usize,
    /// Inner decision-randomized runs per path.
    #[arg(long, default_value_t = 16)]
    inner: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Compare stationary estimates against the analytic bounds (linear
    /// benchmark scenarios only).
    #[arg(long)]
    check_bounds: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint; omitting it evaluates the untrained categorical
    /// policy.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
    Remote(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Remote(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Remote(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn is_remote_failure(message: &str) -> bool {
    message.contains("remote agent failed")
}

fn from_ensemble_error(e: EnsembleError) -> CliError {
    match &e {
        EnsembleError::InsufficientSamples { .. } => CliError::Config(e.to_string()),
        EnsembleError::Scenario(_) => {
            let message = e.to_string();
            if is_remote_failure(&message) {
                CliError::Remote(message)
            } else {
                CliError::Config(message)
            }
        }
        EnsembleError::AllRunsFailed(_) => CliError::Remote(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut config = ScenarioConfig::from_toml(&text).map_err(config_err)?;
    if let Ok(endpoint) = std::env::var(REMOTE_ENDPOINT_VAR) {
        if !endpoint.is_empty() {
            config.override_remote_endpoint(&endpoint);
        }
    }
    Ok(config)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut scenario = load_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        scenario.run.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        scenario.run.horizon = horizon;
    }
    scenario.validate().map_err(config_err)?;
    ensure_dir(&args.out)?;
    let trajectory =
        ensemble::run_single(&scenario, scenario.run.seed).map_err(from_ensemble_error)?;
    if trajectory.outcomes.is_empty() {
        // linear benchmark: orders only
        let mut w =
            csv::Writer::from_path(args.out.join("orders.csv")).map_err(runtime_err)?;
        w.write_record(["tier", "period", "order"]).map_err(runtime_err)?;
        for (k, row) in trajectory.orders.iter().enumerate() {
            for (t, q) in row.iter().enumerate() {
                w.write_record([k.to_string(), t.to_string(), format!("{q}")])
                    .map_err(runtime_err)?;
            }
        }
        w.flush().map_err(runtime_err)?;
    } else {
        export::write_trajectory_csv(&trajectory, &args.out.join("trajectory.csv"))
            .map_err(runtime_err)?;
    }
    export::Manifest::new("simulate", &scenario.content_hash(), scenario.run.seed)
        .with_param("horizon", scenario.run.horizon)
        .write(&args.out.join("manifest.json"))
        .map_err(runtime_err)?;
    println!("simulate: wrote {}", args.out.display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let expand = |values: &[f64], name: &str| -> Result<Vec<f64>, CliError> {
        if values.len() == 1 {
            Ok(vec![values[0]; args.tiers])
        } else if values.len() == args.tiers {
            Ok(values.to_vec())
        } else {
            Err(CliError::Config(format!(
                "--{name} needs 1 or {} values, got {}",
                args.tiers,
                values.len()
            )))
        }
    };
    let thetas = expand(&args.theta, "theta")?;
    let lambdas = expand(&args.lambda, "lambda")?;
    let tiers: Vec<TierGainParams> = thetas
        .iter()
        .zip(&lambdas)
        .map(|(&theta, &lambda)| TierGainParams { theta, lambda })
        .collect();
    let gains = GainProfile::new(tiers).map_err(config_err)?;
    let shock_variances = vec![args.sigma_eps_sq; args.tiers];
    let bounds = bound_table(args.tiers, args.sigma_d_sq, &shock_variances, &gains);
    ensure_dir(&args.out)?;
    export::write_gain_table_csv(&bounds, &args.out.join("gains.csv")).map_err(runtime_err)?;
    for b in &bounds {
        println!(
            "k={} gamma={:.6} demand_bound={:.6} decision_bound={:.6}",
            b.tier, b.gamma, b.demand_bound, b.decision_bound
        );
    }
    Ok(())
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<(), CliError> {
    let mut scenario = load_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        scenario.run.seed = seed;
    }
    if args.tau <= 0.0 {
        return Err(CliError::Config("--tau must be positive".into()));
    }
    ensure_dir(&args.out)?;
    let record = ensemble::run_ensemble(&scenario, args.runs, scenario.run.seed)
        .map_err(from_ensemble_error)?;
    let burn_in = args.burn_in.unwrap_or_else(|| scenario.burn_in());
    let (sigma, metrics) =
        ensemble::assemble_metrics(&record, args.tau, burn_in).map_err(from_ensemble_error)?;
    export::write_ensemble_csv(&record, &args.out.join("ensemble.csv")).map_err(runtime_err)?;
    export::write_sigma_csv(&sigma, &args.out.join("sigma.csv")).map_err(runtime_err)?;
    export::write_metrics_csv(&metrics, &args.out.join("metrics.csv")).map_err(runtime_err)?;
    export::write_boxplot_csv(
        &ensemble::box_summaries(&record),
        &args.out.join("boxplot.csv"),
    )
    .map_err(runtime_err)?;
    let mut manifest =
        export::Manifest::new("ensemble", &scenario.content_hash(), scenario.run.seed)
            .with_param("runs", args.runs)
            .with_param("burn_in", burn_in)
            .with_param("tau", args.tau);
    manifest.excluded_runs = record.excluded.clone();
    manifest.write(&args.out.join("manifest.json")).map_err(runtime_err)?;
    println!(
        "ensemble: {} runs ({} excluded), wrote {}",
        record.run_count(),
        record.excluded.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<(), CliError> {
    let mut scenario = load_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        scenario.run.seed = seed;
    }
    ensure_dir(&args.out)?;
    let result =
        ensemble::decompose_variance(&scenario, args.outer, args.inner, scenario.run.seed)
            .map_err(from_ensemble_error)?;
    export::write_decomposition_csv(&result, &args.out.join("decomposition.csv"))
        .map_err(runtime_err)?;
    if result.v_demand.is_none() {
        println!("decompose: single demand path, demand component unavailable");
    }
    if args.check_bounds {
        check_bounds_report(&scenario, &result, &args.out)?;
    }
    export::Manifest::new("decompose", &scenario.content_hash(), scenario.run.seed)
        .with_param("outer", args.outer)
        .with_param("inner", args.inner)
        .write(&args.out.join("manifest.json"))
        .map_err(runtime_err)?;
    println!("decompose: wrote {}", args.out.display());
    Ok(())
}

fn check_bounds_report(
    scenario: &ScenarioConfig,
    result: &ensemble::DecompositionResult,
    out: &Path,
) -> Result<(), CliError> {
    if !scenario.is_linear().map_err(config_err)? {
        return Err(CliError::Config(
            "--check-bounds needs a linear benchmark scenario".into(),
        ));
    }
    let gains = scenario.gain_profile().map_err(config_err)?;
    let shock_variances: Vec<f64> = scenario
        .shock_specs()
        .map_err(config_err)?
        .iter()
        .map(|s| s.variance())
        .collect();
    let demand_variance = match &scenario.demand {
        echelon_core::scenario::DemandRegime::IidNormal { std, .. } => std * std,
        _ => 1.0,
    };
    let bounds = bound_table(scenario.chain.tiers, demand_variance, &shock_variances, &gains);
    let burn_in = scenario.burn_in();
    let sigma_for_trend = ensemble::SigmaTable {
        tier_count: result.tier_count,
        horizon: result.horizon,
        values: result.total.clone(),
    };
    let nonstationary = ensemble::variance_trend_flag(&sigma_for_trend, burn_in);
    let late = result.horizon - 1;
    let estimates: Vec<ensemble::TierEstimate> = (1..=result.tier_count)
        .map(|k| ensemble::TierEstimate {
            tier: k,
            v_demand: result
                .v_demand
                .as_ref()
                .map(|v| (v[k][late], result.se_demand.as_ref().unwrap()[k][late])),
            v_decision: Some((result.v_decision[k][late], result.se_decision[k][late])),
        })
        .collect();
    let report = ensemble::check_bounds(&estimates, &bounds, nonstationary);
    export::write_bounds_csv(&report, &out.join("bounds.csv")).map_err(runtime_err)?;
    for row in &report.rows {
        println!(
            "k={} {}: estimate {:.4} (se {:.4}) vs bound {:.4} -> {}",
            row.tier,
            row.component,
            row.estimate,
            row.se,
            row.bound,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    if report.nonstationary {
        println!("warning: variance trend detected inside the measurement window");
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let config = TrainConfig::from_toml(&text).map_err(config_err)?;
    ensure_dir(&args.out)?;
    let result = grpo::train(&config).map_err(runtime_err)?;
    let hash = config.content_hash();
    let checkpoint = Checkpoint::from_policy(&result.policy, Some(hash.clone()));
    std::fs::write(args.out.join("checkpoint.json"), checkpoint.to_json())
        .map_err(runtime_err)?;
    export::write_training_log_csv(&result.log, &args.out.join("training_log.csv"))
        .map_err(runtime_err)?;
    export::Manifest::new("train", &hash, config.seed)
        .with_param("steps", config.steps)
        .with_param("group_size", config.group_size)
        .write(&args.out.join("manifest.json"))
        .map_err(runtime_err)?;
    if let Some(last) = result.log.last() {
        println!(
            "train: {} steps, final mean episode cost {:.1}, wrote {}",
            config.steps,
            last.mean_episode_cost,
            args.out.display()
        );
    } else {
        println!("train: 0 steps, wrote initial checkpoint to {}", args.out.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let policy: Arc<dyn AgentPolicy> = match &args.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Arc::new(Checkpoint::from_json(&text).map_err(config_err)?.into_policy())
        }
        None => Arc::new(CategoricalPolicy::uniform(64)),
    };
    let env = grpo::EnvSpec { horizon: args.horizon, ..grpo::EnvSpec::default() };
    ensure_dir(&args.out)?;
    let report = grpo::evaluate(policy, &env, args.runs, args.seed).map_err(runtime_err)?;
    export::write_eval_report(&report, &args.out.join("eval.json")).map_err(runtime_err)?;
    let (sigma, metrics) = ensemble::assemble_metrics(&report.record, ensemble::DEFAULT_TAU, 0)
        .map_err(from_ensemble_error)?;
    export::write_ensemble_csv(&report.record, &args.out.join("ensemble.csv"))
        .map_err(runtime_err)?;
    export::write_sigma_csv(&sigma, &args.out.join("sigma.csv")).map_err(runtime_err)?;
    export::write_metrics_csv(&metrics, &args.out.join("metrics.csv")).map_err(runtime_err)?;
    export::write_boxplot_csv(
        &ensemble::box_summaries(&report.record),
        &args.out.join("boxplot.csv"),
    )
    .map_err(runtime_err)?;
    export::Manifest::new("eval", "-", args.seed)
        .with_param("runs", args.runs)
        .with_param("horizon", args.horizon)
        .write(&args.out.join("manifest.json"))
        .map_err(runtime_err)?;
    println!(
        "eval: mean {:.1} std {:.1} max {:.1} cv {:.3}, wrote {}",
        report.mean_total_cost,
        report.std_total_cost,
        report.max_total_cost,
        report.cv,
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let manifest_path = args.dir.join("manifest.json");
    let manifest = export::Manifest::read(&manifest_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
    println!("command:     {}", manifest.command);
    println!("artifact:    {} {}", manifest.artifact, manifest.version);
    println!("config hash: {}", manifest.config_hash);
    println!("master seed: {}", manifest.master_seed);
    if !manifest.excluded_runs.is_empty() {
        println!("excluded runs: {}", manifest.excluded_runs.len());
        for e in &manifest.excluded_runs {
            println!("  run {}: {}", e.run, e.reason);
        }
    }
    for entry in &manifest.params {
        println!("{}: {}", entry.0, entry.1);
    }
    let mut files: Vec<_> = std::fs::read_dir(&args.dir)
        .map_err(runtime_err)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .collect();
    files.sort();
    println!("files: {}", files.join(", "));
    Ok(())
}

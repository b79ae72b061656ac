use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hub_core::bench::{self, AlgorithmSpec, Capture, Profile, SuiteResult, SWEEP_BASE_COSTS, SWEEP_MULTIPLIERS};
use hub_core::beta::{beta_from_sensitivity, beta_report, read_preference_log, run_beta_recovery_study};
use hub_core::domains::{covid_suite, recommendation_suite_from_seed, CovidConfig, Domain, TaskSuite};
use hub_core::hub::HubInstance;
use hub_core::planner::{PlannerParams, RolloutPolicy};
use hub_core::pomdp::{HubPomdpModel, SelectionMode};
use hub_core::{parallel, HubError};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Experiments on hidden utility bandits.
///
/// Worker threads for episode-level parallelism are set by HUB_WORKERS
/// (default: all cores). Output never depends on the worker count.
#[derive(Parser, Debug)]
#[command(name = "hub", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a task suite directory (one TOML per task plus manifest.json).
    GenerateTasks(GenerateArgs),
    /// Run an algorithm roster on a suite and export CSVs, SVGs and a manifest.
    Run(RunArgs),
    /// Rerun ATS-specific with teacher costs scaled by each multiplier.
    SweepCosts(SweepArgs),
    /// Compare ATS rollout policies on a suite.
    CompareRollouts(ExperimentArgs),
    /// Estimate teacher rationality from a preference log or a simulation study.
    EstimateBeta(BetaArgs),
    /// Re-render the figures of an export directory from its CSVs.
    Plot {
        /// Directory written by run, sweep-costs or compare-rollouts.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print state, action and observation counts and check config round trips.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// recommendation (rec) or covid.
    #[arg(long, default_value = "recommendation")]
    domain: Domain,
    /// Number of tasks (recommendation only).
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// COVID domain config; documented defaults when omitted.
    #[arg(long)]
    covid_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct PlannerArgs {
    /// TOML file with every planner parameter; flags below override it.
    #[arg(long)]
    planner_config: Option<PathBuf>,
    /// Simulations per step.
    #[arg(long)]
    sims: Option<usize>,
    /// Maximum search depth.
    #[arg(long)]
    depth: Option<usize>,
    /// UCB exploration constant.
    #[arg(long)]
    ucb_c: Option<f64>,
    /// Observation widening coefficient k.
    #[arg(long)]
    widen_k: Option<f64>,
    /// Observation widening exponent alpha.
    #[arg(long)]
    widen_alpha: Option<f64>,
    /// best-arm, random-arm or random-action.
    #[arg(long)]
    rollout: Option<RolloutPolicy>,
    /// Leaf rollout steps below the tree, or `full` to run to the episode end.
    #[arg(long, value_parser = parse_rollout_horizon)]
    rollout_horizon: Option<RolloutHorizon>,
}

#[derive(Debug, Clone, Copy)]
struct RolloutHorizon(Option<usize>);

fn parse_rollout_horizon(s: &str) -> Result<RolloutHorizon, String> {
    if s == "full" {
        return Ok(RolloutHorizon(None));
    }
    s.parse()
        .map(|n| RolloutHorizon(Some(n)))
        .map_err(|_| format!("expected a step count or 'full', got '{s}'"))
}

#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    /// Suite directory written by generate-tasks.
    #[arg(long)]
    suite: PathBuf,
    /// desk, full or smoke.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the profile's runs per task.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the profile's number of tasks.
    #[arg(long)]
    tasks: Option<usize>,
    /// Override the profile's horizon.
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    planner: PlannerArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated algorithms: ats-specific, ats-general, naive[T],
    /// random, random-arms, or all.
    #[arg(long, default_value = "all")]
    alg: String,
    /// Write every teacher answer as teacher,item_i,item_j,preferred.
    #[arg(long)]
    preferences: Option<PathBuf>,
    /// Restrict --preferences to one algorithm label.
    #[arg(long)]
    preferences_alg: Option<String>,
    /// Write per-step planner statistics.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_MULTIPLIERS)]
    multipliers: Vec<f64>,
    /// Base query reward per teacher.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = SWEEP_BASE_COSTS)]
    base_costs: Vec<f64>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["log", "study", "covid_config", "covid_defaults"])))]
struct BetaArgs {
    /// Preference-log CSV with columns teacher,item_i,item_j,preferred.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Anchor item believed to be worth less.
    #[arg(long, requires = "greater")]
    lesser: Option<String>,
    /// Anchor item believed to be worth more.
    #[arg(long, requires = "lesser")]
    greater: Option<String>,
    /// Known utility difference U(lesser) - U(greater) (negative).
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// Run the simulated recovery study instead of reading a log.
    #[arg(long)]
    study: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 1.0])]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 100)]
    sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Derive rationality from the test sensitivities of a COVID config.
    #[arg(long)]
    covid_config: Option<PathBuf>,
    /// Same as --covid-config with the documented defaults.
    #[arg(long)]
    covid_defaults: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["suite", "domain", "config"])))]
struct DescribeArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Describe a domain's default instance.
    #[arg(long)]
    domain: Option<Domain>,
    /// Describe a single hub TOML.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateTasks(a) => generate(a),
        Command::Run(a) => run(a),
        Command::SweepCosts(a) => sweep(a),
        Command::CompareRollouts(a) => rollouts(a),
        Command::EstimateBeta(a) => estimate_beta(a),
        Command::Plot { dir } => plot(&dir),
        Command::Describe(a) => describe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let suite = match a.domain {
        Domain::Recommendation => {
            if a.covid_config.is_some() {
                return Err(CliError::Usage("--covid-config only applies to --domain covid".into()));
            }
            recommendation_suite_from_seed(a.count, &a.domain.default_grids(), a.seed)?
        }
        Domain::Covid => {
            let cfg = match &a.covid_config {
                Some(p) => CovidConfig::load(p)?,
                None => CovidConfig::default(),
            };
            covid_suite(&cfg)?
        }
    };
    let manifest = suite.save(&a.out)?;
    println!(
        "wrote {} {} task(s) to {} (constraint check: {})",
        manifest.tasks.len(),
        a.domain.name(),
        a.out.display(),
        manifest.constraint_check
    );
    for t in manifest.tasks.iter().filter(|t| !t.violations.is_empty()) {
        for v in &t.violations {
            eprintln!("{}: {v}", t.name);
        }
    }
    if manifest.constraint_check == "pass" {
        Ok(())
    } else {
        Err(CliError::Failed("suite violates its constraints".into()))
    }
}

struct Setup {
    suite: TaskSuite,
    profile: Profile,
    planner: PlannerParams,
    tasks: usize,
    runs: usize,
    horizon: usize,
}

fn setup(exp: &ExperimentArgs) -> CliResult<Setup> {
    let suite = TaskSuite::load(&exp.suite)?;
    let first = suite
        .tasks
        .first()
        .ok_or_else(|| CliError::Usage(format!("{}: suite has no tasks", exp.suite.display())))?;
    let profile = Profile::by_name(&exp.profile)?;
    let mut planner = match &exp.planner.planner_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => profile.planner_params(&suite.grids, first.hub.gamma),
    };
    let p = &exp.planner;
    if let Some(v) = p.sims {
        planner.simulations_per_step = v;
    }
    if let Some(v) = p.depth {
        planner.max_depth = v;
    }
    if let Some(v) = p.ucb_c {
        planner.ucb_exploration = v;
    }
    if let Some(v) = p.widen_k {
        planner.obs_widen_k = v;
    }
    if let Some(v) = p.widen_alpha {
        planner.obs_widen_alpha = v;
    }
    if let Some(v) = p.rollout {
        planner.rollout_policy = v;
    }
    if let Some(RolloutHorizon(v)) = p.rollout_horizon {
        planner.rollout_horizon = v;
    }
    planner.validate()?;
    Ok(Setup {
        tasks: exp.tasks.unwrap_or(profile.tasks),
        runs: exp.runs.unwrap_or(profile.runs),
        horizon: exp.horizon.unwrap_or(profile.horizon),
        suite,
        profile,
        planner,
    })
}

fn announce(s: &Setup, jobs: usize) {
    let tasks = s.tasks.min(s.suite.tasks.len());
    eprintln!(
        "profile {}: {} task(s) x {} run(s) x {} step(s), {} simulations/step, {} episode(s), {} worker(s)",
        s.profile.name,
        tasks,
        s.runs,
        s.horizon,
        s.planner.simulations_per_step,
        jobs * tasks * s.runs,
        parallel::configured_workers().map_or_else(|| "default".to_string(), |n| n.to_string()),
    );
}

fn print_table(result: &SuiteResult) {
    println!(
        "{:<16} {:>12} {:>10} {:>9} {:>10} {:>10}",
        "algorithm", "reward", "best_arm", "queries", "util_l2", "arm_l2"
    );
    let fmt = |v: f64| if v.is_finite() { format!("{v:.3}") } else { "-".into() };
    for a in &result.algorithms {
        println!(
            "{:<16} {:>12.3} {:>10.3} {:>9.1} {:>10} {:>10}",
            a.label,
            a.mean_reward(),
            a.mean_best_arm_last(),
            a.median_queries(),
            fmt(a.median_utility_l2()),
            fmt(a.median_arm_value_l2()),
        );
    }
    for f in &result.failures {
        eprintln!("aborted: {f}");
    }
}

fn finish(result: &SuiteResult, out: &Path, figures: &[bench::FigureSpec]) -> CliResult<()> {
    let manifest = bench::export(result, out, figures)?;
    print_table(result);
    eprintln!("wrote {} file(s) to {}", manifest.files.len() + 1, out.display());
    if result.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} episode(s) aborted",
            result.failures.len()
        )))
    }
}

fn parse_roster(alg: &str, planner: &PlannerParams, horizon: usize) -> CliResult<Vec<AlgorithmSpec>> {
    if alg.trim().eq_ignore_ascii_case("all") {
        return Ok(bench::default_roster(planner, horizon));
    }
    let mut out = Vec::new();
    for name in alg.split(',').filter(|s| !s.trim().is_empty()) {
        let spec = AlgorithmSpec::parse(name, planner)?;
        if let AlgorithmSpec::Naive(t) = spec {
            if t >= horizon {
                return Err(CliError::Usage(format!("naive[{t}] needs a horizon above {t}")));
            }
        }
        if !out.contains(&spec) {
            out.push(spec);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no algorithms selected".into()));
    }
    Ok(out)
}

fn run(a: RunArgs) -> CliResult<()> {
    let s = setup(&a.exp)?;
    let roster = bench::labelled(parse_roster(&a.alg, &s.planner, s.horizon)?);
    announce(&s, roster.len());
    let capture = Capture {
        preferences: a.preferences.is_some(),
        diagnostics: a.diagnostics.is_some(),
    };
    let (result, captured) = bench::run_suite(
        "run", &s.suite, &roster, s.tasks, s.runs, s.horizon, a.exp.seed, capture,
    )?;
    if let Some(path) = &a.preferences {
        let n = bench::export_preferences(&captured, path, a.preferences_alg.as_deref())?;
        eprintln!("wrote {n} preference record(s) to {}", path.display());
    }
    if let Some(path) = &a.diagnostics {
        bench::export_diagnostics(&captured, path)?;
        eprintln!(
            "wrote {} planner step(s) to {}",
            captured.diagnostics.len(),
            path.display()
        );
    }
    let hub = &s.suite.tasks[0].hub;
    let figures = match s.suite.domain {
        Domain::Recommendation => bench::recommendation_figures(hub),
        Domain::Covid => bench::covid_figures(hub),
    };
    finish(&result, &a.exp.out, &figures)
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let s = setup(&a.exp)?;
    announce(&s, a.multipliers.len());
    let result = bench::run_cost_sweep(
        &s.suite,
        &a.multipliers,
        &a.base_costs,
        &s.planner,
        s.tasks,
        s.runs,
        s.horizon,
        a.exp.seed,
    )?;
    finish(&result, &a.exp.out, &bench::cost_figures())
}

fn rollouts(exp: ExperimentArgs) -> CliResult<()> {
    let s = setup(&exp)?;
    let roster = bench::rollout_roster(&s.planner);
    announce(&s, roster.len());
    let (result, _) = bench::run_suite(
        "compare-rollouts",
        &s.suite,
        &roster,
        s.tasks,
        s.runs,
        s.horizon,
        exp.seed,
        Capture::default(),
    )?;
    finish(&result, &exp.out, &bench::rollout_figures())
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn estimate_beta(a: BetaArgs) -> CliResult<()> {
    if a.study {
        let mut rng = hub_core::seeded_rng(a.seed);
        let mse = run_beta_recovery_study(&a.betas, a.steps, a.sims, &mut rng)?;
        println!(
            "recovery study: betas {:?}, {} steps, {} sims, seed {}: mse of max-normalized estimates {mse:.4}",
            a.betas, a.steps, a.sims, a.seed
        );
        if let Some(out) = &a.out {
            write_json(
                out,
                &serde_json::json!({"betas": a.betas, "steps": a.steps, "sims": a.sims, "seed": a.seed, "mse": mse}),
            )?;
        }
        return Ok(());
    }
    if a.covid_config.is_some() || a.covid_defaults {
        let cfg = match &a.covid_config {
            Some(p) => CovidConfig::load(p)?,
            None => CovidConfig::default(),
        };
        let mut rows = Vec::new();
        println!("{:<12} {:>12} {:>10}", "test", "sensitivity", "beta");
        for t in &cfg.tests {
            let s = *cfg
                .sensitivities
                .get(t)
                .ok_or_else(|| CliError::Usage(format!("no sensitivity for test '{t}'")))?;
            let beta = beta_from_sensitivity(s, cfg.u_min, cfg.u_max)?;
            println!("{t:<12} {s:>12.3} {beta:>10.4}");
            rows.push(serde_json::json!({"test": t, "sensitivity": s, "beta": beta}));
        }
        if let Some(out) = &a.out {
            write_json(out, &serde_json::Value::Array(rows))?;
        }
        return Ok(());
    }
    let path = a.log.expect("argument group guarantees a source");
    let records = read_preference_log(&path)?;
    let anchor = a.lesser.as_deref().zip(a.greater.as_deref());
    let report = beta_report(&records, anchor, a.delta)?;
    println!(
        "{} record(s); anchor pair: {} (lesser) vs {} (greater)",
        records.len(),
        report.lesser,
        report.greater
    );
    println!(
        "{:<10} {:>9} {:>7} {:>8} {:>10} {:>10}",
        "teacher", "preferred", "total", "rate", "raw", "scaled"
    );
    for ((t, tally), est) in report.teachers.iter().zip(&report.tallies).zip(&report.estimates) {
        let scaled = format!("{:.4}", est.scaled);
        println!(
            "{t:<10} {:>9} {:>7} {:>8.4} {:>10.4} {scaled:>10}",
            tally.preferred,
            tally.total,
            tally.rate(),
            est.raw
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &serde_json::to_value(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn plot(dir: &Path) -> CliResult<()> {
    let files = bench::plot_from_dir(dir)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn describe_hub(name: &str, hub: &HubInstance, grids: &hub_core::pomdp::Grids) -> CliResult<()> {
    let round_trip = HubInstance::from_toml(&hub.to_toml()?)? == *hub;
    println!(
        "{name}: {} items, {} arms, {} teachers, gamma {}, best arm {} ({}), toml round trip {}",
        hub.n_items(),
        hub.n_arms(),
        hub.n_teachers(),
        hub.gamma,
        hub.best_arm(),
        hub.arm_label(hub.best_arm()),
        if round_trip { "ok" } else { "MISMATCH" }
    );
    for (label, mode) in [
        ("specific", SelectionMode::Specific),
        (
            "general",
            SelectionMode::General {
                teacher: bench::designated_teacher(hub),
            },
        ),
    ] {
        let model = HubPomdpModel::for_hub(hub, grids, mode)?;
        let s = model.summary();
        println!(
            "  {label:<9} |S| = {:>9}  |A| = {}  |Omega| = {}",
            s.states, s.actions, s.observations
        );
    }
    if round_trip {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{name}: config does not round-trip")))
    }
}

fn describe(a: DescribeArgs) -> CliResult<()> {
    if let Some(dir) = &a.suite {
        let suite = TaskSuite::load(dir)?;
        println!(
            "suite {} ({} task(s), domain {})",
            dir.display(),
            suite.tasks.len(),
            suite.domain.name()
        );
        for t in &suite.tasks {
            describe_hub(&t.name, &t.hub, &suite.grids)?;
        }
        return Ok(());
    }
    if let Some(domain) = a.domain {
        let suite = match domain {
            Domain::Recommendation => recommendation_suite_from_seed(1, &domain.default_grids(), 0)?,
            Domain::Covid => covid_suite(&CovidConfig::default())?,
        };
        return describe_hub(domain.name(), &suite.tasks[0].hub, &suite.grids);
    }
    let path = a.config.expect("argument group guarantees a source");
    let hub = HubInstance::load(&path)?;
    // a lone config carries no grid; use the recommendation grid
    describe_hub(
        &path.display().to_string(),
        &hub,
        &Domain::Recommendation.default_grids(),
    )
}

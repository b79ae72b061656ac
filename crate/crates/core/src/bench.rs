//! Experiment engine: runs algorithms over task suites, turns episode logs
//! into per-step metric series, aggregates them and exports CSV, SVG and a
//! manifest.
//!
//! Every episode is seeded from `(base seed, task, run)` alone, so every
//! algorithm faces the same seeds and results do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beta::{preference_records, write_preference_log, PreferenceRecord};
use crate::domains::{Domain, TaskSuite};
use crate::episode::{execute, EnvAction, EpisodeLog};
use crate::error::{HubError, Result};
use crate::hub::HubInstance;
use crate::naive::run_naive_policy;
use crate::planner::{run_ats_episode_traced, PlanStats, PlannerParams, RolloutPolicy};
use crate::plot::{box_chart, line_chart, Line};
use crate::pomdp::{Grids, HubPomdpModel, SelectionMode};

pub const SMOOTHING_WINDOW: usize = 10;
pub const DEFAULT_HORIZON: usize = 1000;
pub const NAIVE_EXPLORE_STEPS: [usize; 3] = [50, 100, 200];
/// Window for the "early" and "late" action-frequency summaries.
pub const SUMMARY_WINDOW: usize = 100;
/// Base query rewards for the cost sweep, one per teacher.
pub const SWEEP_BASE_COSTS: [f64; 3] = [-1.0, -2.0, -3.0];
pub const SWEEP_MULTIPLIERS: [f64; 4] = [0.0, 1.0, 2.0, 4.0];

/// Teacher consulted by single-teacher algorithms: Naive inference and the
/// abstract query action of ATS-general. The middle teacher.
pub fn designated_teacher(hub: &HubInstance) -> usize {
    hub.n_teachers() / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlgorithmSpec {
    AtsSpecific(PlannerParams),
    AtsGeneral(PlannerParams),
    Naive(usize),
    Random,
    RandomArms,
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::AtsSpecific(_) => "ATS-specific".into(),
            AlgorithmSpec::AtsGeneral(_) => "ATS-general".into(),
            AlgorithmSpec::Naive(t) => format!("Naive[{t}]"),
            AlgorithmSpec::Random => "Random".into(),
            AlgorithmSpec::RandomArms => "RandomArms".into(),
        }
    }

    pub fn has_estimates(&self) -> bool {
        !matches!(self, AlgorithmSpec::Random | AlgorithmSpec::RandomArms)
    }

    /// Parses `ats-specific`, `ats-general`, `naive[T]` or `naive:T`,
    /// `random` and `random-arms`.
    pub fn parse(name: &str, planner: &PlannerParams) -> Result<Self> {
        let n = name.trim().to_ascii_lowercase();
        let bad = || HubError::InvalidParameter(format!("unknown algorithm '{name}'"));
        Ok(match n.as_str() {
            "ats-specific" | "ats" => AlgorithmSpec::AtsSpecific(planner.clone()),
            "ats-general" => AlgorithmSpec::AtsGeneral(planner.clone()),
            "random" => AlgorithmSpec::Random,
            "random-arms" | "randomarms" => AlgorithmSpec::RandomArms,
            _ => {
                let t = n
                    .strip_prefix("naive[")
                    .and_then(|r| r.strip_suffix(']'))
                    .or_else(|| n.strip_prefix("naive:"))
                    .ok_or_else(bad)?;
                AlgorithmSpec::Naive(t.parse().map_err(|_| bad())?)
            }
        })
    }
}

/// Scale of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub runs: usize,
    pub tasks: usize,
    pub horizon: usize,
    pub simulations: usize,
    pub max_depth: usize,
    /// UCB exploration as a fraction of `(u_max - u_min) / (1 - gamma)`.
    pub ucb_scale: f64,
    /// Leaf rollout length below the tree; `None` runs to the episode end.
    pub rollout_horizon: Option<usize>,
}

impl Profile {
    pub fn desk() -> Self {
        Profile {
            name: "desk".into(),
            runs: 5,
            tasks: 20,
            horizon: DEFAULT_HORIZON,
            simulations: 300,
            // At 300 simulations, returns summed over the rest of the episode
            // swamp the one-step gap between pulling and querying. A shallow
            // tree, short leaf rollouts and near-greedy selection keep the
            // root comparison above the noise.
            max_depth: 6,
            ucb_scale: 0.003,
            rollout_horizon: Some(10),
        }
    }

    pub fn full() -> Self {
        Profile {
            name: "full".into(),
            runs: 25,
            simulations: 1000,
            max_depth: 30,
            ucb_scale: 0.1,
            rollout_horizon: None,
            ..Self::desk()
        }
    }

    pub fn smoke() -> Self {
        Profile {
            name: "smoke".into(),
            runs: 1,
            tasks: 3,
            horizon: 120,
            simulations: 60,
            max_depth: 6,
            ucb_scale: 0.003,
            rollout_horizon: Some(10),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "smoke" => Ok(Self::smoke()),
            _ => Err(HubError::InvalidParameter(format!(
                "unknown profile '{name}' (desk, full, smoke)"
            ))),
        }
    }

    /// Planner defaults for `grids`/`gamma` with this profile's budget.
    pub fn planner_params(&self, grids: &Grids, gamma: f64) -> PlannerParams {
        let range = grids.utility_levels.u_max() - grids.utility_levels.u_min();
        PlannerParams {
            simulations_per_step: self.simulations,
            max_depth: self.max_depth,
            ucb_exploration: self.ucb_scale * range / (1.0 - gamma),
            obs_widen_k: 3.0,
            obs_widen_alpha: 0.15,
            rollout_policy: RolloutPolicy::BestArm,
            discount: gamma,
            rollout_horizon: self.rollout_horizon,
        }
    }
}

/// Every algorithm compared on a suite: both ATS variants, Naive[T] for each
/// T below the horizon, and both random baselines.
pub fn default_roster(planner: &PlannerParams, horizon: usize) -> Vec<AlgorithmSpec> {
    let mut out = vec![
        AlgorithmSpec::AtsSpecific(planner.clone()),
        AlgorithmSpec::AtsGeneral(planner.clone()),
    ];
    out.extend(
        NAIVE_EXPLORE_STEPS
            .iter()
            .filter(|&&t| t < horizon)
            .map(|&t| AlgorithmSpec::Naive(t)),
    );
    out.push(AlgorithmSpec::Random);
    out.push(AlgorithmSpec::RandomArms);
    out
}

fn random_episode(hub: &HubInstance, arms_only: bool, horizon: usize, rng: &mut crate::HubRng) -> Result<EpisodeLog> {
    let label = if arms_only { "RandomArms" } else { "Random" };
    let mut log = EpisodeLog::new(label, hub.gamma);
    let k = hub.n_arms();
    let choices = if arms_only { k } else { k + hub.n_teachers() };
    for _ in 0..horizon {
        let a = rng.gen_range(0..choices);
        let action = if a < k {
            EnvAction::Pull(a)
        } else {
            EnvAction::Query(a - k)
        };
        let outcome = execute(hub, action, rng)?;
        log.push(action, outcome, None, None);
    }
    Ok(log)
}

/// Runs one episode of `alg` on `hub`. Identical seeds reproduce the log.
pub fn run_episode(
    alg: &AlgorithmSpec,
    hub: &HubInstance,
    grids: &Grids,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeLog> {
    run_episode_traced(alg, hub, grids, horizon, seed, |_, _| {})
}

/// [`run_episode`] with a callback for per-step planner statistics.
pub fn run_episode_traced(
    alg: &AlgorithmSpec,
    hub: &HubInstance,
    grids: &Grids,
    horizon: usize,
    seed: u64,
    on_plan: impl FnMut(usize, &PlanStats),
) -> Result<EpisodeLog> {
    let mut rng = crate::seeded_rng(seed);
    match alg {
        AlgorithmSpec::AtsSpecific(params) | AlgorithmSpec::AtsGeneral(params) => {
            let mode = if matches!(alg, AlgorithmSpec::AtsSpecific(_)) {
                SelectionMode::Specific
            } else {
                SelectionMode::General {
                    teacher: designated_teacher(hub),
                }
            };
            let model = HubPomdpModel::for_hub(hub, grids, mode)?;
            run_ats_episode_traced(hub, &model, params, horizon, &mut rng, on_plan)
        }
        AlgorithmSpec::Naive(t) => run_naive_policy(hub, *t, designated_teacher(hub), horizon, &mut rng),
        AlgorithmSpec::Random => random_episode(hub, false, horizon, &mut rng),
        AlgorithmSpec::RandomArms => random_episode(hub, true, horizon, &mut rng),
    }
}

pub const DISCOUNTED_REWARD: &str = "discounted_reward";
pub const BEST_ARM: &str = "best_arm";
pub const QUERY: &str = "query";
pub const UTILITY_L2: &str = "utility_l2";
pub const ARM_VALUE_L2: &str = "arm_value_l2";

/// Name of the frequency series for one action column.
pub fn action_metric(hub: &HubInstance, action: EnvAction) -> String {
    match action {
        EnvAction::Pull(k) => format!("pull_{}", hub.arm_label(k)),
        EnvAction::Query(m) => format!("query_{}", hub.teacher_label(m)),
    }
}

/// Per-step series for one episode. Steps without an estimate hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub series: Vec<(String, Vec<f64>)>,
}

impl EpisodeMetrics {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn compute_metrics(log: &EpisodeLog, hub: &HubInstance) -> EpisodeMetrics {
    let best = hub.best_arm();
    let truth_values = hub.arm_values();
    let k = hub.n_arms();
    let mut series = vec![
        (
            DISCOUNTED_REWARD.to_string(),
            log.rows.iter().map(|r| r.cumulative_discounted_reward).collect(),
        ),
        (
            BEST_ARM.to_string(),
            log.rows
                .iter()
                .map(|r| f64::from(u8::from(r.action == EnvAction::Pull(best))))
                .collect(),
        ),
        (
            QUERY.to_string(),
            log.rows
                .iter()
                .map(|r| f64::from(u8::from(r.action.is_query())))
                .collect(),
        ),
    ];
    let has_estimates = log
        .rows
        .iter()
        .any(|r| r.utility_estimate.is_some() || r.arm_value_estimate.is_some());
    if has_estimates {
        series.push((
            UTILITY_L2.to_string(),
            log.rows
                .iter()
                .map(|r| {
                    r.utility_estimate
                        .as_ref()
                        .map_or(f64::NAN, |u| l2(u, &hub.utility.values))
                })
                .collect(),
        ));
        series.push((
            ARM_VALUE_L2.to_string(),
            log.rows
                .iter()
                .map(|r| r.arm_value_estimate.as_ref().map_or(f64::NAN, |v| l2(v, &truth_values)))
                .collect(),
        ));
    }
    for col in 0..k + hub.n_teachers() {
        let action = if col < k {
            EnvAction::Pull(col)
        } else {
            EnvAction::Query(col - k)
        };
        series.push((
            action_metric(hub, action),
            log.rows
                .iter()
                .map(|r| f64::from(u8::from(r.action == action)))
                .collect(),
        ));
    }
    EpisodeMetrics { series }
}

/// Causal moving average over the last `window` finite values.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let (sum, n) = values[lo..=t]
                .iter()
                .filter(|v| v.is_finite())
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect()
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

/// Smooths every episode's series and reduces them per step to the mean and
/// interquartile range. Metrics absent from every episode are dropped.
pub fn aggregate(logs: &[EpisodeMetrics], window: usize) -> Result<Vec<(String, SeriesStats)>> {
    let Some(first) = logs.first() else {
        return Err(HubError::InsufficientData("nothing to aggregate".into()));
    };
    let horizon = first.series.first().map_or(0, |(_, v)| v.len());
    let mut names: Vec<String> = Vec::new();
    for m in logs {
        for (n, v) in &m.series {
            if v.len() != horizon {
                return Err(HubError::InvalidParameter(format!(
                    "series '{n}' has {} steps, expected {horizon}",
                    v.len()
                )));
            }
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let smoothed: Vec<Vec<f64>> = logs
            .iter()
            .filter_map(|m| m.get(&name))
            .map(|v| smooth(v, window))
            .collect();
        let mut stats = SeriesStats::default();
        let mut column = Vec::with_capacity(smoothed.len());
        for t in 0..horizon {
            column.clear();
            column.extend(smoothed.iter().map(|v| v[t]).filter(|x| x.is_finite()));
            column.sort_by(|a, b| a.total_cmp(b));
            let mean = if column.is_empty() {
                f64::NAN
            } else {
                column.iter().sum::<f64>() / column.len() as f64
            };
            stats.mean.push(mean);
            stats.q25.push(quantile(&column, 0.25));
            stats.q75.push(quantile(&column, 0.75));
        }
        out.push((name, stats));
    }
    Ok(out)
}

/// End-of-episode numbers for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub algorithm: String,
    pub task: String,
    pub run: usize,
    pub seed: u64,
    pub discounted_reward: f64,
    pub queries: usize,
    pub best_arm_last: f64,
    pub utility_l2: Option<f64>,
    pub arm_value_l2: Option<f64>,
    /// Pull frequency of every arm over the first steps.
    pub arm_freq_first: Vec<f64>,
    /// Pull frequency of every arm over the last steps.
    pub arm_freq_last: Vec<f64>,
}

pub fn summarize(log: &EpisodeLog, hub: &HubInstance, task: &str, run: usize, seed: u64) -> EpisodeSummary {
    let n = log.rows.len();
    let w = SUMMARY_WINDOW.min(n).max(1);
    let freq = |rows: &[crate::episode::StepRecord]| -> Vec<f64> {
        (0..hub.n_arms())
            .map(|k| rows.iter().filter(|r| r.action == EnvAction::Pull(k)).count() as f64 / w as f64)
            .collect()
    };
    let last = &log.rows[n.saturating_sub(w)..];
    let best = hub.best_arm();
    let final_row = log.rows.last();
    EpisodeSummary {
        algorithm: log.algorithm.clone(),
        task: task.to_string(),
        run,
        seed,
        discounted_reward: log.discounted_return(),
        queries: log.query_count(),
        best_arm_last: last.iter().filter(|r| r.action == EnvAction::Pull(best)).count() as f64 / w as f64,
        utility_l2: final_row
            .and_then(|r| r.utility_estimate.as_ref())
            .map(|u| l2(u, &hub.utility.values)),
        arm_value_l2: final_row
            .and_then(|r| r.arm_value_estimate.as_ref())
            .map(|v| l2(v, &hub.arm_values())),
        arm_freq_first: freq(&log.rows[..w.min(n)]),
        arm_freq_last: freq(last),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub label: String,
    pub series: Vec<(String, SeriesStats)>,
    pub summaries: Vec<EpisodeSummary>,
}

impl AlgorithmResult {
    pub fn series(&self, metric: &str) -> Option<&SeriesStats> {
        self.series.iter().find(|(n, _)| n == metric).map(|(_, s)| s)
    }

    pub fn mean_reward(&self) -> f64 {
        mean(self.summaries.iter().map(|s| s.discounted_reward))
    }

    pub fn mean_best_arm_last(&self) -> f64 {
        mean(self.summaries.iter().map(|s| s.best_arm_last))
    }

    pub fn median_queries(&self) -> f64 {
        median(&self.summaries.iter().map(|s| s.queries as f64).collect::<Vec<_>>())
    }

    /// Median final loss; episodes without an estimate count as infinite.
    pub fn median_utility_l2(&self) -> f64 {
        median(
            &self
                .summaries
                .iter()
                .map(|s| s.utility_l2.unwrap_or(f64::INFINITY))
                .collect::<Vec<_>>(),
        )
    }

    pub fn median_arm_value_l2(&self) -> f64 {
        median(
            &self
                .summaries
                .iter()
                .map(|s| s.arm_value_l2.unwrap_or(f64::INFINITY))
                .collect::<Vec<_>>(),
        )
    }

    pub fn mean_arm_freq_first(&self) -> Vec<f64> {
        mean_vec(self.summaries.iter().map(|s| s.arm_freq_first.as_slice()))
    }

    pub fn mean_arm_freq_last(&self) -> Vec<f64> {
        mean_vec(self.summaries.iter().map(|s| s.arm_freq_last.as_slice()))
    }

    /// First step at which the smoothed mean of `metric` reaches `level`.
    pub fn first_step_reaching(&self, metric: &str, level: f64) -> Option<usize> {
        self.series(metric)?.mean.iter().position(|&v| v >= level)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn mean_vec<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
        n += 1;
    }
    acc.iter().map(|a| a / n.max(1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSeed {
    pub task: String,
    pub run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub horizon: usize,
    pub gamma: f64,
    pub smoothing_window: usize,
    pub config_hash: String,
    pub seeds: Vec<EpisodeSeed>,
    pub algorithms: Vec<AlgorithmResult>,
    /// Aborted episodes, as `label task run: error`.
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn algorithm(&self, label: &str) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|a| a.label == label)
    }
}

/// What to capture besides metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    pub preferences: bool,
    pub diagnostics: bool,
}

/// One row of the optional planner diagnostics file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub algorithm: String,
    pub task: String,
    pub run: usize,
    pub step: usize,
    pub action: String,
    pub depth: usize,
    pub belief_nodes: usize,
    pub action_nodes: usize,
    pub invigorations: usize,
    pub root_values: String,
    pub root_scores: String,
    pub root_visits: String,
}

/// Raw material captured alongside a suite run.
#[derive(Debug, Clone, Default)]
pub struct Captured {
    pub preferences: Vec<(String, PreferenceRecord)>,
    pub diagnostics: Vec<DiagnosticsRow>,
}

/// Seed for `(task, run)`, independent of the algorithm.
pub fn episode_seed(base: u64, task: usize, run: usize) -> u64 {
    let mut rng = crate::seeded_stream(base, (task as u64) << 32 | run as u64);
    rng.gen()
}

/// Hash of everything that determines a run's output.
pub fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct RunConfig<'a> {
    name: &'a str,
    domain: Domain,
    grids: &'a Grids,
    tasks: Vec<String>,
    algorithms: Vec<(&'a str, &'a AlgorithmSpec)>,
    runs: usize,
    horizon: usize,
    seed: u64,
}

struct JobOutput {
    summary: EpisodeSummary,
    metrics: EpisodeMetrics,
    preferences: Vec<PreferenceRecord>,
    diagnostics: Vec<DiagnosticsRow>,
}

/// Runs every `(label, algorithm)` on the first `tasks` tasks of `suite`,
/// `runs` times each.
#[allow(clippy::too_many_arguments)]
pub fn run_suite(
    name: &str,
    suite: &TaskSuite,
    algorithms: &[(String, AlgorithmSpec)],
    tasks: usize,
    runs: usize,
    horizon: usize,
    seed: u64,
    capture: Capture,
) -> Result<(SuiteResult, Captured)> {
    if algorithms.is_empty() || runs == 0 || horizon == 0 {
        return Err(HubError::InvalidParameter(
            "need at least one algorithm, run and step".into(),
        ));
    }
    let task_list = &suite.tasks[..tasks.min(suite.tasks.len())];
    if task_list.is_empty() {
        return Err(HubError::InvalidParameter("suite has no tasks".into()));
    }
    let gamma = task_list[0].hub.gamma;
    let cfg = RunConfig {
        name,
        domain: suite.domain,
        grids: &suite.grids,
        tasks: task_list.iter().map(|t| t.hub.to_toml()).collect::<Result<_>>()?,
        algorithms: algorithms.iter().map(|(l, a)| (l.as_str(), a)).collect(),
        runs,
        horizon,
        seed,
    };
    let hash = config_hash(&cfg);

    let mut seeds = Vec::new();
    let mut jobs = Vec::new();
    for (ti, task) in task_list.iter().enumerate() {
        for run in 0..runs {
            let s = episode_seed(seed, ti, run);
            seeds.push(EpisodeSeed {
                task: task.name.clone(),
                run,
                seed: s,
            });
            for (ai, _) in algorithms.iter().enumerate() {
                jobs.push((ai, ti, run, s));
            }
        }
    }
    let outputs = crate::parallel::map_ordered(jobs, |(ai, ti, run, s)| {
        let (label, alg) = &algorithms[ai];
        let task = &task_list[ti];
        let mut diagnostics = Vec::new();
        let log = run_episode_traced(alg, &task.hub, &suite.grids, horizon, s, |step, st| {
            if capture.diagnostics {
                diagnostics.push(DiagnosticsRow {
                    algorithm: label.clone(),
                    task: task.name.clone(),
                    run,
                    step,
                    action: format!("{:?}", st.action),
                    depth: st.depth,
                    belief_nodes: st.belief_nodes,
                    action_nodes: st.action_nodes,
                    invigorations: st.invigorations,
                    root_values: join(&st.root_values),
                    root_scores: join(&st.root_scores),
                    root_visits: join(&st.root_visits),
                });
            }
        });
        let out = log.map(|mut log| {
            log.algorithm = label.clone();
            for e in &log.events {
                log::info!("{label} {} run {run}: {e}", task.name);
            }
            JobOutput {
                summary: summarize(&log, &task.hub, &task.name, run, s),
                metrics: compute_metrics(&log, &task.hub),
                preferences: if capture.preferences {
                    preference_records(&task.hub, &log)
                } else {
                    Vec::new()
                },
                diagnostics,
            }
        });
        (ai, ti, run, out)
    });

    let mut per_alg: Vec<(Vec<EpisodeMetrics>, Vec<EpisodeSummary>)> = vec![(Vec::new(), Vec::new()); algorithms.len()];
    let mut failures = Vec::new();
    let mut captured = Captured::default();
    for (ai, ti, run, out) in outputs {
        match out {
            Ok(o) => {
                per_alg[ai].0.push(o.metrics);
                per_alg[ai].1.push(o.summary);
                captured
                    .preferences
                    .extend(o.preferences.into_iter().map(|p| (algorithms[ai].0.clone(), p)));
                captured.diagnostics.extend(o.diagnostics);
            }
            Err(e) => {
                let msg = format!("{} {} run {run}: {e}", algorithms[ai].0, task_list[ti].name);
                log::error!("episode aborted: {msg}");
                failures.push(msg);
            }
        }
    }
    let mut results = Vec::new();
    for ((label, _), (metrics, summaries)) in algorithms.iter().zip(per_alg) {
        if metrics.is_empty() {
            continue;
        }
        results.push(AlgorithmResult {
            label: label.clone(),
            series: aggregate(&metrics, SMOOTHING_WINDOW)?,
            summaries,
        });
    }
    Ok((
        SuiteResult {
            name: name.to_string(),
            horizon,
            gamma,
            smoothing_window: SMOOTHING_WINDOW,
            config_hash: hash,
            seeds,
            algorithms: results,
            failures,
        },
        captured,
    ))
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Labelled roster for [`run_suite`].
pub fn labelled(algorithms: Vec<AlgorithmSpec>) -> Vec<(String, AlgorithmSpec)> {
    algorithms.into_iter().map(|a| (a.label(), a)).collect()
}

/// ATS-specific with each rollout policy, labelled `ATS[policy]`.
pub fn rollout_roster(planner: &PlannerParams) -> Vec<(String, AlgorithmSpec)> {
    RolloutPolicy::ALL
        .iter()
        .map(|&p| {
            (
                format!("ATS[{}]", p.name()),
                AlgorithmSpec::AtsSpecific(PlannerParams {
                    rollout_policy: p,
                    ..planner.clone()
                }),
            )
        })
        .collect()
}

/// Label used for one cost multiplier in a sweep.
pub fn sweep_label(multiplier: f64) -> String {
    format!("cost x{multiplier}")
}

/// Reruns ATS-specific with query rewards `base_costs × m` for every
/// multiplier and merges the results under [`sweep_label`] names.
#[allow(clippy::too_many_arguments)]
pub fn run_cost_sweep(
    suite: &TaskSuite,
    multipliers: &[f64],
    base_costs: &[f64],
    planner: &PlannerParams,
    tasks: usize,
    runs: usize,
    horizon: usize,
    seed: u64,
) -> Result<SuiteResult> {
    if multipliers.is_empty() {
        return Err(HubError::InvalidParameter("no cost multipliers".into()));
    }
    let mut merged: Option<SuiteResult> = None;
    let mut hashes = Vec::new();
    for &m in multipliers {
        let costs: Vec<f64> = base_costs.iter().map(|c| c * m + 0.0).collect();
        let mut scaled = suite.clone();
        for task in &mut scaled.tasks {
            task.hub = task.hub.with_costs(&costs)?;
        }
        let alg = vec![(sweep_label(m), AlgorithmSpec::AtsSpecific(planner.clone()))];
        let (r, _) = run_suite(
            "cost-sweep",
            &scaled,
            &alg,
            tasks,
            runs,
            horizon,
            seed,
            Capture::default(),
        )?;
        hashes.push(r.config_hash.clone());
        match &mut merged {
            None => merged = Some(r),
            Some(acc) => {
                acc.algorithms.extend(r.algorithms);
                acc.failures.extend(r.failures);
            }
        }
    }
    let mut out = merged.unwrap();
    out.config_hash = config_hash(&hashes);
    Ok(out)
}

/// How a figure is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    /// Per-step mean with IQR band for every (algorithm, metric) pair.
    Lines { metrics: Vec<String> },
    /// Box plot of a final-episode quantity from the episode summaries.
    Boxes { field: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub id: String,
    pub title: String,
    pub y_label: String,
    /// Algorithms to include; all when empty.
    pub algorithms: Vec<String>,
    pub kind: FigureKind,
}

impl FigureSpec {
    fn lines(id: &str, title: &str, y_label: &str, metrics: &[&str], algorithms: &[&str]) -> Self {
        FigureSpec {
            id: id.into(),
            title: title.into(),
            y_label: y_label.into(),
            algorithms: algorithms.iter().map(|s| s.to_string()).collect(),
            kind: FigureKind::Lines {
                metrics: metrics.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    fn boxes(id: &str, title: &str, y_label: &str, field: &str) -> Self {
        FigureSpec {
            id: id.into(),
            title: title.into(),
            y_label: y_label.into(),
            algorithms: Vec::new(),
            kind: FigureKind::Boxes { field: field.into() },
        }
    }

    pub fn file_name(&self) -> String {
        format!("fig{}.svg", self.id)
    }
}

pub fn recommendation_figures(hub: &HubInstance) -> Vec<FigureSpec> {
    let pulls: Vec<String> = (0..hub.n_arms())
        .map(|k| action_metric(hub, EnvAction::Pull(k)))
        .collect();
    let pulls: Vec<&str> = pulls.iter().map(|s| s.as_str()).collect();
    vec![
        FigureSpec::lines(
            "3a",
            "Discounted cumulative reward",
            "reward",
            &[DISCOUNTED_REWARD],
            &[],
        ),
        FigureSpec::lines("3b", "Best arm pull frequency", "frequency", &[BEST_ARM], &[]),
        FigureSpec::lines("3c", "Teacher query frequency", "frequency", &[QUERY], &[]),
        FigureSpec::boxes("4a", "Final utility estimate L2 loss", "L2 loss", UTILITY_L2),
        FigureSpec::boxes("4b", "Final arm value estimate L2 loss", "L2 loss", ARM_VALUE_L2),
        FigureSpec::lines(
            "5a",
            "Specific vs general teacher selection",
            "reward",
            &[DISCOUNTED_REWARD],
            &["ATS-specific", "ATS-general"],
        ),
        FigureSpec::lines(
            "5b",
            "ATS-general arm pull frequencies",
            "frequency",
            &pulls,
            &["ATS-general"],
        ),
    ]
}

pub fn covid_figures(hub: &HubInstance) -> Vec<FigureSpec> {
    let actions: Vec<String> = (0..hub.n_arms())
        .map(|k| action_metric(hub, EnvAction::Pull(k)))
        .chain((0..hub.n_teachers()).map(|m| action_metric(hub, EnvAction::Query(m))))
        .collect();
    let actions: Vec<&str> = actions.iter().map(|s| s.as_str()).collect();
    vec![
        FigureSpec::lines(
            "7a",
            "Vaccine trial: discounted cumulative reward",
            "reward",
            &[DISCOUNTED_REWARD],
            &[],
        ),
        FigureSpec::lines(
            "7b",
            "Vaccine trial: ATS action frequencies",
            "frequency",
            &actions,
            &["ATS-specific"],
        ),
    ]
}

pub fn rollout_figures() -> Vec<FigureSpec> {
    vec![FigureSpec::lines(
        "8",
        "Rollout policy comparison",
        "reward",
        &[DISCOUNTED_REWARD],
        &[],
    )]
}

pub fn cost_figures() -> Vec<FigureSpec> {
    vec![
        FigureSpec::lines(
            "9a",
            "Cost sweep: discounted cumulative reward",
            "reward",
            &[DISCOUNTED_REWARD],
            &[],
        ),
        FigureSpec::lines("9b", "Cost sweep: teacher query frequency", "frequency", &[QUERY], &[]),
        FigureSpec::lines(
            "9c",
            "Cost sweep: best arm pull frequency",
            "frequency",
            &[BEST_ARM],
            &[],
        ),
    ]
}

/// `manifest.json` written next to exported results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub name: String,
    pub config_hash: String,
    pub horizon: usize,
    pub gamma: f64,
    pub smoothing_window: usize,
    pub algorithms: Vec<String>,
    pub seeds: Vec<EpisodeSeed>,
    pub failures: Vec<String>,
    pub metrics: Vec<String>,
    pub figures: Vec<FigureSpec>,
    pub files: Vec<String>,
}

pub const EPISODES_FILE: &str = "episodes.csv";
pub const EXPORT_MANIFEST: &str = "manifest.json";

fn csv_err(path: &Path, e: csv::Error) -> HubError {
    HubError::Config(format!("{}: {e}", path.display()))
}

fn write_metric_csv(path: &Path, rows: &[(&str, &SeriesStats)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["algorithm", "step", "mean", "q25", "q75"])
        .map_err(|e| csv_err(path, e))?;
    for (label, s) in rows {
        for t in 0..s.mean.len() {
            w.write_record([
                label.to_string(),
                t.to_string(),
                s.mean[t].to_string(),
                s.q25[t].to_string(),
                s.q75[t].to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| HubError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_episodes_csv(path: &Path, result: &SuiteResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "algorithm",
        "task",
        "run",
        "seed",
        "discounted_reward",
        "queries",
        "best_arm_last",
        "utility_l2",
        "arm_value_l2",
        "arm_freq_first",
        "arm_freq_last",
    ])
    .map_err(|e| csv_err(path, e))?;
    for a in &result.algorithms {
        for s in &a.summaries {
            w.write_record([
                a.label.clone(),
                s.task.clone(),
                s.run.to_string(),
                s.seed.to_string(),
                s.discounted_reward.to_string(),
                s.queries.to_string(),
                s.best_arm_last.to_string(),
                opt(s.utility_l2),
                opt(s.arm_value_l2),
                join(&s.arm_freq_first),
                join(&s.arm_freq_last),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| HubError::io(path, e))
}

/// Series keyed by metric, then algorithm, in first-seen order.
pub type SeriesTable = Vec<(String, Vec<(String, SeriesStats)>)>;

fn series_table(result: &SuiteResult) -> SeriesTable {
    let mut table: SeriesTable = Vec::new();
    for a in &result.algorithms {
        for (metric, stats) in &a.series {
            let pos = match table.iter().position(|(m, _)| m == metric) {
                Some(p) => p,
                None => {
                    table.push((metric.clone(), Vec::new()));
                    table.len() - 1
                }
            };
            table[pos].1.push((a.label.clone(), stats.clone()));
        }
    }
    table
}

/// Final-episode values per algorithm for a box figure.
pub type BoxData = BTreeMap<String, Vec<(String, Vec<f64>)>>;

fn render_figures(dir: &Path, figures: &[FigureSpec], table: &SeriesTable, boxes: &BoxData) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for fig in figures {
        let wanted = |label: &str| fig.algorithms.is_empty() || fig.algorithms.iter().any(|a| a == label);
        let svg = match &fig.kind {
            FigureKind::Lines { metrics } => {
                let mut lines = Vec::new();
                for metric in metrics {
                    let Some((_, rows)) = table.iter().find(|(m, _)| m == metric) else {
                        continue;
                    };
                    for (label, s) in rows.iter().filter(|(l, _)| wanted(l)) {
                        lines.push(Line {
                            label: if metrics.len() > 1 {
                                metric.clone()
                            } else {
                                label.clone()
                            },
                            y: s.mean.clone(),
                            lower: Some(s.q25.clone()),
                            upper: Some(s.q75.clone()),
                        });
                    }
                }
                line_chart(&fig.title, "step", &fig.y_label, &lines)
            }
            FigureKind::Boxes { field } => {
                let groups: Vec<(String, Vec<f64>)> = boxes
                    .get(field)
                    .map(|g| g.iter().filter(|(l, _)| wanted(l)).cloned().collect())
                    .unwrap_or_default();
                box_chart(&fig.title, &fig.y_label, &groups)
            }
        };
        let name = fig.file_name();
        let path = dir.join(&name);
        std::fs::write(&path, svg).map_err(|e| HubError::io(&path, e))?;
        files.push(name);
    }
    Ok(files)
}

fn box_data(result: &SuiteResult) -> BoxData {
    let mut out = BoxData::new();
    for (field, get) in [
        (
            UTILITY_L2,
            (|s: &EpisodeSummary| s.utility_l2) as fn(&EpisodeSummary) -> Option<f64>,
        ),
        (ARM_VALUE_L2, |s: &EpisodeSummary| s.arm_value_l2),
    ] {
        let groups: Vec<(String, Vec<f64>)> = result
            .algorithms
            .iter()
            .map(|a| {
                (
                    a.label.clone(),
                    a.summaries.iter().filter_map(get).collect::<Vec<f64>>(),
                )
            })
            .filter(|(_, v)| !v.is_empty())
            .collect();
        out.insert(field.to_string(), groups);
    }
    out
}

/// Writes one CSV per metric (`algorithm, step, mean, q25, q75`), the
/// per-episode summaries, one SVG per figure and a manifest.
pub fn export(result: &SuiteResult, dir: &Path, figures: &[FigureSpec]) -> Result<ExportManifest> {
    if result.algorithms.is_empty() || result.horizon == 0 {
        return Err(HubError::InsufficientData(format!("result '{}' is empty", result.name)));
    }
    std::fs::create_dir_all(dir).map_err(|e| HubError::io(dir, e))?;
    let table = series_table(result);
    let mut files = Vec::new();
    for (metric, rows) in &table {
        let name = format!("{metric}.csv");
        let rows: Vec<(&str, &SeriesStats)> = rows.iter().map(|(l, s)| (l.as_str(), s)).collect();
        write_metric_csv(&dir.join(&name), &rows)?;
        files.push(name);
    }
    write_episodes_csv(&dir.join(EPISODES_FILE), result)?;
    files.push(EPISODES_FILE.into());
    files.extend(render_figures(dir, figures, &table, &box_data(result))?);
    let manifest = ExportManifest {
        name: result.name.clone(),
        config_hash: result.config_hash.clone(),
        horizon: result.horizon,
        gamma: result.gamma,
        smoothing_window: result.smoothing_window,
        algorithms: result.algorithms.iter().map(|a| a.label.clone()).collect(),
        seeds: result.seeds.clone(),
        failures: result.failures.clone(),
        metrics: table.iter().map(|(m, _)| m.clone()).collect(),
        figures: figures.to_vec(),
        files,
    };
    let path = dir.join(EXPORT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HubError::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| HubError::io(&path, e))?;
    Ok(manifest)
}

/// Writes captured preference records as `teacher, item_i, item_j,
/// preferred`, optionally restricted to one algorithm.
pub fn export_preferences(captured: &Captured, path: &Path, algorithm: Option<&str>) -> Result<usize> {
    let records: Vec<PreferenceRecord> = captured
        .preferences
        .iter()
        .filter(|(a, _)| algorithm.is_none_or(|want| a == want))
        .map(|(_, r)| r.clone())
        .collect();
    write_preference_log(path, &records)?;
    Ok(records.len())
}

pub fn export_diagnostics(captured: &Captured, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HubError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in &captured.diagnostics {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HubError::io(path, e))
}

fn read_metric_csv(path: &Path) -> Result<Vec<(String, SeriesStats)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: Vec<(String, SeriesStats)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| HubError::Config(format!("{}: bad number in column {i}", path.display())))
        };
        let label = rec.get(0).unwrap_or("").to_string();
        let pos = match out.iter().position(|(l, _)| *l == label) {
            Some(p) => p,
            None => {
                out.push((label, SeriesStats::default()));
                out.len() - 1
            }
        };
        let s = &mut out[pos].1;
        s.mean.push(num(2)?);
        s.q25.push(num(3)?);
        s.q75.push(num(4)?);
    }
    Ok(out)
}

fn read_box_data(path: &Path) -> Result<BoxData> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut out = BoxData::new();
    let fields = [UTILITY_L2, ARM_VALUE_L2];
    let cols: Vec<Option<usize>> = fields.iter().map(|f| col(f)).collect();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let label = rec.get(0).unwrap_or("").to_string();
        for (field, c) in fields.iter().zip(&cols) {
            let Some(v) = c.and_then(|c| rec.get(c)).and_then(|s| s.parse::<f64>().ok()) else {
                continue;
            };
            let groups = out.entry(field.to_string()).or_default();
            match groups.iter_mut().find(|(l, _)| *l == label) {
                Some((_, vals)) => vals.push(v),
                None => groups.push((label.clone(), vec![v])),
            }
        }
    }
    Ok(out)
}

/// Re-renders every figure listed in an export directory's manifest from its
/// CSV files.
pub fn plot_from_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(EXPORT_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| HubError::io(&path, e))?;
    let manifest: ExportManifest =
        serde_json::from_str(&text).map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
    let mut table = SeriesTable::new();
    for metric in &manifest.metrics {
        table.push((metric.clone(), read_metric_csv(&dir.join(format!("{metric}.csv")))?));
    }
    let episodes = dir.join(EPISODES_FILE);
    let boxes = if episodes.exists() {
        read_box_data(&episodes)?
    } else {
        BoxData::new()
    };
    Ok(render_figures(dir, &manifest.figures, &table, &boxes)?
        .into_iter()
        .map(|f| dir.join(f))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::recommendation_suite_from_seed;
    use crate::episode::StepOutcome;
    use crate::hub::AgentObservation;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn suite() -> TaskSuite {
        recommendation_suite_from_seed(2, &Grids::recommendation(), 5).unwrap()
    }

    fn constant_log(hub: &HubInstance, action: EnvAction, n: usize) -> EpisodeLog {
        let mut log = EpisodeLog::new("const", hub.gamma);
        for _ in 0..n {
            log.push(
                action,
                StepOutcome {
                    observation: AgentObservation::ItemSample { arm: 0, item: 0 },
                    hidden_utility: Some(1.0),
                    reward: 1.0,
                },
                Some(hub.utility.values.clone()),
                Some(hub.arm_values()),
            );
        }
        log
    }

    #[test]
    fn algorithm_names_parse() {
        let s = suite();
        let p = Profile::smoke().planner_params(&s.grids, 0.99);
        assert_eq!(AlgorithmSpec::parse("naive[50]", &p).unwrap(), AlgorithmSpec::Naive(50));
        assert_eq!(
            AlgorithmSpec::parse("Naive:100", &p).unwrap(),
            AlgorithmSpec::Naive(100)
        );
        assert_eq!(
            AlgorithmSpec::parse("random-arms", &p).unwrap(),
            AlgorithmSpec::RandomArms
        );
        assert!(AlgorithmSpec::parse("greedy", &p).is_err());
        for a in default_roster(&p, 1000) {
            assert_eq!(AlgorithmSpec::parse(&a.label(), &p).unwrap(), a);
        }
        assert_eq!(default_roster(&p, 120).len(), 2 + 2 + 2);
    }

    #[test]
    fn random_baselines() {
        let s = suite();
        let hub = &s.tasks[0].hub;
        let log = run_episode(&AlgorithmSpec::RandomArms, hub, &s.grids, 500, 1).unwrap();
        assert_eq!(log.query_count(), 0);
        let log = run_episode(&AlgorithmSpec::Random, hub, &s.grids, 20_000, 1).unwrap();
        let freq = log.query_count() as f64 / 20_000.0;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
        assert_eq!(
            run_episode(&AlgorithmSpec::Random, hub, &s.grids, 300, 9).unwrap(),
            run_episode(&AlgorithmSpec::Random, hub, &s.grids, 300, 9).unwrap()
        );
    }

    #[test]
    fn metrics_on_constructed_logs() {
        let s = suite();
        let hub = &s.tasks[0].hub;
        let log = constant_log(hub, EnvAction::Pull(hub.best_arm()), 50);
        let m = compute_metrics(&log, hub);
        assert!(m.get(BEST_ARM).unwrap().iter().all(|&v| v == 1.0));
        assert!(m.get(UTILITY_L2).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.get(ARM_VALUE_L2).unwrap().iter().all(|&v| v == 0.0));
        let cum = m.get(DISCOUNTED_REWARD).unwrap();
        assert!((cum[49] - log.recompute_return()).abs() < 1e-9);

        let random = run_episode(&AlgorithmSpec::Random, hub, &s.grids, 50, 3).unwrap();
        let m = compute_metrics(&random, hub);
        assert!(m.get(UTILITY_L2).is_none());
    }

    #[test]
    fn aggregation_examples() {
        let one = EpisodeMetrics {
            series: vec![("x".into(), (0..30).map(|t| t as f64).collect())],
        };
        let agg = aggregate(std::slice::from_ref(&one), 10).unwrap();
        assert_eq!(agg[0].1.mean, smooth(one.get("x").unwrap(), 10));

        let a = EpisodeMetrics {
            series: vec![("x".into(), vec![2.0; 20])],
        };
        let b = EpisodeMetrics {
            series: vec![("x".into(), vec![6.0; 20])],
        };
        let agg = aggregate(std::slice::from_ref(&a), 10).unwrap();
        assert!(agg[0].1.mean.iter().all(|&v| v == 2.0));
        let agg = aggregate(&[a, b], 10).unwrap();
        assert!(agg[0].1.mean.iter().all(|&v| v == 4.0));
        assert!(aggregate(&[], 10).is_err());
    }

    #[test]
    fn smoothing_skips_missing_values() {
        let v = [f64::NAN, f64::NAN, 3.0, 5.0];
        let s = smooth(&v, 2);
        assert!(s[0].is_nan() && s[1].is_nan());
        assert_eq!(&s[2..], &[3.0, 4.0]);
    }

    #[test]
    fn suite_run_and_export_are_deterministic() {
        let s = suite();
        let profile = Profile::smoke();
        let planner = profile.planner_params(&s.grids, 0.99);
        let roster = labelled(default_roster(&planner, 60));
        let run = || {
            run_suite("test", &s, &roster, 2, 1, 60, 42, Capture::default())
                .unwrap()
                .0
        };
        let r1 = run();
        let r2 = run();
        // NaN marks steps without an estimate, so compare renderings
        assert_eq!(format!("{r1:?}"), format!("{r2:?}"));
        assert!(r1.failures.is_empty());
        assert_eq!(r1.algorithms.len(), roster.len());
        for a in &r1.algorithms {
            assert_eq!(a.summaries.len(), 2);
            assert_eq!(a.series(DISCOUNTED_REWARD).unwrap().mean.len(), 60);
        }

        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let figs = recommendation_figures(&s.tasks[0].hub);
        let m = export(&r1, d1.path(), &figs).unwrap();
        export(&r2, d2.path(), &figs).unwrap();
        for f in &m.files {
            assert_eq!(
                std::fs::read(d1.path().join(f)).unwrap(),
                std::fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let text = std::fs::read_to_string(d1.path().join("best_arm.csv")).unwrap();
        assert!(text.starts_with("algorithm,step,mean,q25,q75\n"));
        assert_eq!(text.lines().count(), 1 + roster.len() * 60);
        assert!(m.files.contains(&"fig4a.svg".to_string()));

        // plots regenerate identically from the CSVs
        let before = std::fs::read(d1.path().join("fig3a.svg")).unwrap();
        plot_from_dir(d1.path()).unwrap();
        assert_eq!(std::fs::read(d1.path().join("fig3a.svg")).unwrap(), before);
    }

    #[test]
    fn empty_result_is_rejected_without_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let empty = SuiteResult {
            name: "empty".into(),
            horizon: 10,
            gamma: 0.9,
            smoothing_window: 10,
            config_hash: String::new(),
            seeds: vec![],
            algorithms: vec![],
            failures: vec![],
        };
        assert!(export(&empty, &out, &[]).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn zero_multiplier_matches_zero_cost_suite() {
        let s = suite();
        let planner = Profile::smoke().planner_params(&s.grids, 0.99);
        let sweep = run_cost_sweep(&s, &[0.0], &SWEEP_BASE_COSTS, &planner, 1, 1, 40, 3).unwrap();
        let alg = vec![(sweep_label(0.0), AlgorithmSpec::AtsSpecific(planner))];
        let (plain, _) = run_suite("x", &s, &alg, 1, 1, 40, 3, Capture::default()).unwrap();
        assert_eq!(format!("{:?}", sweep.algorithms), format!("{:?}", plain.algorithms));
    }

    #[test]
    fn captured_preferences_and_diagnostics() {
        let s = suite();
        let planner = Profile::smoke().planner_params(&s.grids, 0.99);
        let roster = labelled(vec![AlgorithmSpec::AtsSpecific(planner), AlgorithmSpec::Random]);
        let cap = Capture {
            preferences: true,
            diagnostics: true,
        };
        let (r, c) = run_suite("x", &s, &roster, 1, 1, 30, 1, cap).unwrap();
        assert_eq!(c.diagnostics.len(), 30);
        let queries: usize = r.algorithms.iter().flat_map(|a| &a.summaries).map(|s| s.queries).sum();
        assert_eq!(c.preferences.len(), queries);
        let dir = tempfile::tempdir().unwrap();
        let n = export_preferences(&c, &dir.path().join("p.csv"), Some("Random")).unwrap();
        assert_eq!(n, r.algorithm("Random").unwrap().summaries[0].queries);
        export_diagnostics(&c, &dir.path().join("d.csv")).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn discounted_reward_within_bounds(seed in 0u64..1000, alg in 0usize..2) {
            let s = suite();
            let hub = &s.tasks[0].hub;
            let a = [AlgorithmSpec::Random, AlgorithmSpec::RandomArms][alg].clone();
            let log = run_episode(&a, hub, &s.grids, 200, seed).unwrap();
            let g = (1.0 - hub.gamma.powi(200)) / (1.0 - hub.gamma);
            let lo = hub.teachers.iter().map(|t| t.cost).fold(hub.utility.u_min, f64::min) * g;
            let hi = hub.utility.u_max * g;
            prop_assert!(log.discounted_return() >= lo - 1e-9 && log.discounted_return() <= hi + 1e-9);
            prop_assert!((log.recompute_return() - log.discounted_return()).abs() < 1e-9);
        }

        #[test]
        fn smoothing_preserves_mean(values in proptest::collection::vec(0.0f64..1.0, 1000)) {
            let s = smooth(&values, 10);
            let m0 = values.iter().sum::<f64>() / 1000.0;
            let m1 = s.iter().sum::<f64>() / 1000.0;
            // only the last nine values are under-counted
            prop_assert!((m0 - m1).abs() <= 0.01 + 1e-12);
            assert_abs_diff_eq!(s[999], values[990..].iter().sum::<f64>() / 10.0, epsilon = 1e-12);
        }
    }
}

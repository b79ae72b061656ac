//! WebAssembly bindings behind `www/index.html`.
//!
//! Every export takes and returns plain numbers or JSON strings so the page
//! needs no generated glue beyond `wasm-bindgen`'s own.

use hub_core::bench::{self, AlgorithmSpec, Profile};
use hub_core::beta::beta_from_sensitivity;
use hub_core::domains::{covid_suite, recommendation_suite_from_seed, CovidConfig, Domain, TaskSuite};
use hub_core::episode::EnvAction;
use hub_core::hub::preference_probability;
use hub_core::pomdp::Grids;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub beta: f64,
    pub delta: Vec<f64>,
    pub probability: Vec<f64>,
}

/// Preference probability as a function of the utility gap, one curve per
/// rationality.
pub fn curves(betas: &[f64], max_delta: f64, points: usize) -> Vec<Curve> {
    let points = points.max(2);
    let delta: Vec<f64> = (0..points)
        .map(|k| -max_delta + 2.0 * max_delta * k as f64 / (points - 1) as f64)
        .collect();
    betas
        .iter()
        .map(|&beta| Curve {
            beta,
            probability: delta.iter().map(|&d| preference_probability(d, 0.0, beta)).collect(),
            delta: delta.clone(),
        })
        .collect()
}

#[wasm_bindgen]
pub fn preference_curves(betas: &[f64], max_delta: f64, points: usize) -> String {
    serde_json::to_string(&curves(betas, max_delta, points)).expect("curves serialize")
}

/// Rationality of a test with the given sensitivity on a utility range.
#[wasm_bindgen]
pub fn sensitivity_to_beta(sensitivity: f64, u_min: f64, u_max: f64) -> Result<f64, JsError> {
    beta_from_sensitivity(sensitivity, u_min, u_max).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub action: String,
    pub reward: f64,
    pub cumulative: f64,
    pub arm_values: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub algorithm: String,
    pub arms: Vec<String>,
    pub true_arm_values: Vec<f64>,
    pub best_arm: usize,
    pub steps: Vec<TraceStep>,
}

fn demo_suite(domain: &str, task_seed: u64) -> hub_core::Result<TaskSuite> {
    match domain.parse::<Domain>()? {
        Domain::Recommendation => recommendation_suite_from_seed(1, &Grids::recommendation(), task_seed),
        Domain::Covid => covid_suite(&CovidConfig::default()),
    }
}

/// Runs one episode of `algorithm` on a single task and records each step.
pub fn trace(
    domain: &str,
    algorithm: &str,
    task_seed: u64,
    seed: u64,
    horizon: usize,
    sims: usize,
) -> hub_core::Result<Trace> {
    let suite = demo_suite(domain, task_seed)?;
    let hub = &suite.tasks[0].hub;
    let mut planner = Profile::smoke().planner_params(&suite.grids, hub.gamma);
    planner.simulations_per_step = sims.max(1);
    let alg = AlgorithmSpec::parse(algorithm, &planner)?;
    let log = bench::run_episode(&alg, hub, &suite.grids, horizon, seed)?;
    let steps = log
        .rows
        .iter()
        .map(|r| TraceStep {
            t: r.t,
            action: match r.action {
                EnvAction::Pull(a) => hub.arm_label(a),
                EnvAction::Query(m) => format!("ask {}", hub.teacher_label(m)),
            },
            reward: r.reward,
            cumulative: r.cumulative_discounted_reward,
            arm_values: r.arm_value_estimate.clone(),
        })
        .collect();
    Ok(Trace {
        algorithm: alg.label(),
        arms: (0..hub.n_arms()).map(|a| hub.arm_label(a)).collect(),
        true_arm_values: hub.arm_values(),
        best_arm: hub.best_arm(),
        steps,
    })
}

#[wasm_bindgen]
pub fn episode_trace(
    domain: &str,
    algorithm: &str,
    task_seed: u64,
    seed: u64,
    horizon: usize,
    sims: usize,
) -> Result<String, JsError> {
    let t = trace(domain, algorithm, task_seed, seed, horizon, sims).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(serde_json::to_string(&t).expect("trace serializes"))
}

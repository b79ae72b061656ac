//! The two experimental domains: generated paper-recommendation tasks and a
//! COVID-19 vaccine-testing instance.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beta::beta_from_sensitivity;
use crate::error::{HubError, Result};
use crate::hub::{validate_hub, ArmDistribution, HubInstance, QueryProfile, Teacher, UtilityFunction, Violation};
use crate::pomdp::Grids;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Recommendation,
    Covid,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Recommendation => "recommendation",
            Domain::Covid => "covid",
        }
    }

    pub fn default_grids(self) -> Grids {
        match self {
            Domain::Recommendation => Grids::recommendation(),
            Domain::Covid => Grids::covid(),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recommendation" | "rec" => Ok(Domain::Recommendation),
            "covid" => Ok(Domain::Covid),
            _ => Err(HubError::InvalidParameter(format!("unknown domain '{s}'"))),
        }
    }
}

pub const REC_ITEMS: [&str; 3] = ["Application", "Benchmark", "Theory"];
pub const REC_ARMS: [&str; 3] = ["ICLR", "ICML", "AAAI"];
pub const REC_BETAS: [f64; 3] = [0.0, 0.01, 50.0];
pub const REC_GAMMA: f64 = 0.99;

/// Rejection attempts allowed per task before giving up.
pub const GENERATION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    /// Seed the task was drawn from; redrawing with it reproduces the task.
    pub seed: u64,
    pub hub: HubInstance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub domain: Domain,
    pub generator_seed: Option<u64>,
    pub grids: Grids,
    pub tasks: Vec<Task>,
}

fn recommendation_teachers() -> Vec<Teacher> {
    ["T1", "T2", "T3"]
        .iter()
        .zip(REC_BETAS)
        .map(|(name, beta)| Teacher::new(*name, beta, 0.0).expect("valid teacher"))
        .collect()
}

/// Violations of the recommendation-task constraints: arm 0 strictly best,
/// arm 1 at least as good as arm 2, distinct arms, no deterministic arm.
pub fn recommendation_violations(hub: &HubInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = hub.arm_values();
    if v.len() != 3 {
        out.push(Violation::new("arms", "recommendation tasks have exactly three arms"));
        return out;
    }
    if !(v[0] > v[1]) {
        out.push(Violation::new(
            "arms",
            format!("first arm must be strictly best ({} vs {})", v[0], v[1]),
        ));
    }
    if !(v[1] >= v[2]) {
        out.push(Violation::new(
            "arms",
            format!("second arm must not trail the third ({} vs {})", v[1], v[2]),
        ));
    }
    for a in 0..hub.arms.len() {
        for b in a + 1..hub.arms.len() {
            if hub.arms[a] == hub.arms[b] {
                out.push(Violation::new(format!("arms[{a}]"), format!("identical to arms[{b}]")));
            }
        }
        if hub.arms[a].probs.contains(&1.0) {
            out.push(Violation::new(
                format!("arms[{a}]"),
                "arm distribution is deterministic",
            ));
        }
    }
    out
}

fn grid_violations(hub: &HubInstance, grids: &Grids) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Some(u) = hub.utility.values.iter().find(|&&u| !grids.utility_levels.contains(u)) {
        out.push(Violation::new("utility", format!("value {u} is not a grid level")));
    }
    for (k, d) in hub.arms.iter().enumerate() {
        if !grids.simplex_resolution.contains(&d.probs) {
            out.push(Violation::new(format!("arms[{k}]"), "not on the simplex grid"));
        }
    }
    out
}

/// Draws one valid task from `seed` by rejection sampling on the grids.
pub fn sample_recommendation_task(grids: &Grids, seed: u64) -> Result<HubInstance> {
    let mut rng = crate::seeded_rng(seed);
    let levels = grids.utility_levels.levels();
    let points = grids.simplex_resolution.points(REC_ITEMS.len());
    let (u_min, u_max) = (grids.utility_levels.u_min(), grids.utility_levels.u_max());
    for _ in 0..GENERATION_BUDGET {
        let utility: Vec<f64> = (0..REC_ITEMS.len())
            .map(|_| levels[rng.gen_range(0..levels.len())])
            .collect();
        let arms: Vec<ArmDistribution> = (0..REC_ARMS.len())
            .map(|_| ArmDistribution {
                probs: points[rng.gen_range(0..points.len())].clone(),
            })
            .collect();
        let hub = HubInstance {
            items: REC_ITEMS.iter().map(|s| s.to_string()).collect(),
            utility: UtilityFunction::new(utility, u_min, u_max)?,
            arm_names: REC_ARMS.iter().map(|s| s.to_string()).collect(),
            arms,
            teachers: recommendation_teachers(),
            query_profile: QueryProfile::uniform(REC_ITEMS.len()),
            gamma: REC_GAMMA,
        };
        if recommendation_violations(&hub).is_empty() {
            return hub.validated();
        }
    }
    Err(HubError::GeneratorExhausted {
        attempts: GENERATION_BUDGET,
        found: 0,
        wanted: 1,
    })
}

fn task_key(hub: &HubInstance) -> Vec<u64> {
    hub.utility
        .values
        .iter()
        .chain(hub.arms.iter().flat_map(|a| a.probs.iter()))
        .map(|x| x.to_bits())
        .collect()
}

/// Generates `n_tasks` distinct recommendation tasks. Each task gets its own
/// seed drawn from `rng`, so any task can be regenerated on its own.
pub fn generate_recommendation_suite<R: Rng + ?Sized>(n_tasks: usize, grids: &Grids, rng: &mut R) -> Result<TaskSuite> {
    let mut tasks = Vec::with_capacity(n_tasks);
    let mut seen = HashSet::new();
    let mut attempts = 0u64;
    while tasks.len() < n_tasks {
        attempts += 1;
        if attempts > GENERATION_BUDGET {
            return Err(HubError::GeneratorExhausted {
                attempts,
                found: tasks.len(),
                wanted: n_tasks,
            });
        }
        let seed: u64 = rng.gen();
        let hub = sample_recommendation_task(grids, seed)?;
        if seen.insert(task_key(&hub)) {
            tasks.push(Task {
                name: format!("task_{:02}", tasks.len()),
                seed,
                hub,
            });
        }
    }
    Ok(TaskSuite {
        domain: Domain::Recommendation,
        generator_seed: None,
        grids: grids.clone(),
        tasks,
    })
}

/// Suite from a fixed seed, recorded in the manifest.
pub fn recommendation_suite_from_seed(n_tasks: usize, grids: &Grids, seed: u64) -> Result<TaskSuite> {
    let mut suite = generate_recommendation_suite(n_tasks, grids, &mut crate::seeded_rng(seed))?;
    suite.generator_seed = Some(seed);
    Ok(suite)
}

/// Settings for the vaccine-testing instance. The defaults for
/// sensitivities, symptom utilities and vaccine outcome distributions are
/// estimates and are meant to be replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovidConfig {
    /// Test names in teacher order.
    pub tests: Vec<String>,
    pub sensitivities: BTreeMap<String, f64>,
    pub dollar_costs: BTreeMap<String, f64>,
    pub cost_scale: f64,
    pub symptoms: Vec<String>,
    pub symptom_utilities: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub arm_names: Vec<String>,
    pub arm_dists: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl Default for CovidConfig {
    fn default() -> Self {
        let tests = ["survey", "antigen", "rt-pcr"];
        CovidConfig {
            tests: tests.iter().map(|s| s.to_string()).collect(),
            sensitivities: tests.iter().map(|s| s.to_string()).zip([0.70, 0.85, 0.95]).collect(),
            dollar_costs: tests.iter().map(|s| s.to_string()).zip([1.20, 42.0, 62.0]).collect(),
            cost_scale: 0.05,
            symptoms: ["None", "Cough", "Fever"].iter().map(|s| s.to_string()).collect(),
            symptom_utilities: vec![9.0, 4.0, 0.0],
            u_min: 0.0,
            u_max: 9.0,
            arm_names: ["Vaccine A", "Vaccine B", "No Vaccine"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            arm_dists: vec![vec![0.75, 0.25, 0.0], vec![0.5, 0.25, 0.25], vec![0.25, 0.25, 0.5]],
            gamma: 0.99,
        }
    }
}

impl CovidConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HubError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HubError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HubError::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Builds the vaccine-testing hub: symptoms are items, vaccines are arms and
/// diagnostic tests are teachers whose rationality comes from their
/// sensitivity and whose query reward is the scaled negative dollar cost.
pub fn build_covid_instance(config: &CovidConfig) -> Result<HubInstance> {
    if !(config.cost_scale > 0.0) {
        return Err(HubError::InvalidParameter(format!(
            "cost_scale must be positive, got {}",
            config.cost_scale
        )));
    }
    let mut teachers = Vec::with_capacity(config.tests.len());
    for test in &config.tests {
        let s = *config
            .sensitivities
            .get(test)
            .ok_or_else(|| HubError::Config(format!("missing sensitivity for test '{test}'")))?;
        let cost = *config
            .dollar_costs
            .get(test)
            .ok_or_else(|| HubError::Config(format!("missing dollar cost for test '{test}'")))?;
        if !(cost > 0.0) {
            return Err(HubError::Config(format!(
                "dollar cost of '{test}' must be positive, got {cost}"
            )));
        }
        let beta = beta_from_sensitivity(s, config.u_min, config.u_max)?;
        teachers.push(Teacher::new(test.clone(), beta, -cost * config.cost_scale)?);
    }
    HubInstance {
        items: config.symptoms.clone(),
        utility: UtilityFunction::new(config.symptom_utilities.clone(), config.u_min, config.u_max)?,
        arm_names: config.arm_names.clone(),
        arms: config
            .arm_dists
            .iter()
            .map(|d| ArmDistribution::new(d.clone()))
            .collect::<Result<_>>()?,
        teachers,
        query_profile: QueryProfile::uniform(config.symptoms.len()),
        gamma: config.gamma,
    }
    .validated()
}

pub fn covid_suite(config: &CovidConfig) -> Result<TaskSuite> {
    Ok(TaskSuite {
        domain: Domain::Covid,
        generator_seed: None,
        grids: Grids::covid(),
        tasks: vec![Task {
            name: "covid".into(),
            seed: 0,
            hub: build_covid_instance(config)?,
        }],
    })
}

/// Every violation in the suite, with fields prefixed by the task name.
pub fn validate_suite(suite: &TaskSuite) -> Vec<Violation> {
    let per_task = crate::parallel::map_ordered(suite.tasks.iter().collect(), |task: &Task| {
        let mut v = validate_hub(&task.hub);
        v.extend(grid_violations(&task.hub, &suite.grids));
        if suite.domain == Domain::Recommendation {
            v.extend(recommendation_violations(&task.hub));
        }
        v.into_iter()
            .map(|x| Violation::new(format!("{}.{}", task.name, x.field), x.rule))
            .collect::<Vec<_>>()
    });
    per_task.into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub name: String,
    pub file: String,
    pub seed: u64,
    pub violations: Vec<String>,
}

/// `manifest.json` of a suite directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub domain: Domain,
    pub generator_seed: Option<u64>,
    pub grids: Grids,
    pub constraint_check: String,
    pub tasks: Vec<ManifestTask>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl TaskSuite {
    /// Writes one TOML file per task plus a manifest with seeds and
    /// constraint-check results.
    pub fn save(&self, dir: &Path) -> Result<SuiteManifest> {
        std::fs::create_dir_all(dir).map_err(|e| HubError::io(dir, e))?;
        let violations = validate_suite(self);
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for task in &self.tasks {
            let file = format!("{}.toml", task.name);
            task.hub.save(&dir.join(&file))?;
            let prefix = format!("{}.", task.name);
            tasks.push(ManifestTask {
                name: task.name.clone(),
                file,
                seed: task.seed,
                violations: violations
                    .iter()
                    .filter(|v| v.field.starts_with(&prefix))
                    .map(|v| v.to_string())
                    .collect(),
            });
        }
        let manifest = SuiteManifest {
            domain: self.domain,
            generator_seed: self.generator_seed,
            grids: self.grids.clone(),
            constraint_check: if violations.is_empty() {
                "pass".into()
            } else {
                "fail".into()
            },
            tasks,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| HubError::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| HubError::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HubError::io(&path, e))?;
        let manifest: SuiteManifest =
            serde_json::from_str(&text).map_err(|e| HubError::Config(format!("{}: {e}", path.display())))?;
        let tasks = manifest
            .tasks
            .iter()
            .map(|t| {
                Ok(Task {
                    name: t.name.clone(),
                    seed: t.seed,
                    hub: HubInstance::load(&dir.join(&t.file))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TaskSuite {
            domain: manifest.domain,
            generator_seed: manifest.generator_seed,
            grids: manifest.grids,
            tasks,
        })
    }
}

//! The hidden utility bandit environment.
//!
//! A hub has `N` items with hidden utilities, `K` arms that each return a
//! random item, and `M` Boltzmann-rational teachers that answer pairwise
//! preference queries at a cost. Pulling an arm yields utility the agent
//! never sees; querying a teacher yields an observable preference and the
//! (non-positive) query reward.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HubError, Result};

/// Dense index of an item within a [`HubInstance`].
pub type ItemId = usize;

/// Tolerance used when checking that probabilities sum to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Probability that a teacher with rationality `beta` prefers an item of
/// utility `u_i` over one of utility `u_j`.
///
/// Evaluated with the larger exponent subtracted so that large `beta` or
/// large utilities never overflow.
#[inline]
pub fn preference_probability(u_i: f64, u_j: f64, beta: f64) -> f64 {
    let a = beta * u_i;
    let b = beta * u_j;
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    ea / (ea + eb)
}

/// Boltzmann-rational preference `Pr(i ≻ j; beta, u)`.
pub fn boltzmann_preference(i: ItemId, j: ItemId, beta: f64, u: &UtilityFunction) -> Result<f64> {
    if i == j {
        return Err(HubError::InvalidParameter(format!(
            "preference query needs two distinct items, got {i} twice"
        )));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(HubError::InvalidParameter(format!(
            "rationality must be finite and non-negative, got {beta}"
        )));
    }
    let u_i = u.get(i)?;
    let u_j = u.get(j)?;
    if !u_i.is_finite() || !u_j.is_finite() {
        return Err(HubError::InvalidParameter(format!(
            "utilities must be finite, got {u_i} and {u_j}"
        )));
    }
    Ok(preference_probability(u_i, u_j, beta))
}

/// Draws an index from a categorical distribution given by `probs`.
///
/// `probs` is assumed normalized; any leftover mass from rounding goes to
/// the last index with non-zero probability.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (idx, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = idx;
            if x < acc {
                return idx;
            }
        }
    }
    last
}

/// Hidden utility of every item, together with its declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityFunction {
    pub values: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
}

impl UtilityFunction {
    pub fn new(values: Vec<f64>, u_min: f64, u_max: f64) -> Result<Self> {
        let u = UtilityFunction { values, u_min, u_max };
        let mut violations = Vec::new();
        u.check("utility", &mut violations);
        match violations.first() {
            None => Ok(u),
            Some(v) => Err(HubError::InvalidParameter(v.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, item: ItemId) -> Result<f64> {
        self.values.get(item).copied().ok_or(HubError::IndexOutOfRange {
            kind: "item",
            index: item,
            len: self.values.len(),
        })
    }

    pub fn range(&self) -> f64 {
        self.u_max - self.u_min
    }

    fn check(&self, field: &str, out: &mut Vec<Violation>) {
        if !(self.u_min.is_finite() && self.u_max.is_finite()) || self.u_min >= self.u_max {
            out.push(Violation::new(
                field,
                format!("u_min ({}) must be below u_max ({})", self.u_min, self.u_max),
            ));
        }
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || v < self.u_min || v > self.u_max {
                out.push(Violation::new(
                    format!("{field}.values[{i}]"),
                    format!("{v} outside [{}, {}]", self.u_min, self.u_max),
                ));
            }
        }
    }
}

/// Probability of an arm returning each item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmDistribution {
    pub probs: Vec<f64>,
}

impl ArmDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let d = ArmDistribution { probs };
        let mut violations = Vec::new();
        d.check("arm", &mut violations);
        match violations.first() {
            None => Ok(d),
            Some(v) => Err(HubError::InvalidParameter(v.to_string())),
        }
    }

    pub fn point_mass(n_items: usize, item: ItemId) -> Self {
        let mut probs = vec![0.0; n_items];
        probs[item] = 1.0;
        ArmDistribution { probs }
    }

    pub fn uniform(n_items: usize) -> Self {
        ArmDistribution {
            probs: vec![1.0 / n_items as f64; n_items],
        }
    }

    pub fn prob(&self, item: ItemId) -> f64 {
        self.probs.get(item).copied().unwrap_or(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ItemId {
        sample_categorical(&self.probs, rng)
    }

    fn check(&self, field: &str, out: &mut Vec<Violation>) {
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            out.push(Violation::new(field, "probabilities must be finite and non-negative"));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            out.push(Violation::new(field, format!("probabilities sum to {sum}, not 1")));
        }
    }
}

/// A Boltzmann-rational teacher. `cost` is the (non-positive) reward
/// received for querying it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    #[serde(default)]
    pub name: String,
    pub beta: f64,
    pub cost: f64,
}

impl Teacher {
    pub fn new(name: impl Into<String>, beta: f64, cost: f64) -> Result<Self> {
        let t = Teacher {
            name: name.into(),
            beta,
            cost,
        };
        let mut violations = Vec::new();
        t.check("teacher", &mut violations);
        match violations.first() {
            None => Ok(t),
            Some(v) => Err(HubError::InvalidParameter(v.to_string())),
        }
    }

    fn check(&self, field: &str, out: &mut Vec<Violation>) {
        if !self.beta.is_finite() || self.beta < 0.0 {
            out.push(Violation::new(
                format!("{field}.beta"),
                format!("rationality {} must be finite and non-negative", self.beta),
            ));
        }
        if !self.cost.is_finite() || self.cost > 0.0 {
            out.push(Violation::new(
                format!("{field}.cost"),
                format!("query reward {} must be finite and non-positive", self.cost),
            ));
        }
    }
}

/// Probability of one unordered item pair being presented to a teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProb {
    pub i: ItemId,
    pub j: ItemId,
    pub prob: f64,
}

/// Distribution over unordered item pairs shown to a queried teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryProfile {
    pub pairs: Vec<PairProb>,
}

impl QueryProfile {
    /// Uniform over all `n choose 2` pairs, ordered lexicographically.
    pub fn uniform(n_items: usize) -> Self {
        let count = n_items * n_items.saturating_sub(1) / 2;
        let p = 1.0 / count as f64;
        let mut pairs = Vec::with_capacity(count);
        for i in 0..n_items {
            for j in i + 1..n_items {
                pairs.push(PairProb { i, j, prob: p });
            }
        }
        QueryProfile { pairs }
    }

    /// Probability of the unordered pair `{i, j}`.
    pub fn pair_prob(&self, i: ItemId, j: ItemId) -> f64 {
        self.pairs
            .iter()
            .find(|p| (p.i == i && p.j == j) || (p.i == j && p.j == i))
            .map_or(0.0, |p| p.prob)
    }

    /// Probability of seeing the pair presented as `(i, j)`; presentation
    /// order is a fair coin, so this is half the unordered probability.
    pub fn presentation_prob(&self, i: ItemId, j: ItemId) -> f64 {
        if i == j {
            0.0
        } else {
            0.5 * self.pair_prob(i, j)
        }
    }

    /// Samples a pair and a uniformly random presentation order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (ItemId, ItemId) {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.pairs.last().expect("query profile is non-empty");
        for p in &self.pairs {
            if p.prob > 0.0 {
                acc += p.prob;
                chosen = p;
                if x < acc {
                    break;
                }
            }
        }
        if rng.gen::<bool>() {
            (chosen.i, chosen.j)
        } else {
            (chosen.j, chosen.i)
        }
    }

    fn check(&self, n_items: usize, out: &mut Vec<Violation>) {
        if self.pairs.is_empty() {
            out.push(Violation::new("query_profile", "no pairs"));
        }
        let mut seen = Vec::new();
        for (k, p) in self.pairs.iter().enumerate() {
            let field = format!("query_profile[{k}]");
            if p.i == p.j {
                out.push(Violation::new(&field, "self-pair"));
            }
            if p.i >= n_items || p.j >= n_items {
                out.push(Violation::new(&field, "item index out of range"));
            }
            if !p.prob.is_finite() || p.prob < 0.0 {
                out.push(Violation::new(&field, "probability must be non-negative"));
            }
            let key = (p.i.min(p.j), p.i.max(p.j));
            if seen.contains(&key) {
                out.push(Violation::new(&field, "duplicate pair"));
            }
            seen.push(key);
        }
        let sum: f64 = self.pairs.iter().map(|p| p.prob).sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            out.push(Violation::new(
                "query_profile",
                format!("probabilities sum to {sum}, not 1"),
            ));
        }
    }
}

/// What the agent sees after acting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentObservation {
    ItemSample {
        arm: usize,
        item: ItemId,
    },
    PreferenceSample {
        teacher: usize,
        pair: (ItemId, ItemId),
        preferred_first: bool,
    },
}

impl fmt::Display for AgentObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentObservation::ItemSample { item, .. } => write!(f, "item:{item}"),
            AgentObservation::PreferenceSample {
                pair: (i, j),
                preferred_first,
                ..
            } => {
                if *preferred_first {
                    write!(f, "pref:{i}>{j}")
                } else {
                    write!(f, "pref:{j}>{i}")
                }
            }
        }
    }
}

/// One broken invariant found by [`validate_hub`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// A full hidden utility bandit, including the ground truth the agent
/// cannot see.
#[derive(Debug, Clone, PartialEq)]
pub struct HubInstance {
    pub items: Vec<String>,
    pub utility: UtilityFunction,
    pub arm_names: Vec<String>,
    pub arms: Vec<ArmDistribution>,
    pub teachers: Vec<Teacher>,
    pub query_profile: QueryProfile,
    pub gamma: f64,
}

impl HubInstance {
    /// Validates and returns the instance, or an error listing every
    /// violation.
    pub fn validated(self) -> Result<Self> {
        let violations = validate_hub(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(HubError::Config(msg.join("; ")))
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn n_teachers(&self) -> usize {
        self.teachers.len()
    }

    /// True expected utility of every arm.
    pub fn arm_values(&self) -> Vec<f64> {
        self.arms.iter().map(|d| dot(&self.utility.values, &d.probs)).collect()
    }

    /// Index of the arm with the highest true expected utility (lowest index
    /// on ties).
    pub fn best_arm(&self) -> usize {
        argmax(&self.arm_values())
    }

    pub fn arm_label(&self, arm: usize) -> String {
        self.arm_names
            .get(arm)
            .filter(|s| !s.is_empty())
            .cloned()
            .unwrap_or_else(|| format!("arm{arm}"))
    }

    pub fn teacher_label(&self, teacher: usize) -> String {
        self.teachers
            .get(teacher)
            .map(|t| t.name.clone())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("teacher{teacher}"))
    }

    /// Returns a copy with every teacher's query reward replaced.
    pub fn with_costs(&self, costs: &[f64]) -> Result<Self> {
        if costs.len() != self.teachers.len() {
            return Err(HubError::InvalidParameter(format!(
                "{} costs given for {} teachers",
                costs.len(),
                self.teachers.len()
            )));
        }
        let mut hub = self.clone();
        for (t, &c) in hub.teachers.iter_mut().zip(costs) {
            t.cost = c;
        }
        hub.validated()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&HubConfig::from(self)).map_err(|e| HubError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: HubConfig = toml::from_str(text).map_err(|e| HubError::Config(e.to_string()))?;
        cfg.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HubError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| HubError::io(path, e))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples an item from `arm`. The returned utility is received by the agent
/// but must not be shown to it; only the observation is agent-facing.
pub fn pull_arm<R: Rng + ?Sized>(hub: &HubInstance, arm: usize, rng: &mut R) -> Result<(AgentObservation, f64)> {
    let dist = hub.arms.get(arm).ok_or(HubError::IndexOutOfRange {
        kind: "arm",
        index: arm,
        len: hub.arms.len(),
    })?;
    let item = dist.sample(rng);
    let utility = hub.utility.get(item)?;
    Ok((AgentObservation::ItemSample { arm, item }, utility))
}

/// Queries a teacher on a pair drawn from the query profile. Returns the
/// observed preference and the query reward.
pub fn query_teacher<R: Rng + ?Sized>(
    hub: &HubInstance,
    teacher: usize,
    rng: &mut R,
) -> Result<(AgentObservation, f64)> {
    let t = hub.teachers.get(teacher).ok_or(HubError::IndexOutOfRange {
        kind: "teacher",
        index: teacher,
        len: hub.teachers.len(),
    })?;
    let (i, j) = hub.query_profile.sample(rng);
    let p = boltzmann_preference(i, j, t.beta, &hub.utility)?;
    let preferred_first = rng.gen::<f64>() < p;
    Ok((
        AgentObservation::PreferenceSample {
            teacher,
            pair: (i, j),
            preferred_first,
        },
        t.cost,
    ))
}

/// Expected utility of drawing one item from `d`.
pub fn expected_arm_utility(u: &UtilityFunction, d: &ArmDistribution) -> Result<f64> {
    if u.len() != d.probs.len() {
        return Err(HubError::InvalidParameter(format!(
            "utility has {} items but distribution has {}",
            u.len(),
            d.probs.len()
        )));
    }
    Ok(dot(&u.values, &d.probs))
}

/// Every broken invariant in `hub`; empty when the instance is well formed.
pub fn validate_hub(hub: &HubInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = hub.items.len();
    if n < 2 {
        out.push(Violation::new("items", format!("need at least 2 items, have {n}")));
    }
    if hub.utility.len() != n {
        out.push(Violation::new(
            "utility.values",
            format!("{} values for {n} items", hub.utility.len()),
        ));
    }
    hub.utility.check("utility", &mut out);
    if hub.arms.len() < 2 {
        out.push(Violation::new(
            "arms",
            format!("need at least 2 arms, have {}", hub.arms.len()),
        ));
    }
    if !hub.arm_names.is_empty() && hub.arm_names.len() != hub.arms.len() {
        out.push(Violation::new(
            "arm_names",
            format!("{} names for {} arms", hub.arm_names.len(), hub.arms.len()),
        ));
    }
    for (k, d) in hub.arms.iter().enumerate() {
        let field = format!("arms[{k}]");
        if d.probs.len() != n {
            out.push(Violation::new(
                &field,
                format!("{} probabilities for {n} items", d.probs.len()),
            ));
        }
        d.check(&field, &mut out);
    }
    if hub.teachers.is_empty() {
        out.push(Violation::new("teachers", "need at least 1 teacher"));
    }
    for (m, t) in hub.teachers.iter().enumerate() {
        t.check(&format!("teachers[{m}]"), &mut out);
    }
    hub.query_profile.check(n, &mut out);
    if !(hub.gamma > 0.0 && hub.gamma < 1.0) {
        out.push(Violation::new(
            "gamma",
            format!("discount {} must lie in (0, 1)", hub.gamma),
        ));
    }
    out
}

// Config file schema. Items are referenced by name in the query profile so
// the file stays readable when edited by hand.

#[derive(Debug, Serialize, Deserialize)]
struct HubConfig {
    gamma: f64,
    items: Vec<String>,
    utility: UtilityFunction,
    arms: Vec<ArmConfig>,
    teachers: Vec<Teacher>,
    query_profile: Vec<PairConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArmConfig {
    #[serde(default)]
    name: String,
    probs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairConfig {
    pair: [String; 2],
    prob: f64,
}

impl From<&HubInstance> for HubConfig {
    fn from(hub: &HubInstance) -> Self {
        HubConfig {
            gamma: hub.gamma,
            items: hub.items.clone(),
            utility: hub.utility.clone(),
            arms: hub
                .arms
                .iter()
                .enumerate()
                .map(|(k, d)| ArmConfig {
                    name: hub.arm_names.get(k).cloned().unwrap_or_default(),
                    probs: d.probs.clone(),
                })
                .collect(),
            teachers: hub.teachers.clone(),
            query_profile: hub
                .query_profile
                .pairs
                .iter()
                .map(|p| PairConfig {
                    pair: [hub.items[p.i].clone(), hub.items[p.j].clone()],
                    prob: p.prob,
                })
                .collect(),
        }
    }
}

impl TryFrom<HubConfig> for HubInstance {
    type Error = HubError;

    fn try_from(cfg: HubConfig) -> Result<Self> {
        let lookup = |name: &str| {
            cfg.items
                .iter()
                .position(|it| it == name)
                .ok_or_else(|| HubError::Config(format!("query profile names unknown item {name:?}")))
        };
        let mut pairs = Vec::with_capacity(cfg.query_profile.len());
        for p in &cfg.query_profile {
            pairs.push(PairProb {
                i: lookup(&p.pair[0])?,
                j: lookup(&p.pair[1])?,
                prob: p.prob,
            });
        }
        let arm_names = if cfg.arms.iter().all(|a| a.name.is_empty()) {
            Vec::new()
        } else {
            cfg.arms.iter().map(|a| a.name.clone()).collect()
        };
        HubInstance {
            items: cfg.items,
            utility: cfg.utility,
            arm_names,
            arms: cfg
                .arms
                .into_iter()
                .map(|a| ArmDistribution { probs: a.probs })
                .collect(),
            teachers: cfg.teachers,
            query_profile: QueryProfile { pairs },
            gamma: cfg.gamma,
        }
        .validated()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fruit_hub() -> HubInstance {
        HubInstance {
            items: vec!["apple".into(), "banana".into(), "tomato".into()],
            utility: UtilityFunction::new(vec![8.0, 2.0, 0.0], 0.0, 10.0).unwrap(),
            arm_names: vec![],
            arms: vec![
                ArmDistribution::new(vec![0.5, 0.3, 0.2]).unwrap(),
                ArmDistribution::new(vec![0.2, 0.3, 0.5]).unwrap(),
            ],
            teachers: vec![
                Teacher::new("coin", 0.0, 0.0).unwrap(),
                Teacher::new("expert", 50.0, -1.0).unwrap(),
            ],
            query_profile: QueryProfile::uniform(3),
            gamma: 0.99,
        }
    }

    #[test]
    fn preference_examples() {
        let u = UtilityFunction::new(vec![1.0, 0.0, 1.0], 0.0, 10.0).unwrap();
        assert_eq!(boltzmann_preference(0, 1, 0.0, &u).unwrap(), 0.5);
        assert_eq!(boltzmann_preference(0, 2, 7.0, &u).unwrap(), 0.5);
        assert_abs_diff_eq!(
            boltzmann_preference(0, 1, 1.0, &u).unwrap(),
            0.731_058_578_630_004_9,
            epsilon = 1e-12
        );

        let u = UtilityFunction::new(vec![8.0, 2.0], 0.0, 10.0).unwrap();
        let p = boltzmann_preference(0, 1, 50.0, &u).unwrap();
        assert!(p.is_finite());
        assert_eq!(p, 1.0);
        let q = boltzmann_preference(1, 0, 50.0, &u).unwrap();
        assert!(q > 0.0 && q < 1e-100);
    }

    #[test]
    fn preference_rejects_bad_parameters() {
        let u = UtilityFunction::new(vec![1.0, 0.0], 0.0, 1.0).unwrap();
        assert!(boltzmann_preference(0, 1, f64::NAN, &u).is_err());
        assert!(boltzmann_preference(0, 1, f64::INFINITY, &u).is_err());
        assert!(boltzmann_preference(0, 1, -1.0, &u).is_err());
        assert!(boltzmann_preference(0, 0, 1.0, &u).is_err());
        let bad = UtilityFunction {
            values: vec![f64::NAN, 0.0],
            u_min: 0.0,
            u_max: 1.0,
        };
        assert!(boltzmann_preference(0, 1, 1.0, &bad).is_err());
    }

    #[test]
    fn point_mass_arm_always_returns_its_item() {
        let mut hub = fruit_hub();
        hub.arms[0] = ArmDistribution::point_mass(3, 0);
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let (obs, u) = pull_arm(&hub, 0, &mut rng).unwrap();
            assert_eq!(obs, AgentObservation::ItemSample { arm: 0, item: 0 });
            assert_eq!(u, 8.0);
        }
    }

    #[test]
    fn pull_frequencies_converge() {
        let hub = fruit_hub();
        let mut rng = seeded_rng(7);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (obs, u) = pull_arm(&hub, 0, &mut rng).unwrap();
            assert!((0.0..=10.0).contains(&u));
            if let AgentObservation::ItemSample { item, .. } = obs {
                counts[item] += 1;
            }
        }
        for (c, p) in counts.iter().zip(&hub.arms[0].probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_indices_are_errors() {
        let hub = fruit_hub();
        let mut rng = seeded_rng(0);
        assert!(matches!(
            pull_arm(&hub, 5, &mut rng),
            Err(HubError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            query_teacher(&hub, 2, &mut rng),
            Err(HubError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_rationality_teacher_is_a_fair_coin() {
        let hub = fruit_hub();
        let mut rng = seeded_rng(3);
        let n = 20_000;
        let mut first = 0;
        for _ in 0..n {
            let (obs, reward) = query_teacher(&hub, 0, &mut rng).unwrap();
            assert_eq!(reward, 0.0);
            if let AgentObservation::PreferenceSample {
                preferred_first, pair, ..
            } = obs
            {
                assert_ne!(pair.0, pair.1);
                first += preferred_first as usize;
            }
        }
        // 4 standard deviations of a fair binomial
        assert!((first as f64 / n as f64 - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn expert_prefers_higher_utility() {
        let mut hub = fruit_hub();
        hub.query_profile = QueryProfile {
            pairs: vec![PairProb { i: 0, j: 1, prob: 1.0 }],
        };
        let mut rng = seeded_rng(11);
        let n = 10_000;
        let mut correct = 0;
        for _ in 0..n {
            let (obs, reward) = query_teacher(&hub, 1, &mut rng).unwrap();
            assert_eq!(reward, -1.0);
            if let AgentObservation::PreferenceSample {
                pair, preferred_first, ..
            } = obs
            {
                let winner = if preferred_first { pair.0 } else { pair.1 };
                correct += (winner == 0) as usize;
            }
        }
        assert!(correct as f64 / n as f64 >= 0.999);
    }

    #[test]
    fn preference_rate_matches_boltzmann() {
        let mut hub = fruit_hub();
        hub.teachers[1].beta = 0.2;
        hub.query_profile = QueryProfile {
            pairs: vec![PairProb { i: 0, j: 2, prob: 1.0 }],
        };
        let p = preference_probability(8.0, 0.0, 0.2);
        let mut rng = seeded_rng(5);
        let n = 10_000;
        let mut wins = 0;
        for _ in 0..n {
            if let (
                AgentObservation::PreferenceSample {
                    pair, preferred_first, ..
                },
                _,
            ) = query_teacher(&hub, 1, &mut rng).unwrap()
            {
                let winner = if preferred_first { pair.0 } else { pair.1 };
                wins += (winner == 0) as usize;
            }
        }
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((wins as f64 / n as f64 - p).abs() < 4.0 * sd);
    }

    #[test]
    fn expected_utility_examples() {
        let u = UtilityFunction::new(vec![8.0, 2.0], 0.0, 10.0).unwrap();
        assert_eq!(
            expected_arm_utility(&u, &ArmDistribution::point_mass(2, 0)).unwrap(),
            8.0
        );
        assert_eq!(expected_arm_utility(&u, &ArmDistribution::uniform(2)).unwrap(), 5.0);
        let c = UtilityFunction::new(vec![3.0; 3], 0.0, 10.0).unwrap();
        let d = ArmDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_abs_diff_eq!(expected_arm_utility(&c, &d).unwrap(), 3.0, epsilon = 1e-12);
        assert!(expected_arm_utility(&c, &ArmDistribution::uniform(2)).is_err());
    }

    #[test]
    fn validation_reports_each_problem() {
        assert!(validate_hub(&fruit_hub()).is_empty());

        let mut hub = fruit_hub();
        hub.arms[1].probs = vec![0.3, 0.3, 0.3];
        let v = validate_hub(&hub);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "arms[1]");

        let mut hub = fruit_hub();
        hub.gamma = 1.0;
        let v = validate_hub(&hub);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "gamma");

        let mut hub = fruit_hub();
        hub.teachers[0].cost = 1.0;
        hub.query_profile.pairs[0].j = 0;
        assert_eq!(validate_hub(&hub).len(), 2);
    }

    #[test]
    fn config_round_trip() {
        let hub = fruit_hub();
        let text = hub.to_toml().unwrap();
        assert_eq!(HubInstance::from_toml(&text).unwrap(), hub);
    }

    #[test]
    fn config_rejects_unknown_items() {
        let text = fruit_hub()
            .to_toml()
            .unwrap()
            .replace("pair = [\"banana\", \"tomato\"]", "pair = [\"banana\", \"kiwi\"]");
        assert!(HubInstance::from_toml(&text).is_err());
    }

    proptest! {
        #[test]
        fn preference_is_complementary(ui in -10.0f64..10.0, uj in -10.0f64..10.0, beta in 0.0f64..50.0) {
            let p = preference_probability(ui, uj, beta);
            let q = preference_probability(uj, ui, beta);
            prop_assert!((p + q - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn preference_depends_only_on_difference(ui in -5.0f64..5.0, uj in -5.0f64..5.0, c in -5.0f64..5.0, beta in 0.0f64..5.0) {
            let p = preference_probability(ui, uj, beta);
            let q = preference_probability(ui + c, uj + c, beta);
            prop_assert!((p - q).abs() < 1e-12);
        }

        #[test]
        fn preference_is_monotone(d1 in 0.0f64..5.0, extra in 0.01f64..5.0, beta in 0.01f64..5.0, dbeta in 0.01f64..5.0) {
            // in the difference for fixed beta
            prop_assert!(preference_probability(d1 + extra, 0.0, beta) >= preference_probability(d1, 0.0, beta));
            // in beta when u_i > u_j
            prop_assert!(preference_probability(d1 + 0.01, 0.0, beta + dbeta) >= preference_probability(d1 + 0.01, 0.0, beta));
        }

        #[test]
        fn config_round_trip_is_lossless(values in proptest::collection::vec(0.0f64..10.0, 3), beta in 0.0f64..100.0, cost in -100.0f64..0.0, gamma in 0.01f64..0.999) {
            let mut hub = fruit_hub();
            hub.utility.values = values;
            hub.teachers[1].beta = beta;
            hub.teachers[1].cost = cost;
            hub.gamma = gamma;
            hub.query_profile.pairs[0].prob = 0.1;
            hub.query_profile.pairs[1].prob = 1.0 / 3.0;
            hub.query_profile.pairs[2].prob = 1.0 - 0.1 - 1.0 / 3.0;
            let back = HubInstance::from_toml(&hub.to_toml().unwrap()).unwrap();
            prop_assert_eq!(back, hub);
        }
    }
}

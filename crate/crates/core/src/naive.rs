//! Naive hub inference: explore uniformly for a fixed number of steps, invert
//! the teacher model in closed form, then commit to the best estimated arm.

use std::collections::BTreeMap;

use rand::Rng;

use crate::episode::{execute, EnvAction, EpisodeLog};
use crate::error::{HubError, Result};
use crate::hub::{argmax, AgentObservation, ArmDistribution, HubInstance, ItemId};

/// Replacement margin for degenerate preference rates of exactly 0 or 1.
pub const PREFERENCE_CLIP: f64 = 1e-6;

/// Moves a rate of exactly 0 or 1 inside the open interval so it can be
/// inverted. Rates already inside are returned unchanged.
pub fn clip_probability(p: f64) -> f64 {
    if p <= 0.0 {
        PREFERENCE_CLIP
    } else if p >= 1.0 {
        1.0 - PREFERENCE_CLIP
    } else {
        p
    }
}

/// Index of the unordered pair `{i, j}` among the `n choose 2` pairs listed
/// lexicographically.
pub fn pair_index(n_items: usize, i: ItemId, j: ItemId) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n_items - a * (a + 1) / 2 + (b - a - 1)
}

/// All unordered pairs `(i, j)` with `i < j`, in [`pair_index`] order.
pub fn canonical_pairs(n_items: usize) -> Vec<(ItemId, ItemId)> {
    let mut out = Vec::with_capacity(n_items * n_items.saturating_sub(1) / 2);
    for i in 0..n_items {
        for j in i + 1..n_items {
            out.push((i, j));
        }
    }
    out
}

/// Tallies gathered during uniform exploration.
///
/// Preferences are stored per unordered pair `(i, j)` with `i < j` as the
/// number of times `i` was preferred, whatever order the pair was shown in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationCounts {
    pub n_items: usize,
    pub arm_pulls: Vec<u64>,
    pub arm_item_counts: Vec<Vec<u64>>,
    pub query_counts: Vec<Vec<u64>>,
    pub preference_sums: Vec<Vec<u64>>,
}

impl ExplorationCounts {
    pub fn new(n_items: usize, n_arms: usize, n_teachers: usize) -> Self {
        let n_pairs = n_items * n_items.saturating_sub(1) / 2;
        ExplorationCounts {
            n_items,
            arm_pulls: vec![0; n_arms],
            arm_item_counts: vec![vec![0; n_items]; n_arms],
            query_counts: vec![vec![0; n_pairs]; n_teachers],
            preference_sums: vec![vec![0; n_pairs]; n_teachers],
        }
    }

    pub fn record(&mut self, obs: &AgentObservation) {
        match *obs {
            AgentObservation::ItemSample { arm, item } => {
                self.arm_pulls[arm] += 1;
                self.arm_item_counts[arm][item] += 1;
            }
            AgentObservation::PreferenceSample {
                teacher,
                pair: (i, j),
                preferred_first,
            } => {
                let q = pair_index(self.n_items, i, j);
                self.query_counts[teacher][q] += 1;
                let lower_preferred = if i < j { preferred_first } else { !preferred_first };
                self.preference_sums[teacher][q] += lower_preferred as u64;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.arm_pulls.iter().sum::<u64>() + self.query_counts.iter().flatten().sum::<u64>()
    }
}

/// Runs `steps` steps of uniform exploration: a fair coin picks pulling an
/// arm or querying a teacher, each chosen uniformly at random.
pub fn explore<R: Rng + ?Sized>(hub: &HubInstance, steps: usize, rng: &mut R) -> Result<ExplorationCounts> {
    let mut counts = ExplorationCounts::new(hub.n_items(), hub.n_arms(), hub.n_teachers());
    for _ in 0..steps {
        let action = exploration_action(hub, rng);
        let outcome = execute(hub, action, rng)?;
        counts.record(&outcome.observation);
    }
    Ok(counts)
}

fn exploration_action<R: Rng + ?Sized>(hub: &HubInstance, rng: &mut R) -> EnvAction {
    if rng.gen::<bool>() {
        EnvAction::Pull(rng.gen_range(0..hub.n_arms()))
    } else {
        EnvAction::Query(rng.gen_range(0..hub.n_teachers()))
    }
}

/// Empirical item frequencies of every arm.
pub fn estimate_distributions(counts: &ExplorationCounts) -> Result<Vec<ArmDistribution>> {
    counts
        .arm_item_counts
        .iter()
        .zip(&counts.arm_pulls)
        .enumerate()
        .map(|(arm, (items, &pulls))| {
            if pulls == 0 {
                return Err(HubError::InsufficientData(format!("arm {arm} was never pulled")));
            }
            Ok(ArmDistribution {
                probs: items.iter().map(|&c| c as f64 / pulls as f64).collect(),
            })
        })
        .collect()
}

/// Estimated `Pr(i ≻ j)` keyed by `(teacher, i, j)` with `i < j`. Pairs a
/// teacher was never asked about are absent.
pub type PreferenceEstimates = BTreeMap<(usize, ItemId, ItemId), f64>;

pub fn estimate_preference_probs(counts: &ExplorationCounts) -> PreferenceEstimates {
    let pairs = canonical_pairs(counts.n_items);
    let mut out = BTreeMap::new();
    for (teacher, (queries, prefs)) in counts.query_counts.iter().zip(&counts.preference_sums).enumerate() {
        for (q, &(i, j)) in pairs.iter().enumerate() {
            if queries[q] > 0 {
                out.insert((teacher, i, j), prefs[q] as f64 / queries[q] as f64);
            }
        }
    }
    out
}

/// Utility difference `u(i) - u(j)` implied by a preference probability
/// `p = Pr(i ≻ j)` under rationality `beta`.
pub fn delta_from_preference(p: f64, beta: f64) -> Result<f64> {
    if !beta.is_finite() || beta < 0.0 || !p.is_finite() {
        return Err(HubError::InvalidParameter(format!("p={p}, beta={beta}")));
    }
    if beta == 0.0 {
        return Err(HubError::NonInvertible(
            "a teacher with zero rationality carries no utility information".into(),
        ));
    }
    let p = clip_probability(p);
    Ok(-(1.0 / p - 1.0).ln() / beta)
}

/// Antisymmetric table of pairwise utility differences; `None` where no
/// data exists.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    n: usize,
    cells: Vec<Option<f64>>,
}

impl DeltaTable {
    pub fn new(n_items: usize) -> Self {
        let mut cells = vec![None; n_items * n_items];
        for i in 0..n_items {
            cells[i * n_items + i] = Some(0.0);
        }
        DeltaTable { n: n_items, cells }
    }

    /// Builds the table from one teacher's preference estimates.
    pub fn from_preferences(p_hat: &PreferenceEstimates, teacher: usize, beta: f64, n_items: usize) -> Result<Self> {
        let mut table = DeltaTable::new(n_items);
        for (&(m, i, j), &p) in p_hat {
            if m == teacher {
                table.set(i, j, delta_from_preference(p, beta)?);
            }
        }
        Ok(table)
    }

    pub fn n_items(&self) -> usize {
        self.n
    }

    /// Sets `delta(i, j)` and its mirror `delta(j, i) = -delta(i, j)`.
    pub fn set(&mut self, i: ItemId, j: ItemId, delta: f64) {
        self.cells[i * self.n + j] = Some(delta);
        self.cells[j * self.n + i] = Some(-delta);
    }

    pub fn get(&self, i: ItemId, j: ItemId) -> Option<f64> {
        self.cells[i * self.n + j]
    }

    fn has_off_diagonal(&self) -> bool {
        (0..self.n).any(|i| (0..self.n).any(|j| i != j && self.get(i, j).is_some()))
    }

    /// `delta(i, y)`, chaining through a single intermediate item when the
    /// direct entry is missing.
    fn to_anchor(&self, i: ItemId, y: ItemId) -> Option<f64> {
        self.get(i, y).or_else(|| {
            (0..self.n).find_map(|k| match (self.get(i, k), self.get(k, y)) {
                (Some(a), Some(b)) if k != i && k != y => Some(a + b),
                _ => None,
            })
        })
    }
}

/// Reconstructed utilities; items that could not be linked to the anchor
/// are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEstimate {
    pub values: Vec<Option<f64>>,
    pub u_min: f64,
    pub u_max: f64,
}

impl UtilityEstimate {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Values with missing items filled at the midpoint of the utility range.
    pub fn imputed(&self) -> Vec<f64> {
        let mid = 0.5 * (self.u_min + self.u_max);
        self.values.iter().map(|v| v.unwrap_or(mid)).collect()
    }
}

/// Places the least-preferred item at `u_min` and scales every other item's
/// difference to it by `u_max / (u_max - u_min)`, clamping into range.
pub fn reconstruct_utility(delta: &DeltaTable, u_min: f64, u_max: f64) -> Result<UtilityEstimate> {
    if !(u_min < u_max) {
        return Err(HubError::InvalidParameter(format!(
            "u_min {u_min} must be below u_max {u_max}"
        )));
    }
    if !delta.has_off_diagonal() {
        return Err(HubError::InsufficientData("no pairwise utility differences".into()));
    }
    let n = delta.n_items();
    let mut best: Option<(f64, ItemId)> = None;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            if let Some(d) = delta.get(x, y) {
                if best.is_none_or(|(b, _)| d > b) {
                    best = Some((d, y));
                }
            }
        }
    }
    let (_, anchor) = best.expect("table has an off-diagonal entry");
    let scale = u_max / (u_max - u_min);
    let values = (0..n)
        .map(|i| {
            if i == anchor {
                Some(u_min)
            } else {
                delta
                    .to_anchor(i, anchor)
                    .map(|d| (scale * d + u_min).clamp(u_min, u_max))
            }
        })
        .collect();
    Ok(UtilityEstimate { values, u_min, u_max })
}

/// Everything the naive algorithm infers from its exploration data.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveEstimate {
    pub d_hat: Vec<ArmDistribution>,
    pub p_hat: PreferenceEstimates,
    pub delta: DeltaTable,
    pub u_hat: UtilityEstimate,
}

impl NaiveEstimate {
    /// Runs the full inference using only `teacher`'s preferences.
    pub fn from_counts(hub: &HubInstance, counts: &ExplorationCounts, teacher: usize) -> Result<Self> {
        let beta = hub
            .teachers
            .get(teacher)
            .ok_or(HubError::IndexOutOfRange {
                kind: "teacher",
                index: teacher,
                len: hub.n_teachers(),
            })?
            .beta;
        let d_hat = estimate_distributions(counts)?;
        let p_hat = estimate_preference_probs(counts);
        let delta = DeltaTable::from_preferences(&p_hat, teacher, beta, hub.n_items())?;
        let u_hat = reconstruct_utility(&delta, hub.utility.u_min, hub.utility.u_max)?;
        Ok(NaiveEstimate {
            d_hat,
            p_hat,
            delta,
            u_hat,
        })
    }

    /// Estimated expected utility of every arm, summing only over items with
    /// a reconstructed utility.
    pub fn arm_values(&self) -> Vec<f64> {
        self.d_hat
            .iter()
            .map(|d| {
                self.u_hat
                    .values
                    .iter()
                    .zip(&d.probs)
                    .filter_map(|(u, p)| u.map(|u| u * p))
                    .sum()
            })
            .collect()
    }
}

/// Explores for `explore_steps`, infers utilities from `teacher`'s answers,
/// then pulls the best estimated arm for the rest of the horizon.
pub fn run_naive_policy<R: Rng + ?Sized>(
    hub: &HubInstance,
    explore_steps: usize,
    teacher: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<EpisodeLog> {
    let beta = hub
        .teachers
        .get(teacher)
        .ok_or(HubError::IndexOutOfRange {
            kind: "teacher",
            index: teacher,
            len: hub.n_teachers(),
        })?
        .beta;
    if beta <= 0.0 {
        return Err(HubError::InvalidParameter(format!(
            "inference teacher {teacher} has zero rationality"
        )));
    }
    if explore_steps >= horizon {
        return Err(HubError::InvalidParameter(format!(
            "exploration length {explore_steps} must be below the horizon {horizon}"
        )));
    }

    let mut log = EpisodeLog::new(format!("Naive[{explore_steps}]"), hub.gamma);
    let mut counts = ExplorationCounts::new(hub.n_items(), hub.n_arms(), hub.n_teachers());
    for _ in 0..explore_steps {
        let action = exploration_action(hub, rng);
        let outcome = execute(hub, action, rng)?;
        counts.record(&outcome.observation);
        log.push(action, outcome, None, None);
    }

    let (choice, u_est, arm_est) = match NaiveEstimate::from_counts(hub, &counts, teacher) {
        Ok(est) => {
            let values = est.arm_values();
            (Some(argmax(&values)), Some(est.u_hat.imputed()), Some(values))
        }
        Err(e) => {
            log.event(format!("estimation failed ({e}); exploiting a uniformly random arm"));
            (None, None, None)
        }
    };
    for _ in explore_steps..horizon {
        let arm = choice.unwrap_or_else(|| rng.gen_range(0..hub.n_arms()));
        let action = EnvAction::Pull(arm);
        let outcome = execute(hub, action, rng)?;
        log.push(action, outcome, u_est.clone(), arm_est.clone());
    }
    Ok(log)
}

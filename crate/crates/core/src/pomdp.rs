//! Discrete POMDP reduction of a hidden utility bandit.
//!
//! The hidden state is a utility function on a [`UtilityGrid`] together with
//! one arm distribution per arm on a [`SimplexGrid`]. It never changes, so the
//! transition function is the identity and planning only has to track a
//! belief over which state is true.
//!
//! States are addressed by a packed [`StateId`]: the utility index is the
//! most significant digit and arm `k`'s simplex point is digit `k` in base
//! `|simplex points|`. When no state filter is applied the prior is a product
//! over the utility function and each arm, and since item observations only
//! depend on one arm and preference observations only on the utility, the
//! posterior stays a product. [`Belief::Factored`] exploits this and is exact;
//! [`Belief::Dense`] is used for filtered state spaces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HubError, Result};
use crate::hub::{
    preference_probability, sample_categorical, AgentObservation, HubInstance, ItemId, QueryProfile, Teacher,
};

/// Discretized utility levels shared by every item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct UtilityGrid {
    levels: Vec<f64>,
}

impl UtilityGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(HubError::InvalidParameter(
                "utility grid needs at least two levels".into(),
            ));
        }
        if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HubError::InvalidParameter(format!(
                "utility levels must be finite and strictly increasing: {levels:?}"
            )));
        }
        Ok(UtilityGrid { levels })
    }

    /// `count` evenly spaced levels from `u_min` to `u_max` inclusive.
    pub fn evenly_spaced(u_min: f64, u_max: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(HubError::InvalidParameter(
                "utility grid needs at least two levels".into(),
            ));
        }
        let step = (u_max - u_min) / (count - 1) as f64;
        let mut levels: Vec<f64> = (0..count).map(|k| u_min + step * k as f64).collect();
        levels[count - 1] = u_max;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn u_min(&self) -> f64 {
        self.levels[0]
    }

    pub fn u_max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn contains(&self, u: f64) -> bool {
        self.levels.contains(&u)
    }

    /// Every utility function over `n_items` items, item 0 varying slowest.
    pub fn functions(&self, n_items: usize) -> Vec<Vec<f64>> {
        let l = self.levels.len();
        let total = l.pow(n_items as u32);
        (0..total)
            .map(|mut idx| {
                let mut u = vec![0.0; n_items];
                for slot in u.iter_mut().rev() {
                    *slot = self.levels[idx % l];
                    idx /= l;
                }
                u
            })
            .collect()
    }
}

/// Probability vectors whose entries are multiples of `1 / resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub struct SimplexGrid {
    resolution: u32,
}

impl SimplexGrid {
    pub fn new(resolution: u32) -> Result<Self> {
        if resolution < 2 {
            return Err(HubError::InvalidParameter(format!(
                "simplex resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(SimplexGrid { resolution })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// Number of grid points on the `n_items` simplex, `C(R + n - 1, n - 1)`.
    pub fn count(&self, n_items: usize) -> usize {
        let r = self.resolution as usize;
        let k = n_items - 1;
        let mut c = 1usize;
        for i in 0..k {
            c = c * (r + k - i) / (i + 1);
        }
        c
    }

    /// All grid points, lexicographically descending in the first item.
    pub fn points(&self, n_items: usize) -> Vec<Vec<f64>> {
        let r = self.resolution;
        let mut out = Vec::new();
        let mut parts = vec![0u32; n_items];
        fn rec(pos: usize, left: u32, parts: &mut Vec<u32>, r: u32, out: &mut Vec<Vec<f64>>) {
            if pos == parts.len() - 1 {
                parts[pos] = left;
                out.push(parts.iter().map(|&c| c as f64 / r as f64).collect());
                return;
            }
            for c in (0..=left).rev() {
                parts[pos] = c;
                rec(pos + 1, left - c, parts, r, out);
            }
        }
        rec(0, r, &mut parts, r, &mut out);
        out
    }

    pub fn contains(&self, probs: &[f64]) -> bool {
        let r = self.resolution as f64;
        probs.iter().all(|p| ((p * r) - (p * r).round()).abs() < 1e-9)
    }
}

impl TryFrom<Vec<f64>> for UtilityGrid {
    type Error = HubError;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<UtilityGrid> for Vec<f64> {
    fn from(g: UtilityGrid) -> Self {
        g.levels
    }
}

impl TryFrom<u32> for SimplexGrid {
    type Error = HubError;

    fn try_from(resolution: u32) -> Result<Self> {
        Self::new(resolution)
    }
}

impl From<SimplexGrid> for u32 {
    fn from(g: SimplexGrid) -> Self {
        g.resolution
    }
}

/// Grid settings for building a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub utility_levels: UtilityGrid,
    pub simplex_resolution: SimplexGrid,
}

impl Grids {
    /// Levels {0, 2, 4, 6, 8, 10} and quarter-step arm distributions.
    pub fn recommendation() -> Self {
        Grids {
            utility_levels: UtilityGrid::new(vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]).unwrap(),
            simplex_resolution: SimplexGrid::new(4).unwrap(),
        }
    }

    /// Ten integer levels {0, ..., 9} and quarter-step arm distributions.
    pub fn covid() -> Self {
        Grids {
            utility_levels: UtilityGrid::evenly_spaced(0.0, 9.0, 10).unwrap(),
            simplex_resolution: SimplexGrid::new(4).unwrap(),
        }
    }

    pub fn state_count(&self, n_items: usize, n_arms: usize) -> u64 {
        let u = (self.utility_levels.levels().len() as u64).pow(n_items as u32);
        let p = self.simplex_resolution.count(n_items) as u64;
        u * p.pow(n_arms as u32)
    }
}

/// A fully specified hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct HubState {
    pub utility: Vec<f64>,
    pub arm_dists: Vec<Vec<f64>>,
}

impl HubState {
    pub fn arm_value(&self, arm: usize) -> f64 {
        crate::hub::dot(&self.utility, &self.arm_dists[arm])
    }

    pub fn best_arm(&self) -> usize {
        let values: Vec<f64> = (0..self.arm_dists.len()).map(|k| self.arm_value(k)).collect();
        crate::hub::argmax(&values)
    }
}

pub type StateId = u64;

/// Whether the agent picks the teacher to query or only when to query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    Specific,
    /// One abstract query action, answered by `teacher`.
    General {
        teacher: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PomdpAction {
    Pull(usize),
    QuerySpecific(usize),
    QueryGeneral,
}

impl PomdpAction {
    pub fn is_query(self) -> bool {
        !matches!(self, PomdpAction::Pull(_))
    }
}

/// Everything needed to build a [`HubPomdpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpSpec {
    pub n_items: usize,
    pub n_arms: usize,
    pub grids: Grids,
    pub teachers: Vec<Teacher>,
    pub query_profile: QueryProfile,
    pub gamma: f64,
    pub mode: SelectionMode,
}

impl PomdpSpec {
    /// The agent-visible parts of `hub` plus the given grids.
    pub fn from_hub(hub: &HubInstance, grids: &Grids, mode: SelectionMode) -> Self {
        PomdpSpec {
            n_items: hub.n_items(),
            n_arms: hub.n_arms(),
            grids: grids.clone(),
            teachers: hub.teachers.clone(),
            query_profile: hub.query_profile.clone(),
            gamma: hub.gamma,
            mode,
        }
    }
}

/// Sizes of the state, action and observation spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpaceSummary {
    pub states: u64,
    pub actions: usize,
    pub observations: usize,
}

#[derive(Debug, Clone)]
pub struct HubPomdpModel {
    spec: PomdpSpec,
    utilities: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
    /// `point_pow[k] = |points|^k`.
    point_pow: Vec<u64>,
    /// Enumerated states when a filter was applied; `None` for the full product.
    support: Option<Vec<StateId>>,
    /// Expected arm utility, indexed `[utility * |points| + point]`.
    arm_value: Vec<f64>,
    /// `Pr(i ≻ j)`, indexed `[((utility * M + teacher) * N + i) * N + j]`.
    pref: Vec<f64>,
    actions: Vec<PomdpAction>,
}

impl HubPomdpModel {
    /// Model over the full product state space.
    pub fn new(spec: PomdpSpec) -> Result<Self> {
        Self::build(spec, None::<fn(&HubState) -> bool>)
    }

    /// Model restricted to the states accepted by `filter`.
    pub fn filtered(spec: PomdpSpec, filter: impl Fn(&HubState) -> bool) -> Result<Self> {
        Self::build(spec, Some(filter))
    }

    /// Model for `hub` on `grids` over the full product state space.
    pub fn for_hub(hub: &HubInstance, grids: &Grids, mode: SelectionMode) -> Result<Self> {
        Self::new(PomdpSpec::from_hub(hub, grids, mode))
    }

    fn build(spec: PomdpSpec, filter: Option<impl Fn(&HubState) -> bool>) -> Result<Self> {
        if spec.n_items < 2 || spec.n_arms < 1 {
            return Err(HubError::InvalidParameter(format!(
                "need at least 2 items and 1 arm, got {} and {}",
                spec.n_items, spec.n_arms
            )));
        }
        if let SelectionMode::General { teacher } = spec.mode {
            if teacher >= spec.teachers.len() {
                return Err(HubError::IndexOutOfRange {
                    kind: "teacher",
                    index: teacher,
                    len: spec.teachers.len(),
                });
            }
        }
        let n = spec.n_items;
        let m = spec.teachers.len();
        let utilities = spec.grids.utility_levels.functions(n);
        let points = spec.grids.simplex_resolution.points(n);
        let p = points.len() as u64;
        let point_pow: Vec<u64> = (0..=spec.n_arms as u32).map(|k| p.pow(k)).collect();

        let mut arm_value = Vec::with_capacity(utilities.len() * points.len());
        for u in &utilities {
            for d in &points {
                arm_value.push(crate::hub::dot(u, d));
            }
        }
        let mut pref = vec![0.0; utilities.len() * m * n * n];
        for (ui, u) in utilities.iter().enumerate() {
            for (ti, t) in spec.teachers.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            pref[((ui * m + ti) * n + i) * n + j] = preference_probability(u[i], u[j], t.beta);
                        }
                    }
                }
            }
        }

        let mut actions: Vec<PomdpAction> = (0..spec.n_arms).map(PomdpAction::Pull).collect();
        match spec.mode {
            SelectionMode::Specific => actions.extend((0..m).map(PomdpAction::QuerySpecific)),
            SelectionMode::General { .. } => actions.push(PomdpAction::QueryGeneral),
        }

        let mut model = HubPomdpModel {
            spec,
            utilities,
            points,
            point_pow,
            support: None,
            arm_value,
            pref,
            actions,
        };
        if let Some(filter) = filter {
            let total = model.product_size();
            let kept: Vec<StateId> = (0..total).filter(|&id| filter(&model.state(id))).collect();
            if kept.is_empty() {
                return Err(HubError::EmptyStateSpace);
            }
            model.support = Some(kept);
        }
        Ok(model)
    }

    pub fn spec(&self) -> &PomdpSpec {
        &self.spec
    }

    pub fn n_items(&self) -> usize {
        self.spec.n_items
    }

    pub fn n_arms(&self) -> usize {
        self.spec.n_arms
    }

    pub fn n_teachers(&self) -> usize {
        self.spec.teachers.len()
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn mode(&self) -> SelectionMode {
        self.spec.mode
    }

    pub fn teachers(&self) -> &[Teacher] {
        &self.spec.teachers
    }

    pub fn utility_functions(&self) -> &[Vec<f64>] {
        &self.utilities
    }

    pub fn simplex_points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn is_filtered(&self) -> bool {
        self.support.is_some()
    }

    fn product_size(&self) -> u64 {
        self.utilities.len() as u64 * self.point_pow[self.spec.n_arms]
    }

    /// Number of states in the (possibly filtered) state space.
    pub fn state_count(&self) -> u64 {
        match &self.support {
            Some(s) => s.len() as u64,
            None => self.product_size(),
        }
    }

    /// Id of the `pos`-th state in enumeration order.
    pub fn state_id(&self, pos: usize) -> StateId {
        match &self.support {
            Some(s) => s[pos],
            None => pos as StateId,
        }
    }

    pub fn actions(&self) -> &[PomdpAction] {
        &self.actions
    }

    pub fn summary(&self) -> SpaceSummary {
        let n = self.spec.n_items;
        SpaceSummary {
            states: self.state_count(),
            actions: self.actions.len(),
            observations: n + 2 * n * (n - 1),
        }
    }

    #[inline]
    pub fn utility_index(&self, id: StateId) -> usize {
        (id / self.point_pow[self.spec.n_arms]) as usize
    }

    #[inline]
    pub fn point_index(&self, id: StateId, arm: usize) -> usize {
        ((id / self.point_pow[arm]) % self.point_pow[1]) as usize
    }

    /// Packs a utility index and per-arm simplex indices.
    pub fn pack(&self, utility: usize, arms: &[usize]) -> StateId {
        let mut id = utility as u64 * self.point_pow[self.spec.n_arms];
        for (k, &p) in arms.iter().enumerate() {
            id += p as u64 * self.point_pow[k];
        }
        id
    }

    /// Materializes a state.
    pub fn state(&self, id: StateId) -> HubState {
        HubState {
            utility: self.utilities[self.utility_index(id)].clone(),
            arm_dists: (0..self.spec.n_arms)
                .map(|k| self.points[self.point_index(id, k)].clone())
                .collect(),
        }
    }

    /// Id of a state whose components lie exactly on the grids.
    pub fn find_state(&self, state: &HubState) -> Option<StateId> {
        let u = self.utilities.iter().position(|u| u == &state.utility)?;
        let mut arms = Vec::with_capacity(state.arm_dists.len());
        for d in &state.arm_dists {
            arms.push(
                self.points
                    .iter()
                    .position(|p| p.iter().zip(d).all(|(a, b)| (a - b).abs() < 1e-12))?,
            );
        }
        let id = self.pack(u, &arms);
        match &self.support {
            Some(s) if s.binary_search(&id).is_err() => None,
            _ => Some(id),
        }
    }

    /// Expected utility of pulling `arm` in state `id`.
    #[inline]
    pub fn arm_value(&self, id: StateId, arm: usize) -> f64 {
        self.arm_value[self.utility_index(id) * self.points.len() + self.point_index(id, arm)]
    }

    pub fn best_arm(&self, id: StateId) -> usize {
        let mut best = 0;
        for k in 1..self.spec.n_arms {
            if self.arm_value(id, k) > self.arm_value(id, best) {
                best = k;
            }
        }
        best
    }

    /// Physical teacher answering `action`, if it is a query.
    pub fn answering_teacher(&self, action: PomdpAction) -> Option<usize> {
        match (action, self.spec.mode) {
            (PomdpAction::QuerySpecific(m), _) => Some(m),
            (PomdpAction::QueryGeneral, SelectionMode::General { teacher }) => Some(teacher),
            _ => None,
        }
    }

    pub fn check_action(&self, action: PomdpAction) -> Result<()> {
        let ok = match (action, self.spec.mode) {
            (PomdpAction::Pull(k), _) => k < self.spec.n_arms,
            (PomdpAction::QuerySpecific(m), SelectionMode::Specific) => m < self.spec.teachers.len(),
            (PomdpAction::QueryGeneral, SelectionMode::General { .. }) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(HubError::IllegalAction(format!(
                "{action:?} in {:?} mode",
                self.spec.mode
            )))
        }
    }

    /// Reward without legality checks; `action` must be legal.
    #[inline]
    pub fn reward_unchecked(&self, id: StateId, action: PomdpAction) -> f64 {
        match action {
            PomdpAction::Pull(k) => self.arm_value(id, k),
            _ => self.spec.teachers[self.answering_teacher(action).unwrap()].cost,
        }
    }

    pub fn reward(&self, id: StateId, action: PomdpAction) -> Result<f64> {
        self.check_action(action)?;
        Ok(self.reward_unchecked(id, action))
    }

    #[inline]
    fn pref_prob(&self, utility: usize, teacher: usize, i: ItemId, j: ItemId) -> f64 {
        let n = self.spec.n_items;
        self.pref[((utility * self.spec.teachers.len() + teacher) * n + i) * n + j]
    }

    /// Likelihood of `obs` given a utility index, for query observations.
    #[inline]
    fn preference_likelihood(
        &self,
        utility: usize,
        teacher: usize,
        pair: (ItemId, ItemId),
        preferred_first: bool,
    ) -> f64 {
        let (i, j) = pair;
        let p = self.pref_prob(utility, teacher, i, j);
        let q = self.spec.query_profile.presentation_prob(i, j);
        q * if preferred_first { p } else { 1.0 - p }
    }

    /// `O(obs | state, action)` without checks; `obs` must match `action`.
    #[inline]
    pub fn observation_probability_unchecked(&self, id: StateId, action: PomdpAction, obs: &AgentObservation) -> f64 {
        match *obs {
            AgentObservation::ItemSample { item, .. } => match action {
                PomdpAction::Pull(k) => self.points[self.point_index(id, k)][item],
                _ => 0.0,
            },
            AgentObservation::PreferenceSample {
                teacher,
                pair,
                preferred_first,
            } => self.preference_likelihood(self.utility_index(id), teacher, pair, preferred_first),
        }
    }

    fn check_observation(&self, action: PomdpAction, obs: &AgentObservation) -> Result<()> {
        self.check_action(action)?;
        let ok = match (action, *obs) {
            (PomdpAction::Pull(k), AgentObservation::ItemSample { arm, item }) => arm == k && item < self.spec.n_items,
            (
                _,
                AgentObservation::PreferenceSample {
                    teacher, pair: (i, j), ..
                },
            ) if action.is_query() => {
                Some(teacher) == self.answering_teacher(action)
                    && i != j
                    && i < self.spec.n_items
                    && j < self.spec.n_items
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(HubError::MismatchedObservation(format!("{obs:?} after {action:?}")))
        }
    }

    pub fn observation_probability(&self, id: StateId, action: PomdpAction, obs: &AgentObservation) -> Result<f64> {
        self.check_observation(action, obs)?;
        Ok(self.observation_probability_unchecked(id, action, obs))
    }

    /// Every observation `action` can produce.
    pub fn observations(&self, action: PomdpAction) -> Vec<AgentObservation> {
        let n = self.spec.n_items;
        match action {
            PomdpAction::Pull(arm) => (0..n).map(|item| AgentObservation::ItemSample { arm, item }).collect(),
            _ => {
                let teacher = self.answering_teacher(action).expect("query action");
                let mut out = Vec::with_capacity(2 * n * (n - 1));
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            for preferred_first in [true, false] {
                                out.push(AgentObservation::PreferenceSample {
                                    teacher,
                                    pair: (i, j),
                                    preferred_first,
                                });
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Samples an observation from the generative model.
    pub fn sample_observation<R: Rng + ?Sized>(
        &self,
        id: StateId,
        action: PomdpAction,
        rng: &mut R,
    ) -> AgentObservation {
        match action {
            PomdpAction::Pull(arm) => AgentObservation::ItemSample {
                arm,
                item: sample_categorical(&self.points[self.point_index(id, arm)], rng),
            },
            _ => {
                let teacher = self.answering_teacher(action).expect("query action");
                let (i, j) = self.spec.query_profile.sample(rng);
                let p = self.pref_prob(self.utility_index(id), teacher, i, j);
                AgentObservation::PreferenceSample {
                    teacher,
                    pair: (i, j),
                    preferred_first: rng.gen::<f64>() < p,
                }
            }
        }
    }

    /// Maps a planner action onto the environment.
    pub fn env_action(&self, action: PomdpAction) -> crate::episode::EnvAction {
        match action {
            PomdpAction::Pull(k) => crate::episode::EnvAction::Pull(k),
            _ => crate::episode::EnvAction::Query(self.answering_teacher(action).expect("query action")),
        }
    }
}

/// Enumerates every state of the product space accepted by `filter`, in
/// [`StateId`] order.
pub fn enumerate_states(
    n_items: usize,
    n_arms: usize,
    grids: &Grids,
    filter: impl Fn(&HubState) -> bool,
) -> Result<Vec<HubState>> {
    let utilities = grids.utility_levels.functions(n_items);
    let points = grids.simplex_resolution.points(n_items);
    let p = points.len();
    let per_utility = p.pow(n_arms as u32);
    let mut out = Vec::new();
    for u in &utilities {
        for mut code in 0..per_utility {
            let mut arm_dists = Vec::with_capacity(n_arms);
            for _ in 0..n_arms {
                arm_dists.push(points[code % p].clone());
                code /= p;
            }
            let s = HubState {
                utility: u.clone(),
                arm_dists,
            };
            if filter(&s) {
                out.push(s);
            }
        }
    }
    if out.is_empty() {
        return Err(HubError::EmptyStateSpace);
    }
    Ok(out)
}

/// Reward computed directly from a materialized state.
pub fn reward(model: &HubPomdpModel, state: &HubState, action: PomdpAction) -> Result<f64> {
    model.check_action(action)?;
    Ok(match action {
        PomdpAction::Pull(k) => state.arm_value(k),
        _ => model.teachers()[model.answering_teacher(action).unwrap()].cost,
    })
}

/// Observation likelihood computed directly from a materialized state.
pub fn observation_probability(
    model: &HubPomdpModel,
    state: &HubState,
    action: PomdpAction,
    obs: &AgentObservation,
) -> Result<f64> {
    model.check_observation(action, obs)?;
    Ok(match *obs {
        AgentObservation::ItemSample { arm, item } => state.arm_dists[arm][item],
        AgentObservation::PreferenceSample {
            teacher,
            pair: (i, j),
            preferred_first,
        } => {
            let beta = model.teachers()[teacher].beta;
            let p = preference_probability(state.utility[i], state.utility[j], beta);
            let q = model.spec().query_profile.presentation_prob(i, j);
            q * if preferred_first { p } else { 1.0 - p }
        }
    })
}

/// Probability distribution over the model's states.
#[derive(Debug, Clone, PartialEq)]
pub enum Belief {
    /// One weight per enumerated state, in enumeration order.
    Dense(Vec<f64>),
    /// Independent marginals over the utility function and each arm.
    Factored { utility: Vec<f64>, arms: Vec<Vec<f64>> },
}

/// Uniform belief over the model's states.
pub fn initial_belief(model: &HubPomdpModel) -> Belief {
    if model.is_filtered() {
        let n = model.state_count() as usize;
        Belief::Dense(vec![1.0 / n as f64; n])
    } else {
        let u = model.utilities.len();
        let p = model.points.len();
        Belief::Factored {
            utility: vec![1.0 / u as f64; u],
            arms: vec![vec![1.0 / p as f64; p]; model.n_arms()],
        }
    }
}

fn normalize(weights: &mut [f64]) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(HubError::ImpossibleObservation);
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(())
}

/// Bayes update after taking `action` and seeing `obs`. States never change,
/// so the posterior is the prior reweighted by the observation likelihood.
pub fn update_belief(
    model: &HubPomdpModel,
    belief: &Belief,
    action: PomdpAction,
    obs: &AgentObservation,
) -> Result<Belief> {
    model.check_observation(action, obs)?;
    match belief {
        Belief::Dense(w) => {
            let mut post: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(pos, &wi)| {
                    if wi == 0.0 {
                        0.0
                    } else {
                        wi * model.observation_probability_unchecked(model.state_id(pos), action, obs)
                    }
                })
                .collect();
            normalize(&mut post)?;
            Ok(Belief::Dense(post))
        }
        Belief::Factored { utility, arms } => match *obs {
            AgentObservation::ItemSample { arm, item } => {
                let mut arms = arms.clone();
                for (w, point) in arms[arm].iter_mut().zip(&model.points) {
                    *w *= point[item];
                }
                normalize(&mut arms[arm])?;
                Ok(Belief::Factored {
                    utility: utility.clone(),
                    arms,
                })
            }
            AgentObservation::PreferenceSample {
                teacher,
                pair,
                preferred_first,
            } => {
                let mut utility: Vec<f64> = utility
                    .iter()
                    .enumerate()
                    .map(|(u, &w)| w * model.preference_likelihood(u, teacher, pair, preferred_first))
                    .collect();
                normalize(&mut utility)?;
                Ok(Belief::Factored {
                    utility,
                    arms: arms.clone(),
                })
            }
        },
    }
}

impl Belief {
    /// Weight of state `id`.
    pub fn weight(&self, model: &HubPomdpModel, id: StateId) -> f64 {
        match self {
            Belief::Dense(w) => match &model.support {
                Some(s) => s.binary_search(&id).map_or(0.0, |pos| w[pos]),
                None => w[id as usize],
            },
            Belief::Factored { utility, arms } => {
                let mut p = utility[model.utility_index(id)];
                for (k, a) in arms.iter().enumerate() {
                    p *= a[model.point_index(id, k)];
                }
                p
            }
        }
    }

    /// Expands to one weight per enumerated state. Intended for small models.
    pub fn to_dense(&self, model: &HubPomdpModel) -> Vec<f64> {
        match self {
            Belief::Dense(w) => w.clone(),
            Belief::Factored { .. } => (0..model.state_count() as usize)
                .map(|pos| self.weight(model, model.state_id(pos)))
                .collect(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Belief::Dense(w) => w.iter().sum(),
            Belief::Factored { utility, arms } => {
                utility.iter().sum::<f64>() * arms.iter().map(|a| a.iter().sum::<f64>()).product::<f64>()
            }
        }
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        fn h(w: &[f64]) -> f64 {
            w.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
        }
        match self {
            Belief::Dense(w) => h(w),
            Belief::Factored { utility, arms } => h(utility) + arms.iter().map(|a| h(a)).sum::<f64>(),
        }
    }

    /// Posterior mean of every item's utility.
    pub fn mean_utility(&self, model: &HubPomdpModel) -> Vec<f64> {
        let n = model.n_items();
        let mut out = vec![0.0; n];
        match self {
            Belief::Dense(w) => {
                for (pos, &wi) in w.iter().enumerate() {
                    if wi > 0.0 {
                        let u = &model.utilities[model.utility_index(model.state_id(pos))];
                        for (o, x) in out.iter_mut().zip(u) {
                            *o += wi * x;
                        }
                    }
                }
            }
            Belief::Factored { utility, .. } => {
                for (wi, u) in utility.iter().zip(&model.utilities) {
                    for (o, x) in out.iter_mut().zip(u) {
                        *o += wi * x;
                    }
                }
            }
        }
        out
    }

    /// Posterior expected utility of pulling each arm.
    pub fn mean_arm_values(&self, model: &HubPomdpModel) -> Vec<f64> {
        let k = model.n_arms();
        let p = model.points.len();
        match self {
            Belief::Dense(w) => {
                let mut out = vec![0.0; k];
                for (pos, &wi) in w.iter().enumerate() {
                    if wi > 0.0 {
                        let id = model.state_id(pos);
                        for (arm, o) in out.iter_mut().enumerate() {
                            *o += wi * model.arm_value(id, arm);
                        }
                    }
                }
                out
            }
            Belief::Factored { utility, arms } => arms
                .iter()
                .map(|a| {
                    let mut v = 0.0;
                    for (ui, &wu) in utility.iter().enumerate() {
                        if wu > 0.0 {
                            let row = &model.arm_value[ui * p..(ui + 1) * p];
                            v += wu * row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                    v
                })
                .collect(),
        }
    }

    /// Prepares repeated sampling of states from this belief.
    pub fn sampler(&self, model: &HubPomdpModel) -> BeliefSampler {
        fn cdf(w: &[f64]) -> Vec<f64> {
            let mut acc = 0.0;
            w.iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect()
        }
        match self {
            Belief::Dense(w) => BeliefSampler {
                factors: vec![cdf(w)],
                ids: Some((0..w.len()).map(|pos| model.state_id(pos)).collect()),
                point_pow: model.point_pow.clone(),
            },
            Belief::Factored { utility, arms } => {
                let mut factors = vec![cdf(utility)];
                factors.extend(arms.iter().map(|a| cdf(a)));
                BeliefSampler {
                    factors,
                    ids: None,
                    point_pow: model.point_pow.clone(),
                }
            }
        }
    }
}

/// Draws states from a [`Belief`] by inverse-CDF lookup.
#[derive(Debug, Clone)]
pub struct BeliefSampler {
    factors: Vec<Vec<f64>>,
    ids: Option<Vec<StateId>>,
    point_pow: Vec<u64>,
}

impl BeliefSampler {
    fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
        let total = *cdf.last().unwrap();
        let x = rng.gen::<f64>() * total;
        cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        match &self.ids {
            Some(ids) => ids[Self::draw(&self.factors[0], rng)],
            None => {
                let n_arms = self.factors.len() - 1;
                let mut id = Self::draw(&self.factors[0], rng) as u64 * self.point_pow[n_arms];
                for k in 0..n_arms {
                    id += Self::draw(&self.factors[k + 1], rng) as u64 * self.point_pow[k];
                }
                id
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hub::PairProb;
    use crate::seeded_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small_spec(mode: SelectionMode) -> PomdpSpec {
        PomdpSpec {
            n_items: 2,
            n_arms: 1,
            grids: Grids {
                utility_levels: UtilityGrid::new(vec![0.0, 10.0]).unwrap(),
                simplex_resolution: SimplexGrid::new(2).unwrap(),
            },
            teachers: vec![
                Teacher::new("coin", 0.0, 0.0).unwrap(),
                Teacher::new("sharp", 2.0, -1.0).unwrap(),
            ],
            query_profile: QueryProfile::uniform(2),
            gamma: 0.9,
            mode,
        }
    }

    fn rec_like_spec() -> PomdpSpec {
        PomdpSpec {
            n_items: 3,
            n_arms: 2,
            grids: Grids {
                utility_levels: UtilityGrid::new(vec![0.0, 5.0, 10.0]).unwrap(),
                simplex_resolution: SimplexGrid::new(2).unwrap(),
            },
            teachers: vec![
                Teacher::new("a", 0.0, 0.0).unwrap(),
                Teacher::new("b", 0.3, -0.5).unwrap(),
                Teacher::new("c", 5.0, -1.0).unwrap(),
            ],
            query_profile: QueryProfile {
                pairs: vec![
                    PairProb { i: 0, j: 1, prob: 0.5 },
                    PairProb { i: 0, j: 2, prob: 0.3 },
                    PairProb { i: 1, j: 2, prob: 0.2 },
                ],
            },
            gamma: 0.95,
            mode: SelectionMode::Specific,
        }
    }

    #[test]
    fn grid_validation() {
        assert!(UtilityGrid::new(vec![1.0]).is_err());
        assert!(UtilityGrid::new(vec![0.0, 0.0, 1.0]).is_err());
        assert!(SimplexGrid::new(1).is_err());
        let g = UtilityGrid::evenly_spaced(0.0, 9.0, 10).unwrap();
        assert_eq!(g.levels(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn simplex_points_are_all_compositions() {
        for (r, n) in [(2, 2), (4, 3), (3, 4), (5, 3)] {
            let g = SimplexGrid::new(r).unwrap();
            let pts = g.points(n);
            assert_eq!(pts.len(), g.count(n));
            for p in &pts {
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(g.contains(p));
            }
            let mut dedup = pts.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), pts.len());
        }
        assert_eq!(SimplexGrid::new(4).unwrap().count(3), 15);
    }

    #[test]
    fn twelve_state_example() {
        let grids = small_spec(SelectionMode::Specific).grids;
        let states = enumerate_states(2, 1, &grids, |_| true).unwrap();
        assert_eq!(states.len(), 12);
        let model = HubPomdpModel::new(small_spec(SelectionMode::Specific)).unwrap();
        assert_eq!(model.state_count(), 12);
        for (pos, s) in states.iter().enumerate() {
            assert_eq!(&model.state(model.state_id(pos)), s);
            assert_eq!(model.find_state(s), Some(pos as StateId));
        }
    }

    #[test]
    fn filter_keeps_only_accepted_states() {
        let spec = rec_like_spec();
        let states = enumerate_states(3, 2, &spec.grids, |s| {
            s.best_arm() == 0 && s.arm_value(0) > s.arm_value(1)
        })
        .unwrap();
        assert!(states.iter().all(|s| s.best_arm() == 0));
        let model = HubPomdpModel::filtered(spec, |s| s.arm_value(0) > s.arm_value(1)).unwrap();
        assert_eq!(model.state_count() as usize, states.len());
        for pos in 0..model.state_count() as usize {
            assert_eq!(model.best_arm(model.state_id(pos)), 0);
        }
        assert!(matches!(
            HubPomdpModel::filtered(rec_like_spec(), |_| false),
            Err(HubError::EmptyStateSpace)
        ));
    }

    #[test]
    fn covid_grids_are_about_five_times_larger() {
        let rec = Grids::recommendation().state_count(3, 3);
        let covid = Grids::covid().state_count(3, 3);
        assert_eq!(rec, 729_000);
        let ratio = covid as f64 / rec as f64;
        assert!((ratio - 5.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn action_spaces() {
        let spec = rec_like_spec();
        let specific = HubPomdpModel::new(spec.clone()).unwrap();
        assert_eq!(specific.actions().len(), 2 + 3);
        let general = HubPomdpModel::new(PomdpSpec {
            mode: SelectionMode::General { teacher: 1 },
            ..spec
        })
        .unwrap();
        assert_eq!(general.actions().len(), 2 + 1);
        assert!(specific.reward(0, PomdpAction::QueryGeneral).is_err());
        assert!(general.reward(0, PomdpAction::QuerySpecific(0)).is_err());
        assert_eq!(general.reward(0, PomdpAction::QueryGeneral).unwrap(), -0.5);
        assert!(specific.reward(0, PomdpAction::Pull(2)).is_err());
    }

    #[test]
    fn reward_examples() {
        let model = HubPomdpModel::new(PomdpSpec {
            grids: Grids::recommendation(),
            ..rec_like_spec()
        })
        .unwrap();
        let u = model
            .utility_functions()
            .iter()
            .position(|u| u == &vec![8.0, 2.0, 0.0])
            .unwrap();
        let point_mass = model
            .simplex_points()
            .iter()
            .position(|p| p == &vec![1.0, 0.0, 0.0])
            .unwrap();
        let id = model.pack(u, &[point_mass, 0]);
        assert_eq!(model.reward(id, PomdpAction::Pull(0)).unwrap(), 8.0);
        assert_eq!(model.reward(id, PomdpAction::QuerySpecific(0)).unwrap(), 0.0);
        assert_eq!(reward(&model, &model.state(id), PomdpAction::Pull(0)).unwrap(), 8.0);
    }

    #[test]
    fn observation_examples() {
        let model = HubPomdpModel::new(small_spec(SelectionMode::Specific)).unwrap();
        let pm = model
            .simplex_points()
            .iter()
            .position(|p| p == &vec![0.0, 1.0])
            .unwrap();
        let id = model.pack(0, &[pm]);
        let pull = PomdpAction::Pull(0);
        assert_eq!(
            model
                .observation_probability(id, pull, &AgentObservation::ItemSample { arm: 0, item: 1 })
                .unwrap(),
            1.0
        );
        assert_eq!(
            model
                .observation_probability(id, pull, &AgentObservation::ItemSample { arm: 0, item: 0 })
                .unwrap(),
            0.0
        );

        let q = PomdpAction::QuerySpecific(0);
        for pf in [true, false] {
            let obs = AgentObservation::PreferenceSample {
                teacher: 0,
                pair: (1, 0),
                preferred_first: pf,
            };
            let qp = model.spec().query_profile.presentation_prob(1, 0);
            assert_eq!(model.observation_probability(id, q, &obs).unwrap(), qp * 0.5);
        }

        let wrong = AgentObservation::PreferenceSample {
            teacher: 1,
            pair: (0, 1),
            preferred_first: true,
        };
        assert!(matches!(
            model.observation_probability(id, q, &wrong),
            Err(HubError::MismatchedObservation(_))
        ));
        assert!(model
            .observation_probability(id, pull, &AgentObservation::ItemSample { arm: 1, item: 0 })
            .is_err());
    }

    #[test]
    fn observation_probabilities_sum_to_one() {
        let model = HubPomdpModel::new(rec_like_spec()).unwrap();
        let general = HubPomdpModel::new(PomdpSpec {
            mode: SelectionMode::General { teacher: 2 },
            ..rec_like_spec()
        })
        .unwrap();
        for m in [&model, &general] {
            for id in 0..m.state_count() {
                let state = m.state(id);
                for &a in m.actions() {
                    let mut total = 0.0;
                    for obs in m.observations(a) {
                        let p = m.observation_probability(id, a, &obs).unwrap();
                        let direct = observation_probability(m, &state, a, &obs).unwrap();
                        assert_abs_diff_eq!(p, direct, epsilon = 1e-12);
                        total += p;
                    }
                    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn initial_belief_is_uniform() {
        let model = HubPomdpModel::new(small_spec(SelectionMode::Specific)).unwrap();
        let b = initial_belief(&model);
        let dense = b.to_dense(&model);
        assert_eq!(dense.len(), 12);
        for w in &dense {
            assert_abs_diff_eq!(*w, 1.0 / 12.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(b.total_mass(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.entropy(), 12f64.ln(), epsilon = 1e-12);

        let filtered = HubPomdpModel::filtered(small_spec(SelectionMode::Specific), |_| true).unwrap();
        let d = initial_belief(&filtered);
        assert!(matches!(d, Belief::Dense(_)));
        assert_abs_diff_eq!(d.entropy(), 12f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn uninformative_observation_leaves_belief_unchanged() {
        let model = HubPomdpModel::new(small_spec(SelectionMode::Specific)).unwrap();
        let mut rng = seeded_rng(0);
        let mut b = initial_belief(&model);
        // make the prior non-uniform first
        for _ in 0..3 {
            let obs = model.sample_observation(5, PomdpAction::QuerySpecific(1), &mut rng);
            b = update_belief(&model, &b, PomdpAction::QuerySpecific(1), &obs).unwrap();
        }
        let obs = AgentObservation::PreferenceSample {
            teacher: 0,
            pair: (0, 1),
            preferred_first: true,
        };
        let after = update_belief(&model, &b, PomdpAction::QuerySpecific(0), &obs).unwrap();
        for (x, y) in b.to_dense(&model).iter().zip(after.to_dense(&model)) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn point_mass_prior_stays_a_point_mass() {
        let model = HubPomdpModel::filtered(small_spec(SelectionMode::Specific), |_| true).unwrap();
        let mut w = vec![0.0; 12];
        w[7] = 1.0;
        let b = Belief::Dense(w.clone());
        let mut rng = seeded_rng(4);
        let obs = model.sample_observation(7, PomdpAction::Pull(0), &mut rng);
        let after = update_belief(&model, &b, PomdpAction::Pull(0), &obs).unwrap();
        assert_eq!(after, Belief::Dense(w));
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let model = HubPomdpModel::filtered(small_spec(SelectionMode::Specific), |_| true).unwrap();
        let pm = model
            .simplex_points()
            .iter()
            .position(|p| p == &vec![1.0, 0.0])
            .unwrap();
        let id = model.pack(0, &[pm]);
        let mut w = vec![0.0; 12];
        w[id as usize] = 1.0;
        let obs = AgentObservation::ItemSample { arm: 0, item: 1 };
        assert!(matches!(
            update_belief(&model, &Belief::Dense(w), PomdpAction::Pull(0), &obs),
            Err(HubError::ImpossibleObservation)
        ));
    }

    #[test]
    fn exact_filter_finds_the_true_state() {
        let model = HubPomdpModel::new(small_spec(SelectionMode::Specific)).unwrap();
        // utility (0, 10) with arm distribution (0.5, 0.5); constant utilities are not identifiable
        let truth = 4;
        let mut rng = seeded_rng(12);
        let mut b = initial_belief(&model);
        for t in 0..200 {
            let a = if t % 2 == 0 {
                PomdpAction::Pull(0)
            } else {
                PomdpAction::QuerySpecific(1)
            };
            let obs = model.sample_observation(truth, a, &mut rng);
            b = update_belief(&model, &b, a, &obs).unwrap();
        }
        let dense = b.to_dense(&model);
        let mode = crate::hub::argmax(&dense);
        assert_eq!(model.state_id(mode), truth);
    }

    #[test]
    fn factored_and_dense_filters_agree() {
        let spec = rec_like_spec();
        let factored_model = HubPomdpModel::new(spec.clone()).unwrap();
        let dense_model = HubPomdpModel::filtered(spec, |_| true).unwrap();
        let mut factored = initial_belief(&factored_model);
        let mut dense = initial_belief(&dense_model);
        let mut rng = seeded_rng(77);
        let truth = 1234 % factored_model.state_count();
        for t in 0..60 {
            let a = factored_model.actions()[t % factored_model.actions().len()];
            let obs = factored_model.sample_observation(truth, a, &mut rng);
            factored = update_belief(&factored_model, &factored, a, &obs).unwrap();
            dense = update_belief(&dense_model, &dense, a, &obs).unwrap();
        }
        for (x, y) in factored
            .to_dense(&factored_model)
            .iter()
            .zip(dense.to_dense(&dense_model))
        {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
        let (mu_f, mu_d) = (factored.mean_utility(&factored_model), dense.mean_utility(&dense_model));
        let (av_f, av_d) = (
            factored.mean_arm_values(&factored_model),
            dense.mean_arm_values(&dense_model),
        );
        for (x, y) in mu_f.iter().zip(&mu_d).chain(av_f.iter().zip(&av_d)) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-9);
        }
    }

    #[test]
    fn sampler_matches_belief_weights() {
        let model = HubPomdpModel::new(small_spec(SelectionMode::Specific)).unwrap();
        let mut rng = seeded_rng(8);
        let mut b = initial_belief(&model);
        for _ in 0..4 {
            let obs = model.sample_observation(3, PomdpAction::Pull(0), &mut rng);
            b = update_belief(&model, &b, PomdpAction::Pull(0), &obs).unwrap();
        }
        let sampler = b.sampler(&model);
        let n = 50_000;
        let mut counts = [0usize; 12];
        for _ in 0..n {
            counts[sampler.sample(&mut rng) as usize] += 1;
        }
        for (c, w) in counts.iter().zip(b.to_dense(&model)) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.01);
        }
    }

    proptest! {
        #[test]
        fn updates_commute(seed in 0u64..1000, perm in Just((0..12).collect::<Vec<usize>>()).prop_shuffle()) {
            let model = HubPomdpModel::new(rec_like_spec()).unwrap();
            let mut rng = seeded_rng(seed);
            let truth = seed % model.state_count();
            let seq: Vec<(PomdpAction, AgentObservation)> = (0..12)
                .map(|t| {
                    let a = model.actions()[t % model.actions().len()];
                    (a, model.sample_observation(truth, a, &mut rng))
                })
                .collect();
            let mut forward = initial_belief(&model);
            for (a, o) in &seq {
                forward = update_belief(&model, &forward, *a, o).unwrap();
            }
            let mut shuffled = initial_belief(&model);
            for &i in &perm {
                shuffled = update_belief(&model, &shuffled, seq[i].0, &seq[i].1).unwrap();
            }
            for (x, y) in forward.to_dense(&model).iter().zip(shuffled.to_dense(&model)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

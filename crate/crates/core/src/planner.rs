//! POMCPOW online planning over a [`HubPomdpModel`] and the ATS episode loop.
//!
//! Each call to [`plan`] grows a fresh search tree from the current belief.
//! Belief nodes hold weighted particle sets; action nodes widen their
//! observation children slowly (`children ≤ k·N^α`) because preference
//! observations are numerous and individually uninformative.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{execute, EpisodeLog};
use crate::error::{HubError, Result};
use crate::hub::{AgentObservation, HubInstance};
use crate::pomdp::{initial_belief, update_belief, Belief, HubPomdpModel, PomdpAction, StateId};

/// Policy used to value newly created leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RolloutPolicy {
    RandomAction,
    RandomArm,
    #[default]
    BestArm,
}

impl RolloutPolicy {
    pub const ALL: [RolloutPolicy; 3] = [
        RolloutPolicy::BestArm,
        RolloutPolicy::RandomArm,
        RolloutPolicy::RandomAction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RolloutPolicy::RandomAction => "RandomAction",
            RolloutPolicy::RandomArm => "RandomArm",
            RolloutPolicy::BestArm => "BestArm",
        }
    }
}

impl std::str::FromStr for RolloutPolicy {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "randomaction" => Ok(RolloutPolicy::RandomAction),
            "randomarm" => Ok(RolloutPolicy::RandomArm),
            "bestarm" => Ok(RolloutPolicy::BestArm),
            _ => Err(HubError::InvalidParameter(format!("unknown rollout policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub simulations_per_step: usize,
    pub max_depth: usize,
    pub ucb_exploration: f64,
    pub obs_widen_k: f64,
    pub obs_widen_alpha: f64,
    pub rollout_policy: RolloutPolicy,
    pub discount: f64,
    /// Leaf rollouts stop this many steps below the tree or at the end of the
    /// episode, whichever comes first. `None` always runs to the end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_horizon: Option<usize>,
}

impl PlannerParams {
    /// Defaults scaled to the model's utility range and discount.
    pub fn defaults_for(model: &HubPomdpModel) -> Self {
        let grid = &model.spec().grids.utility_levels;
        let gamma = model.gamma();
        PlannerParams {
            simulations_per_step: 1000,
            max_depth: 30,
            ucb_exploration: 0.1 * (grid.u_max() - grid.u_min()) / (1.0 - gamma),
            obs_widen_k: 3.0,
            obs_widen_alpha: 0.15,
            rollout_policy: RolloutPolicy::BestArm,
            discount: gamma,
            rollout_horizon: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HubError::InvalidParameter(msg));
        if self.simulations_per_step == 0 {
            return bad("simulations_per_step must be positive".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        if !(self.ucb_exploration >= 0.0) || !self.ucb_exploration.is_finite() {
            return bad(format!(
                "ucb_exploration must be finite and non-negative, got {}",
                self.ucb_exploration
            ));
        }
        if !(self.obs_widen_k >= 1.0) || !self.obs_widen_k.is_finite() {
            return bad(format!("obs_widen_k must be at least 1, got {}", self.obs_widen_k));
        }
        if !(0.0..1.0).contains(&self.obs_widen_alpha) {
            return bad(format!(
                "obs_widen_alpha must lie in [0, 1), got {}",
                self.obs_widen_alpha
            ));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        Ok(())
    }

    fn validate_for(&self, model: &HubPomdpModel) -> Result<()> {
        self.validate()?;
        if (self.discount - model.gamma()).abs() > 1e-12 {
            return Err(HubError::InvalidParameter(format!(
                "planner discount {} differs from model discount {}",
                self.discount,
                model.gamma()
            )));
        }
        Ok(())
    }
}

/// Summary of one planning call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStats {
    pub action: PomdpAction,
    pub depth: usize,
    pub belief_nodes: usize,
    pub action_nodes: usize,
    /// Mean simulated return per root action, in model action order.
    pub root_values: Vec<f64>,
    /// Mean return minus the clairvoyant baseline; the chosen action
    /// maximizes this.
    pub root_scores: Vec<f64>,
    pub root_visits: Vec<u32>,
    /// Times an empty particle set was refilled from the root.
    pub invigorations: usize,
}

/// UCB1 selection. Unvisited actions come first, lowest index first; ties
/// otherwise go to the lowest index.
pub fn ucb_select(values: &[f64], visits: &[u32], parent_visits: u32, c: f64) -> usize {
    if let Some(i) = visits.iter().position(|&n| n == 0) {
        return i;
    }
    let ln_n = (parent_visits.max(1) as f64).ln();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (&q, &n)) in values.iter().zip(visits).enumerate() {
        let score = q + c * (ln_n / n as f64).sqrt();
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// `Σ_{t<d} γ^t`.
fn discount_sum(gamma: f64, depth: usize) -> f64 {
    (1.0 - gamma.powi(depth as i32)) / (1.0 - gamma)
}

/// Discounted return of `policy` from the fixed state `state` over `depth`
/// steps. `best_arm` is the arm the leaf belief favours and is only used by
/// [`RolloutPolicy::BestArm`].
pub fn rollout_value<R: Rng + ?Sized>(
    model: &HubPomdpModel,
    policy: RolloutPolicy,
    state: StateId,
    best_arm: usize,
    depth: usize,
    rng: &mut R,
) -> f64 {
    let gamma = model.gamma();
    match policy {
        RolloutPolicy::BestArm => model.arm_value(state, best_arm) * discount_sum(gamma, depth),
        RolloutPolicy::RandomArm => {
            let mut g = 1.0;
            let mut total = 0.0;
            for _ in 0..depth {
                total += g * model.arm_value(state, rng.gen_range(0..model.n_arms()));
                g *= gamma;
            }
            total
        }
        RolloutPolicy::RandomAction => {
            let actions = model.actions();
            let mut g = 1.0;
            let mut total = 0.0;
            for _ in 0..depth {
                total += g * model.reward_unchecked(state, *actions.choose(rng).unwrap());
                g *= gamma;
            }
            total
        }
    }
}

const UNEXPANDED: u32 = u32::MAX;
/// Size of the evaluation sample behind BestArm leaf choices.
const LEAF_SAMPLE: usize = 100;

struct BeliefNode {
    visits: u32,
    first_action: u32,
    particles: Vec<StateId>,
    weights: Vec<f64>,
    total_weight: f64,
}

impl BeliefNode {
    fn new() -> Self {
        BeliefNode {
            visits: 0,
            first_action: UNEXPANDED,
            particles: Vec::new(),
            weights: Vec::new(),
            total_weight: 0.0,
        }
    }

    fn push(&mut self, s: StateId, w: f64) {
        self.particles.push(s);
        self.weights.push(w);
        self.total_weight += w;
    }
}

struct ObsChild {
    obs: AgentObservation,
    node: u32,
    count: u32,
}

struct ActionNode {
    visits: u32,
    /// Running mean of returns.
    value: f64,
    /// Running mean of returns minus the state baseline; drives selection.
    score: f64,
    children: Vec<ObsChild>,
}

struct Search<'a, R: Rng + ?Sized> {
    model: &'a HubPomdpModel,
    params: &'a PlannerParams,
    rng: &'a mut R,
    beliefs: Vec<BeliefNode>,
    actions: Vec<ActionNode>,
    invigorations: usize,
    /// Tree depth at the root.
    root_depth: usize,
    /// Steps left in the episode at the root; no rollout runs past it.
    remaining: usize,
    /// Independent draw from the root belief for leaf arm choices.
    eval_particles: Vec<StateId>,
    /// Per tree level, weights of `eval_particles` given the observations on
    /// the current path. Only maintained for BestArm rollouts.
    path_weights: Vec<Vec<f64>>,
    root_best_arm: usize,
}

impl<R: Rng + ?Sized> Search<'_, R> {
    fn expand(&mut self, node: usize) -> usize {
        if self.beliefs[node].first_action == UNEXPANDED {
            self.beliefs[node].first_action = self.actions.len() as u32;
            for _ in 0..self.model.actions().len() {
                self.actions.push(ActionNode {
                    visits: 0,
                    value: 0.0,
                    score: 0.0,
                    children: Vec::new(),
                });
            }
        }
        self.beliefs[node].first_action as usize
    }

    fn select_action(&self, node: usize, first: usize) -> usize {
        let n = self.model.actions().len();
        let slice = &self.actions[first..first + n];
        let values: Vec<f64> = slice.iter().map(|a| a.score).collect();
        let visits: Vec<u32> = slice.iter().map(|a| a.visits).collect();
        ucb_select(&values, &visits, self.beliefs[node].visits, self.params.ucb_exploration)
    }

    /// Arm with the highest expected utility at tree level `level + 1`
    /// after `(action, obs)`, or at `level` itself without an observation.
    ///
    /// The belief there is estimated from the evaluation sample reweighted by
    /// the observations on the path. The sample is drawn independently of the
    /// simulated states; a node's own particles contain the simulated state
    /// and would make the choice clairvoyant.
    fn leaf_best_arm(&self, level: usize, step: Option<(PomdpAction, &AgentObservation)>) -> usize {
        let mut values = vec![0.0; self.model.n_arms()];
        let mut mass = 0.0;
        for (&s, &w) in self.eval_particles.iter().zip(&self.path_weights[level]) {
            let w = match step {
                Some((action, obs)) if w > 0.0 => w * self.model.observation_probability_unchecked(s, action, obs),
                _ => w,
            };
            if w > 0.0 {
                mass += w;
                for (arm, v) in values.iter_mut().enumerate() {
                    *v += w * self.model.arm_value(s, arm);
                }
            }
        }
        if mass > 0.0 {
            crate::hub::argmax(&values)
        } else {
            self.root_best_arm
        }
    }

    /// Evaluation weights for level `level + 1` after `(action, obs)`.
    fn descend_weights(&mut self, level: usize, action: PomdpAction, obs: &AgentObservation) {
        if self.path_weights.len() <= level + 1 {
            self.path_weights.push(Vec::new());
        }
        let (head, tail) = self.path_weights.split_at_mut(level + 1);
        let next = &mut tail[0];
        next.clear();
        next.extend(self.eval_particles.iter().zip(&head[level]).map(|(&s, &w)| {
            if w > 0.0 {
                w * self.model.observation_probability_unchecked(s, action, obs)
            } else {
                0.0
            }
        }));
    }

    /// Rollout length below a node whose tree depth is `depth`.
    fn steps_to_end(&self, depth: usize) -> usize {
        let full = self.remaining - (self.root_depth - depth);
        match self.params.rollout_horizon {
            Some(extra) => full.min(depth + extra),
            None => full,
        }
    }

    /// Value of the clairvoyant policy from `s` over `steps`. Subtracted from
    /// every backed-up return as a control variate: it depends on the state
    /// alone, so it shifts all actions at a node equally in expectation, while
    /// cancelling the spread of returns across sampled states.
    fn baseline(&self, s: StateId, steps: usize) -> f64 {
        self.model.arm_value(s, self.model.best_arm(s)) * discount_sum(self.model.gamma(), steps)
    }

    fn sample_particle(
        &mut self,
        node: usize,
        action: PomdpAction,
        obs: &AgentObservation,
        fallback: StateId,
    ) -> StateId {
        if self.beliefs[node].total_weight <= 0.0 {
            // Every particle here contradicts the observation. Refill from the
            // root particles that are consistent with it.
            self.invigorations += 1;
            log::debug!("particle invigoration at node {node}");
            let root = &self.beliefs[0];
            let reweighted: Vec<(StateId, f64)> = root
                .particles
                .iter()
                .map(|&s| (s, self.model.observation_probability_unchecked(s, action, obs)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            if reweighted.is_empty() {
                return fallback;
            }
            let b = &mut self.beliefs[node];
            for (s, w) in reweighted {
                b.push(s, w);
            }
        }
        let b = &self.beliefs[node];
        let x = self.rng.gen::<f64>() * b.total_weight;
        let mut acc = 0.0;
        for (&s, &w) in b.particles.iter().zip(&b.weights) {
            acc += w;
            if x < acc {
                return s;
            }
        }
        *b.particles
            .iter()
            .zip(&b.weights)
            .rev()
            .find(|(_, &w)| w > 0.0)
            .unwrap()
            .0
    }

    fn simulate(&mut self, s: StateId, node: usize, depth: usize) -> f64 {
        if depth == 0 {
            let steps = self.steps_to_end(0);
            if steps == 0 {
                return 0.0;
            }
            let best = match self.params.rollout_policy {
                RolloutPolicy::BestArm => self.leaf_best_arm(self.root_depth, None),
                _ => 0,
            };
            return rollout_value(self.model, self.params.rollout_policy, s, best, steps, self.rng);
        }
        let first = self.expand(node);
        let a_idx = self.select_action(node, first);
        let action = self.model.actions()[a_idx];
        let an = first + a_idx;
        self.actions[an].visits += 1;
        let r = self.model.reward_unchecked(s, action);

        let n_children = self.actions[an].children.len();
        let widen = (n_children + 1) as f64
            <= self.params.obs_widen_k * (self.actions[an].visits as f64).powf(self.params.obs_widen_alpha);
        let (obs, existing) = if widen {
            let o = self.model.sample_observation(s, action, self.rng);
            let pos = self.actions[an].children.iter().position(|c| c.obs == o);
            (o, pos)
        } else {
            let total: u32 = self.actions[an].children.iter().map(|c| c.count).sum();
            let mut x = self.rng.gen_range(0..total);
            let mut pick = 0;
            for (i, c) in self.actions[an].children.iter().enumerate() {
                if x < c.count {
                    pick = i;
                    break;
                }
                x -= c.count;
            }
            (self.actions[an].children[pick].obs, Some(pick))
        };

        let w = self.model.observation_probability_unchecked(s, action, &obs);
        let total = match existing {
            None => {
                let child = self.beliefs.len();
                let mut b = BeliefNode::new();
                b.push(s, w);
                self.beliefs.push(b);
                self.actions[an].children.push(ObsChild {
                    obs,
                    node: child as u32,
                    count: 1,
                });
                let best = match self.params.rollout_policy {
                    RolloutPolicy::BestArm => self.leaf_best_arm(self.root_depth - depth, Some((action, &obs))),
                    _ => 0,
                };
                let steps = self.steps_to_end(depth - 1);
                let v = rollout_value(self.model, self.params.rollout_policy, s, best, steps, self.rng);
                r + self.model.gamma() * v
            }
            Some(i) => {
                self.actions[an].children[i].count += 1;
                let child = self.actions[an].children[i].node as usize;
                self.beliefs[child].push(s, w);
                // With identity transitions a state that generated `obs` is
                // already a draw from the child's belief. Resampling is only
                // needed when `obs` was picked among existing children.
                let next = if widen {
                    s
                } else {
                    self.sample_particle(child, action, &obs, s)
                };
                if self.params.rollout_policy == RolloutPolicy::BestArm {
                    self.descend_weights(self.root_depth - depth, action, &obs);
                }
                r + self.model.gamma() * self.simulate(next, child, depth - 1)
            }
        };

        self.beliefs[node].visits += 1;
        let advantage = total - self.baseline(s, self.steps_to_end(depth));
        let a = &mut self.actions[an];
        a.value += (total - a.value) / a.visits as f64;
        a.score += (advantage - a.score) / a.visits as f64;
        total
    }
}

/// Chooses an action for `belief` using `params.max_depth` as the lookahead.
pub fn plan<R: Rng + ?Sized>(
    model: &HubPomdpModel,
    belief: &Belief,
    params: &PlannerParams,
    rng: &mut R,
) -> Result<PomdpAction> {
    Ok(plan_with_stats(model, belief, params, params.max_depth, rng)?.action)
}

/// Like [`plan`] for an episode with `remaining` steps left, also returning
/// search statistics. The tree is at most `params.max_depth` deep; leaf
/// rollouts never run past the end of the episode.
pub fn plan_with_stats<R: Rng + ?Sized>(
    model: &HubPomdpModel,
    belief: &Belief,
    params: &PlannerParams,
    remaining: usize,
    rng: &mut R,
) -> Result<PlanStats> {
    params.validate_for(model)?;
    if remaining == 0 {
        return Err(HubError::InvalidParameter("planning horizon must be positive".into()));
    }
    let depth = params.max_depth.min(remaining);
    let sampler = belief.sampler(model);
    let mut root = BeliefNode::new();
    for _ in 0..params.simulations_per_step {
        root.push(sampler.sample(rng), 1.0);
    }
    let starts = root.particles.clone();
    let (eval_particles, root_best_arm) = if params.rollout_policy == RolloutPolicy::BestArm {
        let eval: Vec<StateId> = (0..LEAF_SAMPLE).map(|_| sampler.sample(rng)).collect();
        (eval, crate::hub::argmax(&belief.mean_arm_values(model)))
    } else {
        (Vec::new(), 0)
    };
    let mut search = Search {
        model,
        params,
        rng,
        beliefs: vec![root],
        actions: Vec::new(),
        invigorations: 0,
        root_depth: depth,
        remaining,
        path_weights: vec![vec![1.0; eval_particles.len()]],
        eval_particles,
        root_best_arm,
    };
    for s in starts {
        search.simulate(s, 0, depth);
    }

    let n = model.actions().len();
    let first = search.beliefs[0].first_action as usize;
    let root_values: Vec<f64> = search.actions[first..first + n].iter().map(|a| a.value).collect();
    let root_scores: Vec<f64> = search.actions[first..first + n].iter().map(|a| a.score).collect();
    let root_visits: Vec<u32> = search.actions[first..first + n].iter().map(|a| a.visits).collect();
    let mut best: Option<usize> = None;
    for i in 0..n {
        if root_visits[i] == 0 {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if root_scores[i] > root_scores[b] => Some(i),
            Some(b) if root_scores[i] == root_scores[b] && root_visits[i] > root_visits[b] => Some(i),
            keep => keep,
        };
    }
    Ok(PlanStats {
        action: model.actions()[best.expect("at least one simulation")],
        depth,
        belief_nodes: search.beliefs.len(),
        action_nodes: search.actions.len(),
        root_values,
        root_scores,
        root_visits,
        invigorations: search.invigorations,
    })
}

/// Exact finite-horizon action values by exhaustive expectimax. Only
/// practical for tiny models.
pub fn expectimax_values(model: &HubPomdpModel, belief: &Belief, depth: usize) -> Result<Vec<f64>> {
    fn value(model: &HubPomdpModel, belief: &Belief, depth: usize) -> Result<f64> {
        if depth == 0 {
            return Ok(0.0);
        }
        Ok(expectimax_values(model, belief, depth)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    }
    let weights = belief.to_dense(model);
    let mut out = Vec::with_capacity(model.actions().len());
    for &a in model.actions() {
        let mut q = 0.0;
        for (pos, &w) in weights.iter().enumerate() {
            q += w * model.reward_unchecked(model.state_id(pos), a);
        }
        if depth > 1 {
            for o in model.observations(a) {
                let p: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(pos, &w)| w * model.observation_probability_unchecked(model.state_id(pos), a, &o))
                    .sum();
                if p > 0.0 {
                    let next = update_belief(model, belief, a, &o)?;
                    q += model.gamma() * p * value(model, &next, depth - 1)?;
                }
            }
        }
        out.push(q);
    }
    Ok(out)
}

/// Runs ATS for `horizon` steps: plan, act on `hub`, update the belief.
pub fn run_ats_episode<R: Rng + ?Sized>(
    hub: &HubInstance,
    model: &HubPomdpModel,
    params: &PlannerParams,
    horizon: usize,
    rng: &mut R,
) -> Result<EpisodeLog> {
    run_ats_episode_traced(hub, model, params, horizon, rng, |_, _| {})
}

/// [`run_ats_episode`] with a callback receiving each step's [`PlanStats`].
pub fn run_ats_episode_traced<R: Rng + ?Sized>(
    hub: &HubInstance,
    model: &HubPomdpModel,
    params: &PlannerParams,
    horizon: usize,
    rng: &mut R,
    mut on_plan: impl FnMut(usize, &PlanStats),
) -> Result<EpisodeLog> {
    params.validate_for(model)?;
    if hub.n_arms() != model.n_arms() || hub.n_items() != model.n_items() || hub.n_teachers() != model.n_teachers() {
        return Err(HubError::InvalidParameter("hub and model dimensions differ".into()));
    }
    let label = match model.mode() {
        crate::pomdp::SelectionMode::Specific => "ATS-specific",
        crate::pomdp::SelectionMode::General { .. } => "ATS-general",
    };
    let mut log = EpisodeLog::new(label, hub.gamma);
    let mut belief = initial_belief(model);
    for t in 0..horizon {
        let stats = plan_with_stats(model, &belief, params, horizon - t, rng)?;
        on_plan(t, &stats);
        let env_action = model.env_action(stats.action);
        let outcome = execute(hub, env_action, rng)?;
        match update_belief(model, &belief, stats.action, &outcome.observation) {
            Ok(b) => belief = b,
            Err(HubError::ImpossibleObservation) => {
                log::warn!(
                    "{label}: observation {} impossible under belief, resetting to uniform",
                    outcome.observation
                );
                log.event(format!(
                    "belief reset after impossible observation {}",
                    outcome.observation
                ));
                belief = initial_belief(model);
            }
            Err(e) => return Err(e),
        }
        log.push(
            env_action,
            outcome,
            Some(belief.mean_utility(model)),
            Some(belief.mean_arm_values(model)),
        );
    }
    Ok(log)
}

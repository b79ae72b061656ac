//! Per-step episode records shared by every algorithm.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hub::{pull_arm, query_teacher, AgentObservation, HubInstance};

/// An action executed against the real environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvAction {
    Pull(usize),
    Query(usize),
}

impl EnvAction {
    pub fn is_query(self) -> bool {
        matches!(self, EnvAction::Query(_))
    }

    /// Column index in a `K + M` action-frequency table.
    pub fn column(self, n_arms: usize) -> usize {
        match self {
            EnvAction::Pull(k) => k,
            EnvAction::Query(m) => n_arms + m,
        }
    }
}

impl fmt::Display for EnvAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvAction::Pull(k) => write!(f, "pull:{k}"),
            EnvAction::Query(m) => write!(f, "query:{m}"),
        }
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: AgentObservation,
    /// Utility received from a pull; `None` for queries.
    pub hidden_utility: Option<f64>,
    /// Reward component: the hidden utility for pulls, the query reward for
    /// queries.
    pub reward: f64,
}

/// Executes `action` on the hub.
pub fn execute<R: Rng + ?Sized>(hub: &HubInstance, action: EnvAction, rng: &mut R) -> Result<StepOutcome> {
    Ok(match action {
        EnvAction::Pull(k) => {
            let (observation, u) = pull_arm(hub, k, rng)?;
            StepOutcome {
                observation,
                hidden_utility: Some(u),
                reward: u,
            }
        }
        EnvAction::Query(m) => {
            let (observation, reward) = query_teacher(hub, m, rng)?;
            StepOutcome {
                observation,
                hidden_utility: None,
                reward,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub action: EnvAction,
    pub observation: AgentObservation,
    pub hidden_utility: Option<f64>,
    pub reward: f64,
    pub cumulative_discounted_reward: f64,
    /// Agent's current estimate of every item's utility, when it has one.
    pub utility_estimate: Option<Vec<f64>>,
    /// Agent's current estimate of every arm's expected utility.
    pub arm_value_estimate: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub algorithm: String,
    pub gamma: f64,
    pub rows: Vec<StepRecord>,
    /// Notable events (fallbacks, belief resets) in order of occurrence.
    pub events: Vec<String>,
}

impl EpisodeLog {
    pub fn new(algorithm: impl Into<String>, gamma: f64) -> Self {
        EpisodeLog {
            algorithm: algorithm.into(),
            gamma,
            rows: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        action: EnvAction,
        outcome: StepOutcome,
        utility_estimate: Option<Vec<f64>>,
        arm_value_estimate: Option<Vec<f64>>,
    ) {
        let t = self.rows.len();
        let prev = self.rows.last().map_or(0.0, |r| r.cumulative_discounted_reward);
        let cumulative = prev + self.gamma.powi(t as i32) * outcome.reward;
        self.rows.push(StepRecord {
            t,
            action,
            observation: outcome.observation,
            hidden_utility: outcome.hidden_utility,
            reward: outcome.reward,
            cumulative_discounted_reward: cumulative,
            utility_estimate,
            arm_value_estimate,
        });
    }

    pub fn event(&mut self, msg: impl Into<String>) {
        let t = self.rows.len();
        self.events.push(format!("t={t}: {}", msg.into()));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn discounted_return(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_discounted_reward)
    }

    pub fn query_count(&self) -> usize {
        self.rows.iter().filter(|r| r.action.is_query()).count()
    }

    /// Recomputes the discounted return from the reward column.
    pub fn recompute_return(&self) -> f64 {
        let mut g = 1.0;
        let mut total = 0.0;
        for r in &self.rows {
            total += g * r.reward;
            g *= self.gamma;
        }
        total
    }
}

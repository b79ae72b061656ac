//! Hidden utility bandits.
//!
//! An agent faces a multi-armed bandit whose item utilities are hidden and
//! can only be learned by asking noisy, possibly costly teachers for
//! pairwise preferences. This crate provides:
//!
//! * [`hub`]: the environment and the Boltzmann teacher model,
//! * [`naive`]: explore-then-commit with closed-form utility reconstruction,
//! * [`pomdp`]: the discrete POMDP reduction and exact belief filtering,
//! * [`planner`]: online Monte Carlo tree search with observation widening,
//! * [`beta`]: teacher rationality inference,
//! * [`domains`]: the paper-recommendation and vaccine-testing domains,
//! * [`bench`]: the experiment engine, metrics, and CSV/SVG export.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod beta;
pub mod domains;
pub mod episode;
pub mod error;
pub mod hub;
pub mod naive;
pub mod parallel;
pub mod planner;
pub mod plot;
pub mod pomdp;

pub use error::{HubError, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source used throughout the crate. Every random operation takes one
/// explicitly; nothing draws from global state.
pub type HubRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> HubRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent random stream `stream` derived from `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> HubRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

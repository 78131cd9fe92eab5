//! Exactly solvable tabular instances of preference optimization under
//! corrupted labels, with pessimistic (offline) or optimistic (online)
//! regularization and a response-length penalty.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel sweeps live in the `dpocov` companion crate.
//!
//! Module map:
//!
//! - [`types`]: instances, policies, reward tables, hyperparameters.
//! - [`datagen`]: corrupted Bradley-Terry data and the online label oracle.
//! - [`closed_forms`]: softmax policy of a reward, implied reward of a policy,
//!   closed-form noise, sigmoid band.
//! - [`objectives`]: penalized likelihood, relative value, the offline and
//!   online DPO-COV losses and their analytic gradients.
//! - [`training`]: full-batch descent for the offline algorithm and the
//!   online loop.
//! - [`analysis`]: generalization gaps, coverage estimates, theorem-guided
//!   pessimism weights, brute-force oracles, lemma checks, rate experiments.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod closed_forms;
pub mod datagen;
mod error;
pub mod math;
pub mod objectives;
pub mod rng;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CorruptionSpec, Hyperparams, Instance, Label, Policy, PreferenceSample, RewardTable, SignRule,
};

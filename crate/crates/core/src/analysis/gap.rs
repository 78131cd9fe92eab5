use serde::{Deserialize, Serialize};

use crate::closed_forms::policy_from_reward;
use crate::objectives::{expected_len, j_value, kl_to_ref};
use crate::types::{Instance, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `J_{β,ω}(π_{r*})`, the maximum of `J_{β,ω}`.
    pub j_opt: f64,
    pub j_hat: f64,
    pub gap: f64,
    pub kl_to_ref: f64,
    pub expected_len: f64,
}

/// `max_π J_{β,ω}(π) - J_{β,ω}(π̂)`, with the maximizer `π_{r*}` built in
/// closed form.
pub fn generalization_gap(pi_hat: &Policy, instance: &Instance, beta: f64, omega: f64) -> GapReport {
    let best = policy_from_reward(&instance.true_reward, instance, beta, omega);
    let j_opt = j_value(&best, instance, beta, omega);
    let j_hat = j_value(pi_hat, instance, beta, omega);
    GapReport {
        j_opt,
        j_hat,
        gap: j_opt - j_hat,
        kl_to_ref: kl_to_ref(pi_hat, instance),
        expected_len: expected_len(pi_hat, instance),
    }
}

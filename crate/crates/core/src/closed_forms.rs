//! Analytical solutions: the KL-regularized policy of a reward, the reward
//! implied by a policy, and the closed-form noise minimizer.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, log_sum_exp};
use crate::types::{Hyperparams, Instance, Label, Policy, PreferenceSample, RewardTable};

/// Per-prompt normalizer `Z_r(x) = Σ_a π_ref(a|x) exp[(r(x,a) - ω|a|)/β]`,
/// kept in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    pub log_z: Vec<f64>,
}

impl PartitionTable {
    pub fn z(&self) -> Vec<f64> {
        self.log_z.iter().map(|&l| math::exp(l)).collect()
    }
}

/// Tilted logits `log π_ref(a|x) + (r(x,a) - ω|a|)/β`, row-major.
fn tilted_logits(r: &RewardTable, instance: &Instance, beta: f64, omega: f64) -> Vec<f64> {
    debug_assert!(beta > 0.0);
    let na = instance.n_responses;
    (0..instance.cells())
        .map(|i| {
            let (x, a) = (i / na, i % na);
            math::ln(instance.ref_policy.get(x, a)) + (r.get(x, a) - omega * instance.len_of(x, a)) / beta
        })
        .collect()
}

pub fn partition_table(r: &RewardTable, instance: &Instance, beta: f64, omega: f64) -> PartitionTable {
    let logits = tilted_logits(r, instance, beta, omega);
    PartitionTable {
        log_z: logits.chunks(instance.n_responses).map(log_sum_exp).collect(),
    }
}

/// `log π_r(a|x)`, row-major, computed as a log-softmax so tiny
/// probabilities keep full relative precision.
pub fn log_policy_from_reward(r: &RewardTable, instance: &Instance, beta: f64, omega: f64) -> Vec<f64> {
    let mut logits = tilted_logits(r, instance, beta, omega);
    for row in logits.chunks_mut(instance.n_responses) {
        let lz = log_sum_exp(row);
        row.iter_mut().for_each(|l| *l -= lz);
    }
    logits
}

/// `π_r(a|x) = π_ref(a|x) exp[(r(x,a) - ω|a|)/β] / Z_r(x)`, the maximizer of
/// the length-regularized relative value for reward `r`.
pub fn policy_from_reward(r: &RewardTable, instance: &Instance, beta: f64, omega: f64) -> Policy {
    let logits = tilted_logits(r, instance, beta, omega);
    Policy::from_logits(instance.n_prompts, instance.n_responses, &logits)
}

/// `r^π(x,a) = ω|a| + β log[π(a|x)/π_ref(a|x)]`. Only differences within a
/// prompt are identified; the result may leave `[0, R]`.
pub fn reward_from_policy(pi: &Policy, instance: &Instance, beta: f64, omega: f64) -> Result<RewardTable> {
    let na = instance.n_responses;
    let mut values = Vec::with_capacity(instance.cells());
    for x in 0..instance.n_prompts {
        for a in 0..na {
            let p = pi.get(x, a);
            if !(p > 0.0) {
                return Err(Error::ZeroProbability { prompt: x, response: a });
            }
            values.push(omega * instance.len_of(x, a) + beta * math::ln(p / instance.ref_policy.get(x, a)));
        }
    }
    RewardTable::new(instance.n_prompts, na, values)
}

/// Hinge threshold `log(1/λ - 1)`; `None` when `λ ≥ 1` and the noise is
/// switched off.
#[inline]
pub fn hinge_threshold(lambda: f64) -> Option<f64> {
    if lambda < 1.0 {
        Some(math::ln(1.0 / lambda - 1.0))
    } else {
        None
    }
}

/// Minimizer of `f(v) = λ|v| - log σ(r_diff_wl + y·v)`:
/// `ξ = y · 1{λ<1} · [log(1/λ - 1) - r_diff_wl]₊`. At the kink the `[·]₊`
/// convention returns exactly zero.
pub fn noise_closed_form(r_diff_wl: f64, label: Label, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    Ok(match hinge_threshold(lambda) {
        Some(tau) => label.sign() * (tau - r_diff_wl).max(0.0),
        None => 0.0,
    })
}

/// The per-sample objective the closed-form noise minimizes.
#[inline]
pub fn noise_objective(v: f64, r_diff_wl: f64, label: Label, lambda: f64) -> f64 {
    lambda * v.abs() - math::log_sigmoid(r_diff_wl + label.sign() * v)
}

/// `r^π(x,w) - r^π(x,l) = ω(|w| - |l|) + β log[π(w)π_ref(l) / (π(l)π_ref(w))]`.
pub fn implied_reward_diff(pi: &Policy, instance: &Instance, x: usize, w: usize, l: usize, beta: f64, omega: f64) -> f64 {
    let rp = &instance.ref_policy;
    omega * (instance.len_of(x, w) - instance.len_of(x, l))
        + beta * (math::ln(pi.get(x, w)) - math::ln(pi.get(x, l)) - math::ln(rp.get(x, w)) + math::ln(rp.get(x, l)))
}

/// `ξ_i^π`: the closed-form noise evaluated at the policy's implied reward.
pub fn noise_from_policy(pi: &Policy, sample: &PreferenceSample, instance: &Instance, hyper: &Hyperparams) -> Result<f64> {
    let d = implied_reward_diff(pi, instance, sample.prompt, sample.winner, sample.loser, hyper.beta, hyper.omega);
    noise_closed_form(d, sample.label, hyper.lambda)
}

/// Lower bound, actual value and upper bound of `|σ(z₁) - σ(z₂)|` on
/// `[-R, R]`: `|z₁-z₂|/(3+e^R) ≤ |σ(z₁)-σ(z₂)| ≤ |z₁-z₂|/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidBand {
    pub lower: f64,
    pub actual: f64,
    pub upper: f64,
}

impl SigmoidBand {
    pub fn holds(&self) -> bool {
        self.lower <= self.actual && self.actual <= self.upper
    }
}

pub fn sigmoid_band(z1: f64, z2: f64, reward_bound: f64) -> Result<SigmoidBand> {
    for z in [z1, z2] {
        if !(-reward_bound..=reward_bound).contains(&z) {
            return Err(Error::OutOfRange {
                what: "sigmoid band argument",
                value: z,
                lo: -reward_bound,
                hi: reward_bound,
            });
        }
    }
    Ok(sigmoid_band_with(z1, z2, reward_bound, math::sigmoid_diff))
}

/// Band with a caller-supplied `σ(z₁) - σ(z₂)`; the lemma suite swaps in a
/// mutated sigmoid here to confirm violations are caught.
pub fn sigmoid_band_with(z1: f64, z2: f64, reward_bound: f64, diff: impl Fn(f64, f64) -> f64) -> SigmoidBand {
    let gap = (z1 - z2).abs();
    SigmoidBand {
        lower: gap / (3.0 + math::exp(reward_bound)),
        actual: diff(z1, z2).abs(),
        upper: 0.25 * gap,
    }
}

//! Randomized checks of the supporting inequalities and identities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::closed_forms::{log_policy_from_reward, noise_closed_form, policy_from_reward, reward_from_policy};
use crate::math::{self, ln};
use crate::rng::{self, Rng};
use crate::types::{make_random_instance, Instance, Label, Policy, RewardTable};

const REWARD_BOUNDS: [f64; 3] = [0.5, 1.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest amount by which an inequality or identity was missed.
    pub worst_excess: f64,
    /// Inputs of the first violation.
    pub witness: Option<Vec<f64>>,
}

impl LemmaCheck {
    fn new(name: String) -> Self {
        LemmaCheck {
            name,
            trials: 0,
            violations: 0,
            worst_excess: 0.0,
            witness: None,
        }
    }

    /// Records one trial; `excess > 0` is a violation.
    fn record(&mut self, excess: f64, witness: impl FnOnce() -> Vec<f64>) {
        self.trials += 1;
        if excess > 0.0 || excess.is_nan() {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
        if excess > self.worst_excess {
            self.worst_excess = excess;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(LemmaCheck::passed)
    }

    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

/// Runs every check `trials` times with the reference sigmoid.
pub fn verify_lemma_suite(seed: u64, trials: usize) -> LemmaReport {
    verify_lemma_suite_with(seed, trials, math::sigmoid)
}

/// Same suite with a caller-supplied sigmoid in the scalar inequalities, so
/// a deliberately broken `σ` can be shown to fail.
pub fn verify_lemma_suite_with(seed: u64, trials: usize, sigma: fn(f64) -> f64) -> LemmaReport {
    let mut rng = rng::stream(seed, rng::streams::LEMMAS);
    let mut checks = Vec::new();
    for &bound in &REWARD_BOUNDS {
        checks.push(sigmoid_band(&mut rng, trials, bound, sigma));
    }
    for &bound in &REWARD_BOUNDS {
        checks.push(noise_gain(&mut rng, trials, bound, sigma));
    }
    for &bound in &REWARD_BOUNDS {
        checks.push(shifted_sigmoid(&mut rng, trials, bound, sigma));
    }
    checks.push(reward_differences(&mut rng, trials));
    checks.push(policy_round_trip(&mut rng, trials));
    checks.push(log_ratio_bound(&mut rng, trials));
    LemmaReport { seed, trials, checks }
}

/// Boundary points first, then uniform draws from `[-R, R]`.
fn point_in(rng: &mut Rng, k: usize, bound: f64) -> (f64, f64) {
    const CORNERS: [(f64, f64); 5] = [(1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, 0.999_999)];
    match CORNERS.get(k) {
        Some(&(a, b)) => (a * bound, b * bound),
        None => (rng::uniform_in(rng, -bound, bound), rng::uniform_in(rng, -bound, bound)),
    }
}

fn random_label(rng: &mut Rng) -> Label {
    if rng::coin(rng, 0.5) {
        Label::Plus
    } else {
        Label::Minus
    }
}

/// `|z₁-z₂|/(3+e^R) ≤ |σ(z₁)-σ(z₂)| ≤ |z₁-z₂|/4` on `[-R, R]`.
fn sigmoid_band(rng: &mut Rng, trials: usize, bound: f64, sigma: fn(f64) -> f64) -> LemmaCheck {
    let mut c = LemmaCheck::new(format!("sigmoid_band[R={bound}]"));
    for k in 0..trials {
        let (z1, z2) = point_in(rng, k, bound);
        let gap = (z1 - z2).abs();
        let actual = (sigma(z1) - sigma(z2)).abs();
        let lower = gap / (3.0 + math::exp(bound));
        let upper = gap / 4.0;
        let slack = 4.0 * f64::EPSILON;
        let excess = (lower - actual).max(actual - upper) - slack;
        c.record(excess, || alloc::vec![z1, z2, bound]);
    }
    c
}

/// `log σ(Δ + yξ_r) ≤ log σ(Δ) + σ(R)|ξ_r|` for `Δ ∈ [-R, R]`.
fn noise_gain(rng: &mut Rng, trials: usize, bound: f64, sigma: fn(f64) -> f64) -> LemmaCheck {
    let mut c = LemmaCheck::new(format!("noise_gain[R={bound}]"));
    let s_r = math::sigmoid(bound);
    for k in 0..trials {
        let (delta, _) = point_in(rng, k, bound);
        let y = random_label(rng);
        // Half the draws in the theorem's range [σ(R), 1], where ξ vanishes,
        // half below it so the noise is active.
        let lambda = if k % 2 == 0 {
            rng::uniform_in(rng, s_r, 1.0)
        } else {
            rng::uniform_in(rng, 0.01, s_r)
        };
        let xi = noise_closed_form(delta, y, lambda).expect("positive lambda");
        let lhs = ln(sigma(delta + y.sign() * xi));
        let rhs = ln(sigma(delta)) + s_r * xi.abs();
        let excess = lhs - rhs - 4.0 * f64::EPSILON * (1.0 + rhs.abs());
        c.record(excess, || alloc::vec![delta, y.sign(), lambda]);
    }
    c
}

/// `{σ(Δ'+yξ)-σ(Δ)}² ≥ {σ(Δ')-σ(Δ)}² - |ξ|/2`.
fn shifted_sigmoid(rng: &mut Rng, trials: usize, bound: f64, sigma: fn(f64) -> f64) -> LemmaCheck {
    let mut c = LemmaCheck::new(format!("shifted_sigmoid[R={bound}]"));
    for k in 0..trials {
        let (dp, d) = point_in(rng, k, bound);
        let y = random_label(rng);
        let xi = rng::uniform_in(rng, -2.0 * bound, 2.0 * bound);
        let shifted = sigma(dp + y.sign() * xi) - sigma(d);
        let plain = sigma(dp) - sigma(d);
        let lhs = shifted * shifted;
        let rhs = plain * plain - 0.5 * xi.abs();
        let excess = rhs - lhs - 4.0 * f64::EPSILON;
        c.record(excess, || alloc::vec![dp, d, y.sign(), xi]);
    }
    c
}

struct Draw {
    instance: Instance,
    beta: f64,
    omega: f64,
}

fn random_setup(rng: &mut Rng) -> Draw {
    let nx = 1 + rng::index(rng, 4);
    let na = 2 + rng::index(rng, 4);
    let bound = REWARD_BOUNDS[rng::index(rng, REWARD_BOUNDS.len())];
    let seed = rand_core::RngCore::next_u64(rng);
    Draw {
        instance: make_random_instance(nx, na, bound, seed).expect("valid sizes"),
        beta: rng::uniform_in(rng, 0.1, 2.0),
        omega: rng::uniform_in(rng, 0.0, 0.01),
    }
}

fn random_reward(rng: &mut Rng, inst: &Instance) -> RewardTable {
    let values = (0..inst.cells()).map(|_| rng::uniform_in(rng, 0.0, inst.reward_bound)).collect();
    RewardTable::new(inst.n_prompts, inst.n_responses, values).expect("finite")
}

/// `r^{π_r}(x,a) - r^{π_r}(x,a') = r(x,a) - r(x,a')`.
fn reward_differences(rng: &mut Rng, trials: usize) -> LemmaCheck {
    let mut c = LemmaCheck::new("reward_difference_invariance".into());
    for _ in 0..trials {
        let d = random_setup(rng);
        let r = random_reward(rng, &d.instance);
        let pi = policy_from_reward(&r, &d.instance, d.beta, d.omega);
        let back = reward_from_policy(&pi, &d.instance, d.beta, d.omega).expect("softmax is positive");
        let mut worst: f64 = 0.0;
        for x in 0..d.instance.n_prompts {
            for a in 1..d.instance.n_responses {
                worst = worst.max((back.diff(x, a, 0) - r.diff(x, a, 0)).abs());
            }
        }
        c.record(worst - 1e-12, || alloc::vec![d.beta, d.omega, d.instance.reward_bound]);
    }
    c
}

/// `π_{r^π} = π` for strictly positive `π`.
fn policy_round_trip(rng: &mut Rng, trials: usize) -> LemmaCheck {
    let mut c = LemmaCheck::new("policy_round_trip".into());
    for _ in 0..trials {
        let d = random_setup(rng);
        let (nx, na) = (d.instance.n_prompts, d.instance.n_responses);
        let w = (0..nx * na).map(|_| rng::uniform_in(rng, 0.01, 1.0)).collect();
        let pi = Policy::from_weights(nx, na, w).expect("positive weights");
        let r = reward_from_policy(&pi, &d.instance, d.beta, d.omega).expect("positive policy");
        let back = policy_from_reward(&r, &d.instance, d.beta, d.omega);
        let worst = pi
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        c.record(worst - 1e-12, || alloc::vec![d.beta, d.omega]);
    }
    c
}

/// `|log π_{r'}(a|x) - log π_r(a|x)| ≤ 2‖r' - r‖_∞ / β`.
fn log_ratio_bound(rng: &mut Rng, trials: usize) -> LemmaCheck {
    let mut c = LemmaCheck::new("log_ratio_bound".into());
    for _ in 0..trials {
        let d = random_setup(rng);
        let r = random_reward(rng, &d.instance);
        let r2 = random_reward(rng, &d.instance);
        let lp = log_policy_from_reward(&r, &d.instance, d.beta, d.omega);
        let lp2 = log_policy_from_reward(&r2, &d.instance, d.beta, d.omega);
        let bound = 2.0 * r.max_abs_diff(&r2) / d.beta;
        let worst = lp.iter().zip(&lp2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        c.record(worst - bound * (1.0 + 1e-12) - 1e-12, || alloc::vec![d.beta, d.omega, bound]);
    }
    c
}

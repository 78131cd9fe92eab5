//! The tabular world shared by every other module.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SIMPLEX_TOL: f64 = 1e-12;

/// Conditional distribution `π(a|x)` stored densely, row-major by prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_prompts: usize,
    n_responses: usize,
    probs: Vec<f64>,
}

impl Policy {
    /// Checks shape, non-negativity and that every row sums to one.
    pub fn new(n_prompts: usize, n_responses: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("policy", n_prompts * n_responses, probs.len())?;
        let p = Policy {
            n_prompts,
            n_responses,
            probs,
        };
        for x in 0..n_prompts {
            let row = p.row(x);
            if let Some((i, &v)) = row.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(Error::NonPositive {
                    what: "policy",
                    index: x * n_responses + i,
                    value: v,
                });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::NotNormalized {
                    what: "policy row",
                    index: x,
                    sum: s,
                });
            }
        }
        Ok(p)
    }

    /// Normalizes each row of nonnegative weights.
    pub fn from_weights(n_prompts: usize, n_responses: usize, mut w: Vec<f64>) -> Result<Self> {
        check_len("policy weights", n_prompts * n_responses, w.len())?;
        for row in w.chunks_mut(n_responses) {
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(Error::Invalid("policy weight row has zero mass".into()));
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Policy::new(n_prompts, n_responses, w)
    }

    pub fn uniform(n_prompts: usize, n_responses: usize) -> Self {
        Policy {
            n_prompts,
            n_responses,
            probs: vec![1.0 / n_responses as f64; n_prompts * n_responses],
        }
    }

    /// Builds a policy from per-row log-weights via a stable softmax.
    pub fn from_logits(n_prompts: usize, n_responses: usize, logits: &[f64]) -> Self {
        debug_assert_eq!(logits.len(), n_prompts * n_responses);
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(n_responses) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut s = 0.0;
            for &l in row {
                let e = libm::exp(l - m);
                s += e;
                probs.push(e);
            }
            probs[start..].iter_mut().for_each(|p| *p /= s);
        }
        Policy {
            n_prompts,
            n_responses,
            probs,
        }
    }

    #[inline]
    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    #[inline]
    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_responses + a]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_responses..(x + 1) * self.n_responses]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// Per-prompt total-variation distances.
    pub fn total_variation(&self, other: &Policy) -> Vec<f64> {
        (0..self.n_prompts)
            .map(|x| {
                0.5 * self
                    .row(x)
                    .iter()
                    .zip(other.row(x))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn max_total_variation(&self, other: &Policy) -> f64 {
        self.total_variation(other)
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Reward values `r(x, a)`, row-major by prompt. Tables produced by inverting
/// a policy may leave `[0, R]`; family membership is checked by
/// [`RewardTable::in_family`] where it matters.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    n_prompts: usize,
    n_responses: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(n_prompts: usize, n_responses: usize, values: Vec<f64>) -> Result<Self> {
        check_len("reward table", n_prompts * n_responses, values.len())?;
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange {
                what: "reward",
                value: v,
                lo: f64::MIN,
                hi: f64::MAX,
            });
        }
        Ok(RewardTable {
            n_prompts,
            n_responses,
            values,
        })
    }

    pub fn constant(n_prompts: usize, n_responses: usize, c: f64) -> Self {
        RewardTable {
            n_prompts,
            n_responses,
            values: vec![c; n_prompts * n_responses],
        }
    }

    #[inline]
    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    #[inline]
    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_responses + a]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_responses..(x + 1) * self.n_responses]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `r(x, a) - r(x, b)`.
    #[inline]
    pub fn diff(&self, x: usize, a: usize, b: usize) -> f64 {
        self.get(x, a) - self.get(x, b)
    }

    /// Whether every entry lies in `[0, bound]`.
    pub fn in_family(&self, bound: f64) -> bool {
        self.values.iter().all(|&v| (0.0..=bound).contains(&v))
    }

    pub fn max_abs_diff(&self, other: &RewardTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Sign rule for nonzero corruption draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignRule {
    FixedPositive,
    FixedNegative,
    RandomSign,
}

/// Generative description of the true preference noise `ξ*`: each sample is
/// corrupted with probability `corrupt_fraction`, in which case its noise is
/// `±noise_magnitude` according to the sign rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub corrupt_fraction: f64,
    pub noise_magnitude: f64,
    pub noise_sign_rule: SignRule,
}

impl CorruptionSpec {
    pub const fn clean() -> Self {
        CorruptionSpec {
            corrupt_fraction: 0.0,
            noise_magnitude: 0.0,
            noise_sign_rule: SignRule::FixedPositive,
        }
    }

    pub fn new(corrupt_fraction: f64, noise_magnitude: f64, rule: SignRule) -> Result<Self> {
        let c = CorruptionSpec {
            corrupt_fraction,
            noise_magnitude,
            noise_sign_rule: rule,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(Error::OutOfRange {
                what: "corrupt_fraction",
                value: self.corrupt_fraction,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(self.noise_magnitude >= 0.0 && self.noise_magnitude.is_finite()) {
            return Err(Error::OutOfRange {
                what: "noise_magnitude",
                value: self.noise_magnitude,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(())
    }

    /// Draws one `ξ*_i`. Consumes one uniform for the corruption decision and,
    /// for corrupted samples under [`SignRule::RandomSign`], a second one.
    pub fn draw(&self, rng: &mut rng::Rng) -> f64 {
        if !rng::coin(rng, self.corrupt_fraction) {
            return 0.0;
        }
        let c = self.noise_magnitude;
        match self.noise_sign_rule {
            SignRule::FixedPositive => c,
            SignRule::FixedNegative => -c,
            SignRule::RandomSign => {
                if rng::coin(rng, 0.5) {
                    c
                } else {
                    -c
                }
            }
        }
    }

    /// Support of the per-sample noise law as `(value, probability)` pairs.
    pub fn support(&self) -> Vec<(f64, f64)> {
        let f = self.corrupt_fraction;
        let c = self.noise_magnitude;
        let mut out = Vec::with_capacity(3);
        if f < 1.0 {
            out.push((0.0, 1.0 - f));
        }
        if f > 0.0 {
            match self.noise_sign_rule {
                SignRule::FixedPositive => out.push((c, f)),
                SignRule::FixedNegative => out.push((-c, f)),
                SignRule::RandomSign => {
                    out.push((c, 0.5 * f));
                    out.push((-c, 0.5 * f));
                }
            }
        }
        out
    }
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec::clean()
    }
}

/// Preference label `y ∈ {+1, -1}`: `Plus` means the first drawn response won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Plus,
    Minus,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Plus => 1.0,
            Label::Minus => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Plus => 1,
            Label::Minus => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Plus),
            -1 => Some(Label::Minus),
            _ => None,
        }
    }
}

/// One labelled comparison. The `hidden_*` fields carry generator-side truth
/// and are read only by analysis code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceSample {
    pub prompt: usize,
    pub winner: usize,
    pub loser: usize,
    pub label: Label,
    pub hidden_first: usize,
    pub hidden_second: usize,
    pub hidden_noise: f64,
}

impl PreferenceSample {
    /// Assigns winner and loser from the two draws and the label.
    pub fn from_draw(prompt: usize, first: usize, second: usize, label: Label, noise: f64) -> Self {
        let (winner, loser) = match label {
            Label::Plus => (first, second),
            Label::Minus => (second, first),
        };
        PreferenceSample {
            prompt,
            winner,
            loser,
            label,
            hidden_first: first,
            hidden_second: second,
            hidden_noise: noise,
        }
    }

    /// `a^(1)` recovered from the observable fields.
    #[inline]
    pub fn first(&self) -> usize {
        match self.label {
            Label::Plus => self.winner,
            Label::Minus => self.loser,
        }
    }

    /// `a^(-1)` recovered from the observable fields. In the online loop this
    /// is the reference-policy draw.
    #[inline]
    pub fn second(&self) -> usize {
        match self.label {
            Label::Plus => self.loser,
            Label::Minus => self.winner,
        }
    }

    /// Winner/loser must be the label-consistent permutation of the hidden pair.
    pub fn is_consistent(&self) -> bool {
        self.first() == self.hidden_first && self.second() == self.hidden_second
    }
}

/// `(β, η, ω, λ)`: KL weight, pessimism/optimism weight, length penalty and
/// noise penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
    pub lambda: f64,
}

impl Hyperparams {
    pub fn new(beta: f64, eta: f64, omega: f64, lambda: f64) -> Result<Self> {
        let h = Hyperparams {
            beta,
            eta,
            omega,
            lambda,
        };
        h.validate()?;
        Ok(h)
    }

    /// `λ = 1, η = ω = 0`: plain DPO.
    pub fn vanilla(beta: f64) -> Self {
        Hyperparams {
            beta,
            eta: 0.0,
            omega: 0.0,
            lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::OutOfRange {
                what: "beta",
                value: self.beta,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !(self.lambda > 0.0) {
            return Err(Error::NonPositiveLambda(self.lambda));
        }
        for (what, v) in [("eta", self.eta), ("omega", self.omega)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange {
                    what,
                    value: v,
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
            }
        }
        Ok(())
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Hyperparams { eta, ..self }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Hyperparams { lambda, ..self }
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Hyperparams { omega, ..self }
    }
}

/// A finite world: prompts, responses, their lengths, the prompt law, the
/// reference and behavior policies and the true reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n_prompts: usize,
    pub n_responses: usize,
    pub prompt_dist: Vec<f64>,
    pub ref_policy: Policy,
    pub behavior_policy: Policy,
    pub true_reward: RewardTable,
    /// Token count `|a|` per (prompt, response), row-major.
    pub response_len: Vec<u32>,
    pub reward_bound: f64,
}

impl Instance {
    /// Runs every invariant check on the fields.
    pub fn validate(&self) -> Result<()> {
        let (nx, na) = (self.n_prompts, self.n_responses);
        if nx == 0 {
            return Err(Error::Empty("prompt set"));
        }
        if na < 2 {
            return Err(Error::TooFewResponses(na));
        }
        if !(self.reward_bound > 0.0 && self.reward_bound.is_finite()) {
            return Err(Error::OutOfRange {
                what: "reward_bound",
                value: self.reward_bound,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        check_len("prompt_dist", nx, self.prompt_dist.len())?;
        check_len("response_len", nx * na, self.response_len.len())?;
        if let Some((i, &v)) = self
            .prompt_dist
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0))
        {
            return Err(Error::NonPositive {
                what: "prompt_dist",
                index: i,
                value: v,
            });
        }
        let s: f64 = self.prompt_dist.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotNormalized {
                what: "prompt_dist",
                index: 0,
                sum: s,
            });
        }
        for (what, p) in [
            ("ref_policy", &self.ref_policy),
            ("behavior_policy", &self.behavior_policy),
        ] {
            if p.n_prompts() != nx || p.n_responses() != na {
                return Err(Error::Shape {
                    what,
                    expected: nx * na,
                    found: p.n_prompts() * p.n_responses(),
                });
            }
            Policy::new(nx, na, p.as_slice().to_vec())?;
            if let Some((i, &v)) = p.as_slice().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositive {
                    what,
                    index: i,
                    value: v,
                });
            }
        }
        let r = &self.true_reward;
        if r.n_prompts() != nx || r.n_responses() != na {
            return Err(Error::Shape {
                what: "true_reward",
                expected: nx * na,
                found: r.as_slice().len(),
            });
        }
        if let Some(&v) = r
            .as_slice()
            .iter()
            .find(|v| !(0.0..=self.reward_bound).contains(*v))
        {
            return Err(Error::OutOfRange {
                what: "true_reward",
                value: v,
                lo: 0.0,
                hi: self.reward_bound,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn len_of(&self, x: usize, a: usize) -> f64 {
        self.response_len[x * self.n_responses + a] as f64
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.n_prompts * self.n_responses
    }

    /// Copy with a different true reward (used by invariance checks).
    pub fn with_true_reward(&self, r: RewardTable) -> Result<Self> {
        let inst = Instance {
            true_reward: r,
            ..self.clone()
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Random instance: rewards uniform on `[0, R]`, policies and the prompt law
/// normalized from weights uniform on `[0.05, 1.05)`, lengths uniform on
/// `1..=100`.
pub fn make_random_instance(
    n_prompts: usize,
    n_responses: usize,
    reward_bound: f64,
    seed: u64,
) -> Result<Instance> {
    if n_prompts == 0 {
        return Err(Error::Empty("prompt set"));
    }
    if n_responses < 2 {
        return Err(Error::TooFewResponses(n_responses));
    }
    if !(reward_bound > 0.0 && reward_bound.is_finite()) {
        return Err(Error::OutOfRange {
            what: "reward_bound",
            value: reward_bound,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let cells = n_prompts * n_responses;
    let mut rng = rng::stream(seed, rng::streams::INSTANCE);
    let weight = |rng: &mut rng::Rng| rng::uniform_in(rng, 0.05, 1.05);

    let mut prompt_dist: Vec<f64> = (0..n_prompts).map(|_| weight(&mut rng)).collect();
    let s: f64 = prompt_dist.iter().sum();
    prompt_dist.iter_mut().for_each(|p| *p /= s);

    let ref_w: Vec<f64> = (0..cells).map(|_| weight(&mut rng)).collect();
    let beh_w: Vec<f64> = (0..cells).map(|_| weight(&mut rng)).collect();
    let rewards: Vec<f64> = (0..cells)
        .map(|_| rng::uniform_in(&mut rng, 0.0, reward_bound))
        .collect();
    let response_len: Vec<u32> = (0..cells).map(|_| 1 + rng::index(&mut rng, 100) as u32).collect();

    let inst = Instance {
        n_prompts,
        n_responses,
        prompt_dist,
        ref_policy: Policy::from_weights(n_prompts, n_responses, ref_w)?,
        behavior_policy: Policy::from_weights(n_prompts, n_responses, beh_w)?,
        true_reward: RewardTable::new(n_prompts, n_responses, rewards)?,
        response_len,
        reward_bound,
    };
    inst.validate()?;
    Ok(inst)
}

/// One prompt, two responses, uniform policies, unit lengths: the smallest
/// hand-checkable instance.
pub fn two_point_instance(r0: f64, r1: f64, reward_bound: f64) -> Result<Instance> {
    let inst = Instance {
        n_prompts: 1,
        n_responses: 2,
        prompt_dist: vec![1.0],
        ref_policy: Policy::uniform(1, 2),
        behavior_policy: Policy::uniform(1, 2),
        true_reward: RewardTable::new(1, 2, vec![r0, r1])?,
        response_len: vec![1, 1],
        reward_bound,
    };
    inst.validate()?;
    Ok(inst)
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_instance() {
        let inst = make_random_instance(1, 2, 1.0, 0).unwrap();
        assert_eq!((inst.n_prompts, inst.n_responses), (1, 2));
        assert!(inst.true_reward.in_family(1.0));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = make_random_instance(8, 6, 5.0, 7).unwrap();
        let b = make_random_instance(8, 6, 5.0, 7).unwrap();
        assert_eq!(a, b);
        let c = make_random_instance(8, 6, 5.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_on_simplex() {
        let inst = make_random_instance(4, 4, 2.0, 3).unwrap();
        for p in [&inst.ref_policy, &inst.behavior_policy] {
            for x in 0..4 {
                assert!((p.row(x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(inst.response_len.iter().all(|&l| (1..=100).contains(&l)));
    }

    #[test]
    fn rejects_single_response() {
        assert_eq!(
            make_random_instance(3, 1, 1.0, 0).unwrap_err(),
            Error::TooFewResponses(1)
        );
    }

    #[test]
    fn validator_catches_broken_invariants() {
        let mut inst = make_random_instance(2, 3, 1.0, 1).unwrap();
        inst.prompt_dist[0] += 1e-9;
        assert!(matches!(inst.validate(), Err(Error::NotNormalized { .. })));

        let mut inst = make_random_instance(2, 3, 1.0, 1).unwrap();
        inst.true_reward = RewardTable::new(2, 3, vec![0.0, 0.5, 1.5, 0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(inst.validate(), Err(Error::OutOfRange { .. })));

        let mut inst = make_random_instance(2, 3, 1.0, 1).unwrap();
        inst.ref_policy = Policy::new(2, 3, vec![1.0, 0.0, 0.0, 0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(inst.validate(), Err(Error::NonPositive { .. })));
    }

    #[test]
    fn sample_bookkeeping() {
        let s = PreferenceSample::from_draw(0, 3, 1, Label::Minus, 0.0);
        assert_eq!((s.winner, s.loser), (1, 3));
        assert_eq!((s.first(), s.second()), (3, 1));
        assert!(s.is_consistent());
        // colliding draws are allowed
        let s = PreferenceSample::from_draw(0, 2, 2, Label::Plus, 0.0);
        assert!(s.is_consistent());
    }

    #[test]
    fn hyperparams_reject_zero_lambda() {
        assert_eq!(
            Hyperparams::new(0.1, 0.0, 0.0, 0.0).unwrap_err(),
            Error::NonPositiveLambda(0.0)
        );
        assert!(Hyperparams::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn corruption_support_sums_to_one() {
        for rule in [SignRule::FixedPositive, SignRule::FixedNegative, SignRule::RandomSign] {
            for f in [0.0, 0.25, 1.0] {
                let c = CorruptionSpec::new(f, 2.0, rule).unwrap();
                let s: f64 = c.support().iter().map(|(_, p)| p).sum();
                assert!((s - 1.0).abs() < 1e-15);
            }
        }
    }
}

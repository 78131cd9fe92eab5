//! Losses and value functions, evaluated exactly on tabular instances.
//!
//! Two routes compute the DPO-COV losses. [`offline_loss`] and
//! [`online_loss`] walk the samples one by one and follow the per-sample
//! formula literally. [`CompiledObjective`] collapses the samples into
//! weighted `(prompt, winner, loser)` cells, which is what the optimizer
//! differentiates. Tests tie the two together.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::closed_forms::{hinge_threshold, implied_reward_diff, log_policy_from_reward, noise_closed_form};
use crate::datagen::PreferenceDataset;
use crate::error::{Error, Result};
use crate::math::{self, log_sigmoid, pairwise_sum, sigmoid};
use crate::training::PolicyParams;
use crate::types::{Hyperparams, Instance, Policy, PreferenceSample, RewardTable};

/// Which side of the pessimism/optimism regularizer is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// `-βη log π(a^w|x)`: pessimism toward well-covered winners.
    Offline,
    /// `+βη log π(a⁻¹|x)`: optimism, evaluated at the reference draw.
    Online,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Offline => "offline",
            Setting::Online => "online",
        }
    }

    /// Response whose log-probability enters the regularizer.
    #[inline]
    pub fn anchor_response(self, s: &PreferenceSample) -> usize {
        match self {
            Setting::Offline => s.winner,
            Setting::Online => s.second(),
        }
    }

    /// Sign of the `βη log π` term.
    #[inline]
    pub fn anchor_sign(self) -> f64 {
        match self {
            Setting::Offline => -1.0,
            Setting::Online => 1.0,
        }
    }
}

/// Decomposition of a DPO-COV loss value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean `-log σ(...)` part.
    pub nll_term: f64,
    /// `(λ/N)‖ξ‖₁`.
    pub noise_penalty: f64,
    /// The `∓βη log π` part.
    pub pessimism_term: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_sample: Option<Vec<f64>>,
}

impl LossBreakdown {
    fn from_parts(nll: f64, noise: f64, pess: f64, per_sample: Option<Vec<f64>>) -> Self {
        LossBreakdown {
            total: nll + noise + pess,
            nll_term: nll,
            noise_penalty: noise,
            pessimism_term: pess,
            per_sample,
        }
    }
}

/// `L_{N,λ}(r, ξ) = -(1/N) Σ log σ[r(x,w) - r(x,l) + y ξ] + (λ/N)‖ξ‖₁`.
pub fn penalized_nll(r: &RewardTable, xi: &[f64], dataset: &PreferenceDataset, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if xi.len() != dataset.len() {
        return Err(Error::Shape {
            what: "noise vector",
            expected: dataset.len(),
            found: xi.len(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = dataset.len() as f64;
    let terms: Vec<f64> = dataset
        .samples
        .iter()
        .zip(xi)
        .map(|(s, &v)| lambda * v.abs() - log_sigmoid(r.diff(s.prompt, s.winner, s.loser) + s.label.sign() * v))
        .collect();
    Ok(pairwise_sum(&terms) / n)
}

/// Closed-form noise vector `ξ_r` for a reward table.
pub fn noise_vector_for_reward(r: &RewardTable, dataset: &PreferenceDataset, lambda: f64) -> Result<Vec<f64>> {
    dataset
        .samples
        .iter()
        .map(|s| noise_closed_form(r.diff(s.prompt, s.winner, s.loser), s.label, lambda))
        .collect()
}

/// `KL(π(·|x) ‖ π_ref(·|x))` for one prompt.
pub fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pa, _)| **pa > 0.0)
        .map(|(pa, qa)| pa * math::ln(pa / qa))
        .sum()
}

/// `E_{x~ρ} KL(π(·|x) ‖ π_ref(·|x))`.
pub fn kl_to_ref(pi: &Policy, instance: &Instance) -> f64 {
    (0..instance.n_prompts)
        .map(|x| instance.prompt_dist[x] * kl_row(pi.row(x), instance.ref_policy.row(x)))
        .sum()
}

/// `E_{x~ρ, a~π} |a|`.
pub fn expected_len(pi: &Policy, instance: &Instance) -> f64 {
    (0..instance.n_prompts)
        .map(|x| {
            instance.prompt_dist[x]
                * (0..instance.n_responses)
                    .map(|a| pi.get(x, a) * instance.len_of(x, a))
                    .sum::<f64>()
        })
        .sum()
}

fn penalized_mean(p: &[f64], r: &[f64], lens: &[u32], omega: f64) -> f64 {
    p.iter()
        .zip(r)
        .zip(lens)
        .map(|((pa, ra), &l)| pa * (ra - omega * l as f64))
        .sum()
}

/// Length-regularized relative value
/// `E_{x,a~π,a'~base}[r(x,a) - ω|a| - r(x,a') + ω|a'|] - β E_x KL(π ‖ π_ref)`.
pub fn relative_value(pi: &Policy, r: &RewardTable, base: &Policy, instance: &Instance, beta: f64, omega: f64) -> f64 {
    let na = instance.n_responses;
    (0..instance.n_prompts)
        .map(|x| {
            let lens = &instance.response_len[x * na..(x + 1) * na];
            let gain = penalized_mean(pi.row(x), r.row(x), lens, omega) - penalized_mean(base.row(x), r.row(x), lens, omega);
            instance.prompt_dist[x] * (gain - beta * kl_row(pi.row(x), instance.ref_policy.row(x)))
        })
        .sum()
}

/// `J_{β,ω}(π) = E_{x,a~π}[r*(x,a) - ω|a|] - β E_x KL(π ‖ π_ref)`.
pub fn j_value(pi: &Policy, instance: &Instance, beta: f64, omega: f64) -> f64 {
    let na = instance.n_responses;
    (0..instance.n_prompts)
        .map(|x| {
            let lens = &instance.response_len[x * na..(x + 1) * na];
            instance.prompt_dist[x]
                * (penalized_mean(pi.row(x), instance.true_reward.row(x), lens, omega)
                    - beta * kl_row(pi.row(x), instance.ref_policy.row(x)))
        })
        .sum()
}

fn per_sample_loss(
    pi: &Policy,
    samples: &[PreferenceSample],
    instance: &Instance,
    hyper: &Hyperparams,
    setting: Setting,
    keep: bool,
) -> Result<LossBreakdown> {
    hyper.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !pi.is_strictly_positive() {
        return Err(Error::Invalid("DPO-COV losses need a strictly positive policy".into()));
    }
    let n = samples.len() as f64;
    let mut nll = Vec::with_capacity(samples.len());
    let mut noise = Vec::with_capacity(samples.len());
    let mut pess = Vec::with_capacity(samples.len());
    for s in samples {
        let h = implied_reward_diff(pi, instance, s.prompt, s.winner, s.loser, hyper.beta, hyper.omega);
        let xi = noise_closed_form(h, s.label, hyper.lambda)?;
        nll.push(-log_sigmoid(h + s.label.sign() * xi));
        noise.push(hyper.lambda * xi.abs());
        let a = setting.anchor_response(s);
        pess.push(setting.anchor_sign() * hyper.beta * hyper.eta * math::ln(pi.get(s.prompt, a)));
    }
    let per = keep.then(|| nll.iter().zip(&noise).zip(&pess).map(|((a, b), c)| a + b + c).collect());
    Ok(LossBreakdown::from_parts(
        pairwise_sum(&nll) / n,
        pairwise_sum(&noise) / n,
        pairwise_sum(&pess) / n,
        per,
    ))
}

/// Practical offline DPO-COV objective `ψ_N(π)`, with the pessimism
/// expectation replaced by the empirical mean over winners.
pub fn offline_loss(pi: &Policy, dataset: &PreferenceDataset, instance: &Instance, hyper: &Hyperparams) -> Result<LossBreakdown> {
    per_sample_loss(pi, &dataset.samples, instance, hyper, Setting::Offline, false)
}

/// [`offline_loss`] with the per-sample contributions retained.
pub fn offline_loss_per_sample(
    pi: &Policy,
    dataset: &PreferenceDataset,
    instance: &Instance,
    hyper: &Hyperparams,
) -> Result<LossBreakdown> {
    per_sample_loss(pi, &dataset.samples, instance, hyper, Setting::Offline, true)
}

/// Stochastic online objective `φ_t(π)` over the first `t` samples.
pub fn online_loss(pi: &Policy, prefix: &[PreferenceSample], instance: &Instance, hyper: &Hyperparams) -> Result<LossBreakdown> {
    per_sample_loss(pi, prefix, instance, hyper, Setting::Online, false)
}

/// Plain DPO: `-(1/N) Σ log σ[β log(π(w)/π_ref(w)) - β log(π(l)/π_ref(l))]`.
pub fn vanilla_dpo_loss(pi: &Policy, samples: &[PreferenceSample], instance: &Instance, beta: f64) -> f64 {
    let rp = &instance.ref_policy;
    let terms: Vec<f64> = samples
        .iter()
        .map(|s| {
            let (x, w, l) = (s.prompt, s.winner, s.loser);
            let lw = beta * math::ln(pi.get(x, w) / rp.get(x, w));
            let ll = beta * math::ln(pi.get(x, l) / rp.get(x, l));
            -log_sigmoid(lw - ll)
        })
        .collect();
    pairwise_sum(&terms) / samples.len() as f64
}

/// Where the regularizer's expectation over responses comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Anchor {
    /// Empirical mean over the samples' anchor responses (the practical
    /// algorithms).
    Empirical,
    /// Exact expectation `E_{x~ρ, a~base}` (the un-approximated objective,
    /// up to its π-independent constant).
    Exact(Policy),
}

#[derive(Debug, Clone, Copy)]
struct PairCell {
    prompt: usize,
    winner: usize,
    loser: usize,
    weight: f64,
}

/// A DPO-COV objective compiled for repeated evaluation over reward
/// parameters `θ`, with `r_θ = R σ(θ)` and `π_θ = π_{r_θ}`.
#[derive(Debug, Clone)]
pub struct CompiledObjective {
    n_prompts: usize,
    n_responses: usize,
    beta: f64,
    omega: f64,
    lambda: f64,
    reward_bound: f64,
    lens: Vec<f64>,
    log_ref: Vec<f64>,
    ref_policy: Vec<f64>,
    pairs: Vec<PairCell>,
    /// `pairs[start..end]` belong to prompt `x`; pairs are sorted by prompt.
    pair_ranges: Vec<(usize, usize)>,
    /// Coefficient multiplying `log π(a|x)` in the regularizer.
    anchor: Vec<f64>,
}

/// Value, gradient and breakdown at one parameter vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Gradient with respect to the reward table `r_θ`.
    pub reward_gradient: Vec<f64>,
    pub breakdown: LossBreakdown,
}

impl CompiledObjective {
    pub fn new(
        samples: &[PreferenceSample],
        instance: &Instance,
        hyper: &Hyperparams,
        setting: Setting,
        anchor: &Anchor,
    ) -> Result<Self> {
        hyper.validate()?;
        if samples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let (nx, na) = (instance.n_prompts, instance.n_responses);
        let n = samples.len() as f64;
        let mut counts: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for s in samples {
            *counts.entry((s.prompt, s.winner, s.loser)).or_insert(0) += 1;
        }
        let pairs = counts
            .into_iter()
            .map(|((prompt, winner, loser), c)| PairCell {
                prompt,
                winner,
                loser,
                weight: c as f64 / n,
            })
            .collect::<Vec<PairCell>>();
        let pair_ranges: Vec<(usize, usize)> = (0..nx)
            .map(|x| (pairs.partition_point(|p| p.prompt < x), pairs.partition_point(|p| p.prompt <= x)))
            .collect();

        let scale = setting.anchor_sign() * hyper.beta * hyper.eta;
        let mut coef = vec![0.0; nx * na];
        if hyper.eta > 0.0 {
            match anchor {
                Anchor::Empirical => {
                    let mut freq = vec![0usize; nx * na];
                    for s in samples {
                        freq[s.prompt * na + setting.anchor_response(s)] += 1;
                    }
                    for (c, f) in coef.iter_mut().zip(freq) {
                        *c = scale * f as f64 / n;
                    }
                }
                Anchor::Exact(base) => {
                    for x in 0..nx {
                        for a in 0..na {
                            coef[x * na + a] = scale * instance.prompt_dist[x] * base.get(x, a);
                        }
                    }
                }
            }
        }

        Ok(CompiledObjective {
            n_prompts: nx,
            n_responses: na,
            beta: hyper.beta,
            omega: hyper.omega,
            lambda: hyper.lambda,
            reward_bound: instance.reward_bound,
            lens: (0..nx * na).map(|i| instance.response_len[i] as f64).collect(),
            log_ref: instance.ref_policy.as_slice().iter().map(|&p| math::ln(p)).collect(),
            ref_policy: instance.ref_policy.as_slice().to_vec(),
            pairs,
            pair_ranges,
            anchor: coef,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_prompts * self.n_responses
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// `log π_θ`, row-major.
    fn log_policy(&self, theta: &[f64]) -> Vec<f64> {
        let na = self.n_responses;
        let mut lp: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(i, &t)| self.log_ref[i] + (PolicyParams::reward_of(t, self.reward_bound) - self.omega * self.lens[i]) / self.beta)
            .collect();
        for row in lp.chunks_mut(na) {
            let lz = math::log_sum_exp(row);
            row.iter_mut().for_each(|l| *l -= lz);
        }
        lp
    }

    fn pair_margin(&self, lp: &[f64], p: &PairCell) -> f64 {
        let na = self.n_responses;
        let (iw, il) = (p.prompt * na + p.winner, p.prompt * na + p.loser);
        self.omega * (self.lens[iw] - self.lens[il]) + self.beta * (lp[iw] - lp[il] - self.log_ref[iw] + self.log_ref[il])
    }

    /// Per-pair `(nll, noise penalty, d/dh)` for margin `h`. With the noise
    /// active the pair term is `λ(τ-h) - log σ(τ)`; otherwise `-log σ(h)`.
    /// Both branches have slope `-λ` at `h = τ`, so the loss is C¹.
    #[inline]
    fn pair_term(&self, h: f64) -> (f64, f64, f64) {
        match hinge_threshold(self.lambda) {
            Some(tau) if tau - h > 0.0 => (-log_sigmoid(tau), self.lambda * (tau - h), -self.lambda),
            _ => (-log_sigmoid(h), 0.0, -sigmoid(-h)),
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.breakdown(theta).total
    }

    pub fn breakdown(&self, theta: &[f64]) -> LossBreakdown {
        let lp = self.log_policy(theta);
        let mut nll = Vec::with_capacity(self.pairs.len());
        let mut noise = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let (a, b, _) = self.pair_term(self.pair_margin(&lp, p));
            nll.push(p.weight * a);
            noise.push(p.weight * b);
        }
        let pess: Vec<f64> = self.anchor.iter().zip(&lp).map(|(c, l)| c * l).collect();
        LossBreakdown::from_parts(pairwise_sum(&nll), pairwise_sum(&noise), pairwise_sum(&pess), None)
    }

    /// Gradient with respect to `log π(a|x)` treated as free coordinates.
    fn grad_log_policy(&self, lp: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let na = self.n_responses;
        let mut g = self.anchor.clone();
        let mut nll = Vec::with_capacity(self.pairs.len());
        let mut noise = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let (a, b, dh) = self.pair_term(self.pair_margin(lp, p));
            nll.push(p.weight * a);
            noise.push(p.weight * b);
            let c = p.weight * dh * self.beta;
            g[p.prompt * na + p.winner] += c;
            g[p.prompt * na + p.loser] -= c;
        }
        (g, nll, noise)
    }

    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let na = self.n_responses;
        let lp = self.log_policy(theta);
        let (g_lp, nll, noise) = self.grad_log_policy(&lp);
        let pess: Vec<f64> = self.anchor.iter().zip(&lp).map(|(c, l)| c * l).collect();
        let breakdown = LossBreakdown::from_parts(pairwise_sum(&nll), pairwise_sum(&noise), pairwise_sum(&pess), None);

        // log π(a|x) = log π_ref + (r - ω|a|)/β - log Z(x), so
        // ∂/∂r(x,b) = (g(x,b) - π(b|x) Σ_a g(x,a)) / β.
        let mut gradient = vec![0.0; theta.len()];
        let mut reward_gradient = vec![0.0; theta.len()];
        for x in 0..self.n_prompts {
            let row = x * na..(x + 1) * na;
            let total: f64 = g_lp[row.clone()].iter().sum();
            for i in row {
                let pi = math::exp(lp[i]);
                let dr = (g_lp[i] - pi * total) / self.beta;
                reward_gradient[i] = dr;
                gradient[i] = dr * PolicyParams::jacobian(theta[i], self.reward_bound);
            }
        }
        Evaluation {
            value: breakdown.total,
            gradient,
            reward_gradient,
            breakdown,
        }
    }

    /// Contribution of prompt `x` to the objective, from that prompt's row
    /// of `θ` alone. The objective is the sum of these over prompts.
    pub fn block_value(&self, x: usize, theta_row: &[f64]) -> f64 {
        let na = self.n_responses;
        let base = x * na;
        let mut lp: Vec<f64> = theta_row
            .iter()
            .enumerate()
            .map(|(a, &t)| {
                self.log_ref[base + a] + (PolicyParams::reward_of(t, self.reward_bound) - self.omega * self.lens[base + a]) / self.beta
            })
            .collect();
        let lz = math::log_sum_exp(&lp);
        lp.iter_mut().for_each(|l| *l -= lz);
        let (start, end) = self.pair_ranges[x];
        let mut terms: Vec<f64> = self.pairs[start..end]
            .iter()
            .map(|p| {
                let (iw, il) = (base + p.winner, base + p.loser);
                let h = self.omega * (self.lens[iw] - self.lens[il])
                    + self.beta * (lp[p.winner] - lp[p.loser] - self.log_ref[iw] + self.log_ref[il]);
                let (a, b, _) = self.pair_term(h);
                p.weight * (a + b)
            })
            .collect();
        terms.extend(self.anchor[base..base + na].iter().zip(&lp).map(|(c, l)| c * l));
        pairwise_sum(&terms)
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    /// Per-pair hinge arguments `τ - h`, for locating kinks.
    pub fn hinge_arguments(&self, theta: &[f64]) -> Vec<f64> {
        let lp = self.log_policy(theta);
        match hinge_threshold(self.lambda) {
            Some(tau) => self.pairs.iter().map(|p| tau - self.pair_margin(&lp, p)).collect(),
            None => Vec::new(),
        }
    }

    pub fn policy(&self, theta: &[f64]) -> Policy {
        let lp = self.log_policy(theta);
        Policy::from_logits(self.n_prompts, self.n_responses, &lp)
    }

    /// Reference-policy row, used by callers that need `π_ref` without the
    /// instance.
    pub fn ref_row(&self, x: usize) -> &[f64] {
        &self.ref_policy[x * self.n_responses..(x + 1) * self.n_responses]
    }
}

/// Analytic gradient of the practical DPO-COV objective with respect to the
/// reward parameters `θ`.
pub fn loss_gradient(
    theta: &[f64],
    samples: &[PreferenceSample],
    instance: &Instance,
    hyper: &Hyperparams,
    setting: Setting,
) -> Result<Vec<f64>> {
    if theta.len() != instance.cells() {
        return Err(Error::Shape {
            what: "theta",
            expected: instance.cells(),
            found: theta.len(),
        });
    }
    let obj = CompiledObjective::new(samples, instance, hyper, setting, &Anchor::Empirical)?;
    Ok(obj.evaluate(theta).gradient)
}

/// Per-sample route to the un-approximated DPO-COV objective: the empirical
/// regularizer is replaced by `∓βη E_{x~ρ,a~base} log π(a|x)`. The
/// π-independent constant is dropped.
pub fn dpo_cov_objective_exact(
    pi: &Policy,
    samples: &[PreferenceSample],
    instance: &Instance,
    hyper: &Hyperparams,
    setting: Setting,
    base: &Policy,
) -> Result<LossBreakdown> {
    let mut b = per_sample_loss(pi, samples, instance, &hyper.with_eta(0.0), setting, false)?;
    let expect: f64 = (0..instance.n_prompts)
        .map(|x| {
            instance.prompt_dist[x]
                * (0..instance.n_responses)
                    .map(|a| base.get(x, a) * math::ln(pi.get(x, a)))
                    .sum::<f64>()
        })
        .sum();
    b.pessimism_term = setting.anchor_sign() * hyper.beta * hyper.eta * expect;
    b.total = b.nll_term + b.noise_penalty + b.pessimism_term;
    Ok(b)
}

/// Convenience: `log π_r` as a `Vec`, re-exported for analysis code.
pub fn log_policy(r: &RewardTable, instance: &Instance, beta: f64, omega: f64) -> Vec<f64> {
    log_policy_from_reward(r, instance, beta, omega)
}

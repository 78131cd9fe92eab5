//! Sampled estimates of the offline coverage and online coverability
//! coefficients.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::closed_forms::policy_from_reward;
use crate::datagen::base_policy_offline_exact;
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng;
use crate::types::{CorruptionSpec, Instance, Policy, RewardTable};

/// Ratios whose denominator falls below this are skipped.
const MIN_E_R: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineCoverage {
    /// Largest sampled ratio, `None` when every candidate was skipped.
    pub g: Option<f64>,
    /// Index of the maximizing reward in the family.
    pub witness: Option<usize>,
    pub evaluated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineCoverability {
    pub g_on: f64,
    /// `ν(a|x) ∝ max_r π_r(a|x)`.
    pub envelope: Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub g_offline: Option<f64>,
    pub g_online: f64,
    pub witness_reward: Option<RewardTable>,
    pub envelope: Policy,
}

impl CoverageReport {
    /// Both coefficients over one sampled reward family.
    pub fn estimate(
        instance: &Instance,
        corruption: &CorruptionSpec,
        beta: f64,
        omega: f64,
        family_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let family = sample_reward_family(instance, family_size, seed);
        let base = base_policy_offline_exact(instance, corruption);
        let off = offline_coverage_over_family(instance, &base, &family, beta, omega);
        let on = estimate_online_coverability(instance, &family, beta, omega)?;
        Ok(CoverageReport {
            g_offline: off.g,
            g_online: on.g_on,
            witness_reward: off.witness.map(|i| family[i].clone()),
            envelope: on.envelope,
        })
    }
}

/// Reward tables with i.i.d. uniform entries on `[0, R]`. A larger family
/// extends a smaller one drawn with the same seed.
pub fn sample_reward_family(instance: &Instance, size: usize, seed: u64) -> Vec<RewardTable> {
    let mut rng = rng::stream(seed, rng::streams::COVERAGE);
    let (nx, na, bound) = (instance.n_prompts, instance.n_responses, instance.reward_bound);
    (0..size)
        .map(|_| {
            let values = (0..nx * na).map(|_| rng::uniform_in(&mut rng, 0.0, bound)).collect();
            RewardTable::new(nx, na, values).expect("finite draws")
        })
        .collect()
}

/// `max_r LHS(r) / E_r`, where `LHS(r) = E_{x, a~π_{r*}, a'~base}[Δ*(a,a') - Δ_r(a,a')]`
/// and `E_r² = E_{x, a,a'~π_b}[(Δ*(a,a') - Δ_r(a,a'))²]` is summed exactly over
/// the data distribution.
pub fn offline_coverage_over_family(
    instance: &Instance,
    base: &Policy,
    family: &[RewardTable],
    beta: f64,
    omega: f64,
) -> OfflineCoverage {
    let best = policy_from_reward(&instance.true_reward, instance, beta, omega);
    let (nx, na) = (instance.n_prompts, instance.n_responses);
    let pb = &instance.behavior_policy;
    let mut out = OfflineCoverage {
        g: None,
        witness: None,
        evaluated: 0,
        skipped: 0,
    };
    let mut err = vec![0.0; na];
    for (k, r) in family.iter().enumerate() {
        let (mut lhs, mut e2) = (0.0, 0.0);
        for x in 0..nx {
            for (a, e) in err.iter_mut().enumerate() {
                *e = instance.true_reward.get(x, a) - r.get(x, a);
            }
            let on_best: f64 = (0..na).map(|a| best.get(x, a) * err[a]).sum();
            let on_base: f64 = (0..na).map(|a| base.get(x, a) * err[a]).sum();
            lhs += instance.prompt_dist[x] * (on_best - on_base);
            let mut sq = 0.0;
            for a in 0..na {
                for b in 0..na {
                    let d = err[a] - err[b];
                    sq += pb.get(x, a) * pb.get(x, b) * d * d;
                }
            }
            e2 += instance.prompt_dist[x] * sq;
        }
        let e_r = sqrt(e2);
        if e_r < MIN_E_R {
            out.skipped += 1;
            continue;
        }
        out.evaluated += 1;
        let ratio = lhs / e_r;
        if out.g.is_none_or(|g| ratio > g) {
            out.g = Some(ratio);
            out.witness = Some(k);
        }
    }
    out
}

/// Offline coverage over `family_size` sampled rewards, with the exact
/// winner law as the baseline policy.
pub fn estimate_offline_coverage(
    instance: &Instance,
    corruption: &CorruptionSpec,
    beta: f64,
    omega: f64,
    family_size: usize,
    seed: u64,
) -> Result<OfflineCoverage> {
    if family_size == 0 {
        return Err(Error::Empty("reward family"));
    }
    corruption.validate()?;
    let base = base_policy_offline_exact(instance, corruption);
    let family = sample_reward_family(instance, family_size, seed);
    Ok(offline_coverage_over_family(instance, &base, &family, beta, omega))
}

/// Envelope coverability `max_{x,a,r} π_r(a|x) / ν(a|x)`, an upper bound on
/// the inf-sup over the sampled family.
pub fn estimate_online_coverability(
    instance: &Instance,
    family: &[RewardTable],
    beta: f64,
    omega: f64,
) -> Result<OnlineCoverability> {
    if family.is_empty() {
        return Err(Error::Empty("reward family"));
    }
    let (nx, na) = (instance.n_prompts, instance.n_responses);
    let policies: Vec<Policy> = family.iter().map(|r| policy_from_reward(r, instance, beta, omega)).collect();
    let mut env = vec![0.0f64; nx * na];
    for p in &policies {
        for (e, &v) in env.iter_mut().zip(p.as_slice()) {
            *e = e.max(v);
        }
    }
    let envelope = Policy::from_weights(nx, na, env)?;
    let mut g_on: f64 = 0.0;
    for p in &policies {
        for (v, n) in p.as_slice().iter().zip(envelope.as_slice()) {
            g_on = g_on.max(v / n);
        }
    }
    Ok(OnlineCoverability { g_on, envelope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_random_instance, two_point_instance};

    #[test]
    fn true_reward_is_skipped() {
        let inst = make_random_instance(2, 3, 1.0, 1).unwrap();
        let base = base_policy_offline_exact(&inst, &CorruptionSpec::clean());
        let out = offline_coverage_over_family(&inst, &base, core::slice::from_ref(&inst.true_reward), 0.5, 0.0);
        assert_eq!((out.g, out.skipped), (None, 1));
    }

    #[test]
    fn monotone_in_family_size() {
        let inst = make_random_instance(2, 3, 1.0, 7).unwrap();
        let c = CorruptionSpec::clean();
        let mut last = f64::NEG_INFINITY;
        for size in [1, 10, 100, 1000] {
            let g = estimate_offline_coverage(&inst, &c, 0.5, 0.0, size, 3).unwrap().g.unwrap();
            assert!(g >= last);
            last = g;
        }
    }

    #[test]
    fn single_reward_has_unit_coverability() {
        let inst = make_random_instance(2, 4, 1.0, 2).unwrap();
        let fam = sample_reward_family(&inst, 1, 0);
        let g = estimate_online_coverability(&inst, &fam, 0.5, 0.0).unwrap().g_on;
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_point_masses_give_two() {
        let inst = two_point_instance(0.5, 0.5, 1.0).unwrap();
        let fam = [
            RewardTable::new(1, 2, alloc::vec![1.0, 0.0]).unwrap(),
            RewardTable::new(1, 2, alloc::vec![0.0, 1.0]).unwrap(),
        ];
        let g = estimate_online_coverability(&inst, &fam, 0.01, 0.0).unwrap().g_on;
        assert!((g - 2.0).abs() < 1e-10);
    }
}

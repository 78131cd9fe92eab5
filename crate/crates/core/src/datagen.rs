//! Corrupted Bradley-Terry preference data.
//!
//! Offline samples draw `x ~ ρ`, two responses i.i.d. from the behavior
//! policy, a noise value `ξ*` from the [`CorruptionSpec`], and label the first
//! draw as the winner with probability `σ(r*(x,a¹) - r*(x,a⁻¹) + ξ*)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rng::{self, Rng};
use crate::types::{CorruptionSpec, Instance, Label, Policy, PreferenceSample};

/// Ordered preference samples plus the corruption law that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub samples: Vec<PreferenceSample>,
    pub corruption: CorruptionSpec,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `‖ξ*‖₁` of the hidden noise.
    pub fn noise_l1(&self) -> f64 {
        self.samples.iter().map(|s| s.hidden_noise.abs()).sum()
    }

    pub fn corrupted_count(&self) -> usize {
        self.samples.iter().filter(|s| s.hidden_noise != 0.0).count()
    }
}

/// Probability that the first response is preferred, given the true reward
/// difference `r*(x,a¹) - r*(x,a⁻¹)` and noise `ξ*`. The probability of label
/// `y` is `σ(y·(r_diff + noise))`, so both outcomes sum to one.
#[inline]
pub fn bt_label_prob(r_diff: f64, noise: f64) -> f64 {
    sigmoid(r_diff + noise)
}

/// One draw from the corrupted preference oracle.
pub fn oracle_label(
    instance: &Instance,
    prompt: usize,
    a1: usize,
    a_minus1: usize,
    noise: f64,
    rng: &mut Rng,
) -> Label {
    let d = instance.true_reward.diff(prompt, a1, a_minus1);
    if rng::coin(rng, bt_label_prob(d, noise)) {
        Label::Plus
    } else {
        Label::Minus
    }
}

pub fn generate_offline_dataset(
    instance: &Instance,
    n: usize,
    corruption: CorruptionSpec,
    seed: u64,
) -> Result<PreferenceDataset> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    corruption.validate()?;
    let mut rng = rng::stream(seed, rng::streams::OFFLINE_DATA);
    let samples = (0..n)
        .map(|_| {
            let noise_draw = |rng: &mut Rng| corruption.draw(rng);
            draw_offline_sample(instance, &mut rng, noise_draw)
        })
        .collect();
    Ok(PreferenceDataset {
        samples,
        corruption,
    })
}

/// Same sampling model with an explicit `ξ*` vector in place of the
/// generative corruption law.
pub fn generate_offline_dataset_with_noise(
    instance: &Instance,
    noise: &[f64],
    seed: u64,
) -> Result<PreferenceDataset> {
    if noise.is_empty() {
        return Err(Error::Empty("noise vector"));
    }
    let mut rng = rng::stream(seed, rng::streams::OFFLINE_DATA);
    let samples = noise
        .iter()
        .map(|&xi| draw_offline_sample(instance, &mut rng, |_| xi))
        .collect();
    Ok(PreferenceDataset {
        samples,
        corruption: CorruptionSpec::clean(),
    })
}

fn draw_offline_sample(
    instance: &Instance,
    rng: &mut Rng,
    noise: impl FnOnce(&mut Rng) -> f64,
) -> PreferenceSample {
    let x = rng::categorical(rng, &instance.prompt_dist);
    let row = instance.behavior_policy.row(x);
    let first = rng::categorical(rng, row);
    let second = rng::categorical(rng, row);
    let xi = noise(rng);
    let label = oracle_label(instance, x, first, second, xi, rng);
    PreferenceSample::from_draw(x, first, second, label, xi)
}

/// Draws `ξ*_1..ξ*_T` for the online loop from its own stream, so the noise
/// sequence (and hence `‖ξ*‖₁`) is known before the run starts.
pub fn online_noise(corruption: &CorruptionSpec, t: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, rng::streams::ONLINE_NOISE);
    (0..t).map(|_| corruption.draw(&mut rng)).collect()
}

/// Exact law of the winner given the prompt under the offline model:
///
/// `P(a^w = a | x) = π_b(a|x) Σ_{a'} π_b(a'|x) E_ξ[σ(Δ + ξ) + σ(Δ - ξ)]`,
/// `Δ = r*(x,a) - r*(x,a')`. The first term is `a` drawn first and winning,
/// the second is `a` drawn second and the first draw losing.
pub fn base_policy_offline_exact(instance: &Instance, corruption: &CorruptionSpec) -> Policy {
    let (nx, na) = (instance.n_prompts, instance.n_responses);
    let support = corruption.support();
    let pb = &instance.behavior_policy;
    let mut probs = Vec::with_capacity(nx * na);
    for x in 0..nx {
        for a in 0..na {
            let mut acc = 0.0;
            for b in 0..na {
                let d = instance.true_reward.diff(x, a, b);
                let e: f64 = support
                    .iter()
                    .map(|&(xi, p)| p * (sigmoid(d + xi) + sigmoid(d - xi)))
                    .sum();
                acc += pb.get(x, b) * e;
            }
            probs.push(pb.get(x, a) * acc);
        }
    }
    // Rows already sum to one analytically; renormalize away rounding.
    Policy::from_weights(nx, na, probs).expect("winner law has positive mass")
}

/// Empirical winner frequencies per prompt; prompts never seen fall back to
/// `fallback`'s row.
pub fn empirical_winner_policy(
    dataset: &PreferenceDataset,
    n_prompts: usize,
    n_responses: usize,
    fallback: &Policy,
) -> Policy {
    let mut counts = alloc::vec![0.0; n_prompts * n_responses];
    for s in &dataset.samples {
        counts[s.prompt * n_responses + s.winner] += 1.0;
    }
    for x in 0..n_prompts {
        let row = &mut counts[x * n_responses..(x + 1) * n_responses];
        if row.iter().sum::<f64>() == 0.0 {
            row.copy_from_slice(fallback.row(x));
        }
    }
    Policy::from_weights(n_prompts, n_responses, counts).expect("nonempty rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_random_instance, two_point_instance, RewardTable, SignRule};
    use alloc::vec;

    #[test]
    fn label_prob_examples() {
        assert_eq!(bt_label_prob(0.0, 0.0), 0.5);
        assert!((bt_label_prob(1.0, 0.0) - 0.731_058_6).abs() < 1e-7);
        assert_eq!(bt_label_prob(0.5, -0.5), 0.5);
    }

    #[test]
    fn label_prob_normalizes() {
        for &(d, z) in &[(0.3, 1.7), (-2.0, 0.4), (5.0, -9.0)] {
            let s = bt_label_prob(d, z) + bt_label_prob(-d, -z);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn clean_data_has_zero_noise() {
        let inst = make_random_instance(3, 4, 1.0, 1).unwrap();
        let ds = generate_offline_dataset(&inst, 500, CorruptionSpec::clean(), 3).unwrap();
        assert!(ds.samples.iter().all(|s| s.hidden_noise == 0.0));
        assert!(ds.samples.iter().all(|s| s.is_consistent()));
    }

    #[test]
    fn corrupted_noise_has_controlled_l1() {
        let inst = make_random_instance(3, 4, 1.0, 1).unwrap();
        let c = CorruptionSpec::new(0.3, 1.5, SignRule::RandomSign).unwrap();
        let ds = generate_offline_dataset(&inst, 2000, c, 5).unwrap();
        let k = ds.corrupted_count();
        assert!((ds.noise_l1() - 1.5 * k as f64).abs() < 1e-9);
        assert!(ds.samples.iter().all(|s| s.hidden_noise.abs() == 0.0 || s.hidden_noise.abs() == 1.5));
    }

    #[test]
    fn two_point_base_policy() {
        let inst = two_point_instance(1.0, 0.0, 1.0).unwrap();
        let base = base_policy_offline_exact(&inst, &CorruptionSpec::clean());
        // enumerate the four ordered pairs by hand
        let expected = 0.25 + 0.5 * sigmoid(1.0);
        assert!((base.get(0, 0) - expected).abs() < 1e-15);
        assert!((expected - 0.6155).abs() < 1e-4);
    }

    #[test]
    fn constant_reward_base_is_behavior() {
        let mut inst = make_random_instance(3, 5, 2.0, 11).unwrap();
        inst.true_reward = RewardTable::constant(3, 5, 0.7);
        let base = base_policy_offline_exact(&inst, &CorruptionSpec::clean());
        for (a, b) in base.as_slice().iter().zip(inst.behavior_policy.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn explicit_noise_is_recorded() {
        let inst = two_point_instance(0.2, 0.9, 1.0).unwrap();
        let ds = generate_offline_dataset_with_noise(&inst, &[0.0, 1.0, -2.0], 1).unwrap();
        let got: alloc::vec::Vec<f64> = ds.samples.iter().map(|s| s.hidden_noise).collect();
        assert_eq!(got, vec![0.0, 1.0, -2.0]);
    }

    #[test]
    fn saturated_oracle() {
        let inst = two_point_instance(0.5, 0.5, 1.0).unwrap();
        let mut rng = rng::stream(0, 0);
        assert!(bt_label_prob(0.0, 50.0) >= 1.0 - 1e-20);
        for _ in 0..1000 {
            assert_eq!(oracle_label(&inst, 0, 0, 1, 50.0, &mut rng), Label::Plus);
        }
    }
}

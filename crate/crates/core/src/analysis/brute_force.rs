//! Exhaustive grid search over reward tables for the offline reward-space
//! objective `min_r L_{N,λ}(r, ξ_r) + η V_{β,ω}(π_r, r)`. Tiny instances
//! only; it serves as an oracle for the policy-space optimizer.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::closed_forms::{hinge_threshold, noise_closed_form, policy_from_reward};
use crate::datagen::{base_policy_offline_exact, PreferenceDataset};
use crate::error::{Error, Result};
use crate::math::log_sigmoid;
use crate::objectives::relative_value;
use crate::types::{Hyperparams, Instance, Policy, RewardTable};

pub const BRUTE_FORCE_MAX_CELLS: usize = 6;
pub const BRUTE_FORCE_MAX_RESOLUTION: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub reward: RewardTable,
    pub noise: Vec<f64>,
    pub policy: Policy,
    pub objective: f64,
    pub grid_spacing: f64,
}

/// Grid argmin with `grid_resolution` evenly spaced levels per entry on
/// `[0, R]`. Ties go to the first table in lexicographic grid order.
pub fn brute_force_rlhfcov_offline(
    dataset: &PreferenceDataset,
    instance: &Instance,
    hyper: &Hyperparams,
    grid_resolution: usize,
) -> Result<BruteForceResult> {
    hyper.validate()?;
    let cells = instance.cells();
    if cells > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::TooLarge {
            what: "brute-force instance cells",
            size: cells,
            cap: BRUTE_FORCE_MAX_CELLS,
        });
    }
    if grid_resolution > BRUTE_FORCE_MAX_RESOLUTION {
        return Err(Error::TooLarge {
            what: "brute-force grid resolution",
            size: grid_resolution,
            cap: BRUTE_FORCE_MAX_RESOLUTION,
        });
    }
    if grid_resolution < 2 {
        return Err(Error::Invalid("grid resolution must be at least 2".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }

    let na = instance.n_responses;
    let n = dataset.len() as f64;
    let mut counts: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for s in &dataset.samples {
        *counts.entry((s.prompt, s.winner, s.loser)).or_insert(0.0) += 1.0;
    }
    let pairs: Vec<(usize, usize, f64)> =
        counts.into_iter().map(|((x, w, l), c)| (x * na + w, x * na + l, c / n)).collect();
    let tau = hinge_threshold(hyper.lambda);
    let base = base_policy_offline_exact(instance, &dataset.corruption);
    let spacing = instance.reward_bound / (grid_resolution - 1) as f64;

    let mut digits = vec![0usize; cells];
    let mut values = vec![0.0; cells];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        for (v, &d) in values.iter_mut().zip(&digits) {
            *v = d as f64 * spacing;
        }
        // Per-sample loss depends on the label only through the sign of ξ,
        // so it is a function of the winner-loser difference alone.
        let nll: f64 = pairs
            .iter()
            .map(|&(iw, il, weight)| {
                let d = values[iw] - values[il];
                let u = tau.map_or(0.0, |t| (t - d).max(0.0));
                weight * (hyper.lambda * u - log_sigmoid(d + u))
            })
            .sum();
        let mut objective = nll;
        if hyper.eta > 0.0 {
            let r = RewardTable::new(instance.n_prompts, na, values.clone())?;
            let pi = policy_from_reward(&r, instance, hyper.beta, hyper.omega);
            objective += hyper.eta * relative_value(&pi, &r, &base, instance, hyper.beta, hyper.omega);
        }
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, values.clone()));
        }
        if !advance(&mut digits, grid_resolution) {
            break;
        }
    }

    let (objective, values) = best.expect("grid is nonempty");
    let reward = RewardTable::new(instance.n_prompts, na, values)?;
    let noise = dataset
        .samples
        .iter()
        .map(|s| noise_closed_form(reward.diff(s.prompt, s.winner, s.loser), s.label, hyper.lambda))
        .collect::<Result<Vec<f64>>>()?;
    let policy = policy_from_reward(&reward, instance, hyper.beta, hyper.omega);
    Ok(BruteForceResult {
        reward,
        noise,
        policy,
        objective,
        grid_spacing: spacing,
    })
}

/// Odometer increment; false after the last grid point.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

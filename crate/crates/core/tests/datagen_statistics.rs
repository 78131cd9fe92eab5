//! Monte Carlo checks of the data model against exact summations.

use dpocov_core::datagen::{base_policy_offline_exact, bt_label_prob, generate_offline_dataset, oracle_label};
use dpocov_core::rng;
use dpocov_core::types::make_random_instance;
use dpocov_core::{CorruptionSpec, Label, RewardTable, SignRule};

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn within_3se(count: usize, n: usize, p: f64) -> bool {
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (count as f64 / n as f64 - p).abs() <= 3.0 * se
}

#[test]
fn constant_reward_labels_pass_chi_square() {
    let inst = make_random_instance(3, 4, 1.0, 11).unwrap();
    let inst = inst.with_true_reward(RewardTable::constant(3, 4, 0.4)).unwrap();
    let n = 100_000;
    let ds = generate_offline_dataset(&inst, n, CorruptionSpec::clean(), 5).unwrap();
    let plus = ds.samples.iter().filter(|s| s.label == Label::Plus).count() as f64;
    let expected = n as f64 / 2.0;
    let chi2 = 2.0 * (plus - expected).powi(2) / expected;
    // 1 degree of freedom, p = 0.001.
    assert!(chi2 < 10.828, "chi2 = {chi2}");
}

#[test]
fn corrupted_label_frequency_matches_exact_mean() {
    let inst = make_random_instance(3, 4, 1.0, 7).unwrap();
    let c = CorruptionSpec::new(0.25, 2.0, SignRule::FixedPositive).unwrap();
    let ds = generate_offline_dataset(&inst, 100_000, c, 7).unwrap();

    let mut exact = 0.0;
    for x in 0..3 {
        for a in 0..4 {
            for b in 0..4 {
                let w = inst.prompt_dist[x] * inst.behavior_policy.get(x, a) * inst.behavior_policy.get(x, b);
                exact += w * logistic(inst.true_reward.get(x, a) - inst.true_reward.get(x, b) + 2.0);
            }
        }
    }
    let corrupted: Vec<_> = ds.samples.iter().filter(|s| s.hidden_noise != 0.0).collect();
    let plus = corrupted.iter().filter(|s| s.label == Label::Plus).count();
    assert!(corrupted.iter().all(|s| s.hidden_noise == 2.0));
    assert!(within_3se(plus, corrupted.len(), exact), "{plus}/{} vs {exact}", corrupted.len());
}

#[test]
fn oracle_frequency_matches_label_probability() {
    let inst = make_random_instance(2, 3, 2.0, 3).unwrap();
    let mut stream = rng::stream(9, 99);
    let (x, a1, a2, xi) = (1, 0, 2, -0.7);
    let n = 100_000;
    let plus = (0..n)
        .filter(|_| oracle_label(&inst, x, a1, a2, xi, &mut stream) == Label::Plus)
        .count();
    let p = bt_label_prob(inst.true_reward.diff(x, a1, a2), xi);
    assert!(within_3se(plus, n, p));
}

#[test]
fn oracle_is_fair_on_ties() {
    let inst = make_random_instance(1, 2, 1.0, 0).unwrap();
    let inst = inst.with_true_reward(RewardTable::constant(1, 2, 0.5)).unwrap();
    let mut stream = rng::stream(1, 42);
    let n = 100_000;
    let plus = (0..n)
        .filter(|_| oracle_label(&inst, 0, 0, 1, 0.0, &mut stream) == Label::Plus)
        .count();
    assert!(within_3se(plus, n, 0.5));
}

#[test]
fn oracle_stream_is_reproducible() {
    let inst = make_random_instance(2, 3, 1.0, 4).unwrap();
    let draw = |seed| {
        let mut s = rng::stream(seed, 7);
        (0..200).map(|_| oracle_label(&inst, 0, 1, 2, 0.3, &mut s)).collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn exact_winner_law_matches_empirical_frequencies() {
    let inst = make_random_instance(2, 3, 1.5, 21).unwrap();
    let c = CorruptionSpec::new(0.3, 1.0, SignRule::RandomSign).unwrap();
    let base = base_policy_offline_exact(&inst, &c);
    let ds = generate_offline_dataset(&inst, 1_000_000, c, 2).unwrap();
    let mut counts = [[0usize; 3]; 2];
    for s in &ds.samples {
        counts[s.prompt][s.winner] += 1;
    }
    for (x, row) in counts.iter().enumerate() {
        let nx: usize = row.iter().sum();
        for (a, &k) in row.iter().enumerate() {
            assert!(within_3se(k, nx, base.get(x, a)), "x={x} a={a}: {k}/{nx} vs {}", base.get(x, a));
        }
    }
}

#[test]
fn corrupted_count_is_binomial() {
    let inst = make_random_instance(2, 2, 1.0, 1).unwrap();
    let c = CorruptionSpec::new(0.25, 4.0, SignRule::RandomSign).unwrap();
    let ds = generate_offline_dataset(&inst, 10_000, c, 8).unwrap();
    assert!(within_3se(ds.corrupted_count(), 10_000, 0.25));
    assert_eq!(ds.noise_l1(), 4.0 * ds.corrupted_count() as f64);
}

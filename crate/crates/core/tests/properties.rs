//! Property tests for the invariants shared across modules.

use dpocov_core::analysis::{
    estimate_online_coverability, generalization_gap, sample_reward_family, theorem_eta_offline, theorem_eta_online,
};
use dpocov_core::closed_forms::{noise_closed_form, noise_from_policy, policy_from_reward, reward_from_policy};
use dpocov_core::datagen::{bt_label_prob, generate_offline_dataset, PreferenceDataset};
use dpocov_core::objectives::{kl_to_ref, offline_loss, online_loss, Setting};
use dpocov_core::training::PolicyParams;
use dpocov_core::types::make_random_instance;
use dpocov_core::{CorruptionSpec, Hyperparams, Label, Policy, PreferenceSample, SignRule};
use proptest::prelude::*;

fn sign_rule() -> impl Strategy<Value = SignRule> {
    prop_oneof![Just(SignRule::FixedPositive), Just(SignRule::FixedNegative), Just(SignRule::RandomSign)]
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Plus), Just(Label::Minus)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_probabilities_normalize(d in -50.0..50.0f64, z in -50.0..50.0f64) {
        prop_assert!((bt_label_prob(d, z) + bt_label_prob(-d, -z) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn generated_samples_are_consistent(
        seed in any::<u64>(), nx in 1usize..4, na in 2usize..5, n in 1usize..200,
        frac in 0.0..=1.0f64, mag in 0.0..5.0f64, rule in sign_rule(),
    ) {
        let inst = make_random_instance(nx, na, 1.0, seed).unwrap();
        prop_assert!(inst.validate().is_ok());
        let c = CorruptionSpec::new(frac, mag, rule).unwrap();
        let ds = generate_offline_dataset(&inst, n, c, seed).unwrap();
        prop_assert_eq!(ds.len(), n);
        for s in &ds.samples {
            prop_assert!(s.is_consistent());
            let pair = (s.winner, s.loser);
            prop_assert!(pair == (s.hidden_first, s.hidden_second) || pair == (s.hidden_second, s.hidden_first));
            prop_assert!(s.hidden_noise == 0.0 || s.hidden_noise.abs() == mag);
        }
        prop_assert!((ds.noise_l1() - mag * ds.corrupted_count() as f64).abs() <= 1e-9 * (1.0 + ds.noise_l1()));
        let again = generate_offline_dataset(&inst, n, c, seed).unwrap();
        prop_assert_eq!(ds.samples, again.samples);
    }

    #[test]
    fn noise_sign_law_and_monotone_lambda(d in -6.0..6.0f64, y in label(), l1 in 0.01..1.5f64, l2 in 0.01..1.5f64) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = noise_closed_form(d, y, lo).unwrap();
        let b = noise_closed_form(d, y, hi).unwrap();
        prop_assert!(y.sign() * a >= 0.0 && y.sign() * b >= 0.0);
        prop_assert!(b.abs() <= a.abs());
        if hi >= 1.0 {
            prop_assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn policy_noise_shrinks_with_lambda(seed in any::<u64>(), beta in 0.05..2.0f64, l1 in 0.01..1.2f64, l2 in 0.01..1.2f64) {
        let inst = make_random_instance(2, 3, 2.0, seed).unwrap();
        let ds = generate_offline_dataset(&inst, 40, CorruptionSpec::clean(), seed).unwrap();
        let r = inst.true_reward.clone();
        let pi = policy_from_reward(&r, &inst, beta, 0.0);
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let l1_norm = |lambda: f64| -> f64 {
            let h = Hyperparams::new(beta, 0.0, 0.0, lambda).unwrap();
            ds.samples.iter().map(|s| noise_from_policy(&pi, s, &inst, &h).unwrap().abs()).sum()
        };
        prop_assert!(l1_norm(hi) <= l1_norm(lo) + 1e-12);
    }

    #[test]
    fn parameterized_policies_are_valid(seed in any::<u64>(), bound in 0.1..5.0f64, beta in 0.05..2.0f64,
                                        theta in prop::collection::vec(-30.0..30.0f64, 6)) {
        let inst = make_random_instance(2, 3, bound, seed).unwrap();
        let p = PolicyParams::new(2, 3, bound, theta).unwrap();
        let r = p.reward_table();
        prop_assert!(r.as_slice().iter().all(|&v| v > 0.0 && v < bound));
        let pi = p.policy(&inst, beta, 0.0);
        prop_assert!(pi.is_strictly_positive());
        for x in 0..2 {
            prop_assert!((pi.row(x).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        // Implied rewards of π_θ difference-match r_θ.
        let implied = reward_from_policy(&pi, &inst, beta, 0.0).unwrap();
        for x in 0..2 {
            for a in 1..3 {
                prop_assert!((implied.diff(x, a, 0) - r.diff(x, a, 0)).abs() <= 1e-9 * (1.0 + bound));
            }
        }
    }

    #[test]
    fn losses_decompose_and_stay_finite(seed in any::<u64>(), beta in 0.05..2.0f64, eta in 0.0..1.0f64,
                                        omega in 0.0..0.01f64, lambda in 0.01..1.5f64) {
        let inst = make_random_instance(3, 3, 1.0, seed).unwrap();
        let ds = generate_offline_dataset(&inst, 30, CorruptionSpec::clean(), seed).unwrap();
        let h = Hyperparams::new(beta, eta, omega, lambda).unwrap();
        let pi = policy_from_reward(&inst.true_reward, &inst, beta, omega);
        for b in [offline_loss(&pi, &ds, &inst, &h).unwrap(), online_loss(&pi, &ds.samples, &inst, &h).unwrap()] {
            prop_assert!(b.total.is_finite());
            prop_assert!((b.total - (b.nll_term + b.noise_penalty + b.pessimism_term)).abs() <= 1e-12);
        }
    }

    #[test]
    fn pessimism_and_optimism_are_sign_flips(seed in any::<u64>(), eta in 0.0..2.0f64, lambda in 0.05..1.5f64) {
        // With every label -1 the winner is the second draw, which is the
        // online anchor, so the two regularizers see the same responses.
        let inst = make_random_instance(2, 4, 1.0, seed).unwrap();
        let ds = generate_offline_dataset(&inst, 50, CorruptionSpec::clean(), seed).unwrap();
        let flipped: Vec<PreferenceSample> = ds
            .samples
            .iter()
            .map(|s| PreferenceSample::from_draw(s.prompt, s.hidden_first, s.hidden_second, Label::Minus, 0.0))
            .collect();
        prop_assert!(flipped.iter().all(|s| Setting::Offline.anchor_response(s) == Setting::Online.anchor_response(s)));
        let ds = PreferenceDataset { samples: flipped, corruption: CorruptionSpec::clean() };
        let h = Hyperparams::new(0.5, eta, 0.0, lambda).unwrap();
        let pi = policy_from_reward(&inst.true_reward, &inst, 0.5, 0.0);
        let off = offline_loss(&pi, &ds, &inst, &h).unwrap();
        let on = online_loss(&pi, &ds.samples, &inst, &h).unwrap();
        prop_assert_eq!(off.pessimism_term, -on.pessimism_term);
        prop_assert_eq!(off.nll_term, on.nll_term);
        prop_assert_eq!(off.noise_penalty, on.noise_penalty);
    }

    #[test]
    fn gaps_and_kl_are_nonnegative(seed in any::<u64>(), beta in 0.05..2.0f64, omega in 0.0..0.01f64,
                                   w in prop::collection::vec(0.001..1.0f64, 12)) {
        let inst = make_random_instance(3, 4, 2.0, seed).unwrap();
        let pi = Policy::from_weights(3, 4, w).unwrap();
        let g = generalization_gap(&pi, &inst, beta, omega);
        prop_assert!(g.gap >= -1e-10);
        prop_assert!(g.kl_to_ref >= 0.0 && kl_to_ref(&pi, &inst) >= 0.0);
    }

    #[test]
    fn coverability_is_at_least_one(seed in any::<u64>(), size in 1usize..30, beta in 0.01..2.0f64) {
        let inst = make_random_instance(2, 3, 1.0, seed).unwrap();
        let fam = sample_reward_family(&inst, size, seed);
        let g = estimate_online_coverability(&inst, &fam, beta, 0.0).unwrap().g_on;
        prop_assert!(g >= 1.0 - 1e-12 && g.is_finite());
        prop_assert!(g <= size as f64 + 1e-9);
    }

    #[test]
    fn theorem_etas_are_positive(n in 1usize..100_000, bound in 0.1..5.0f64, xi in 0.0..100.0f64,
                                 delta in 0.001..0.999f64, g_on in 1.0..50.0f64, nx in 1usize..10, na in 2usize..10) {
        let off = theorem_eta_offline(n, bound, xi, delta, nx, na).unwrap();
        let on = theorem_eta_online(n, bound, xi, delta, g_on, nx, na).unwrap();
        prop_assert!(off > 0.0 && off.is_finite());
        prop_assert!(on > 0.0 && on.is_finite());
        prop_assert!(theorem_eta_offline(2 * n, bound, xi, delta, nx, na).unwrap() < off);
    }
}

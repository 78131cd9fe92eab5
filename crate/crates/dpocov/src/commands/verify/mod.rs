//! Verification suite: randomized lemma checks, closed forms against
//! numerical oracles, gradients against finite differences, the vanilla
//! reduction and the reward-space/policy-space equivalence on tiny
//! instances.

pub mod oracles;

use std::time::Instant;

use dpocov_core::analysis::{brute_force_rlhfcov_offline, verify_lemma_suite, LemmaCheck};
use dpocov_core::closed_forms::{noise_closed_form, noise_from_policy, policy_from_reward, reward_from_policy};
use dpocov_core::datagen::{base_policy_offline_exact, generate_offline_dataset};
use dpocov_core::objectives::{
    loss_gradient, offline_loss, online_loss, relative_value, vanilla_dpo_loss, Anchor, CompiledObjective, Setting,
};
use dpocov_core::rng::{self, uniform_in, Rng};
use dpocov_core::training::{optimize_offline_with, OptSettings, PolicyParams};
use dpocov_core::types::make_random_instance;
use dpocov_core::{CorruptionSpec, Hyperparams, Label, Policy, RewardTable, SignRule};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RunContext;
use crate::error::{exit, CliResult, CommandResult};
use crate::formats::write_json;

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest observed error, in the check's own units.
    pub worst: f64,
    pub tolerance: f64,
    /// Inputs reproducing the first failure.
    pub witness: Option<Value>,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            trials: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            witness: None,
        }
    }

    /// Records one trial with error `err`; fails when `err > tolerance` or
    /// `ok` is false.
    fn record(&mut self, err: f64, ok: bool, witness: impl FnOnce() -> Value) {
        self.trials += 1;
        if err > self.worst || err.is_nan() {
            self.worst = err;
        }
        if !ok || err.is_nan() || err > self.tolerance {
            self.failures += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }

    fn from_lemma(c: &LemmaCheck) -> Self {
        CheckResult {
            name: format!("lemma {}", c.name),
            trials: c.trials,
            failures: c.violations,
            worst: c.worst_excess,
            tolerance: 0.0,
            witness: c.witness.as_ref().map(|w| json!(w)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    pub wall_time_s: f64,
}

fn random_policy(s: &mut Rng, nx: usize, na: usize) -> Policy {
    Policy::from_weights(nx, na, (0..nx * na).map(|_| uniform_in(s, 1e-3, 1.0)).collect()).expect("positive weights")
}

fn random_reward(s: &mut Rng, nx: usize, na: usize, bound: f64) -> RewardTable {
    RewardTable::new(nx, na, (0..nx * na).map(|_| uniform_in(s, 0.0, bound)).collect()).expect("finite entries")
}

fn random_label(s: &mut Rng) -> Label {
    if rng::coin(s, 0.5) {
        Label::Plus
    } else {
        Label::Minus
    }
}

/// The softmax-of-reward policy beats `policies` random policies and matches
/// exponentiated-gradient ascent per prompt within `1e-8`, on instances up
/// to 8 prompts by 6 responses.
pub fn check_closed_form_maximizer(seed: u64, instances: usize, policies: usize) -> CheckResult {
    let mut c = CheckResult::new("closed-form maximizer vs mirror ascent", 1e-8);
    let mut s = rng::stream(seed, 101);
    for k in 0..instances {
        let nx = 1 + rng::index(&mut s, 8);
        let na = 2 + rng::index(&mut s, 5);
        let inst = make_random_instance(nx, na, 2.0, seed.wrapping_add(k as u64)).expect("valid sizes");
        let beta = uniform_in(&mut s, 0.1, 2.0);
        let omega = uniform_in(&mut s, 0.0, 0.01);
        let r = random_reward(&mut s, nx, na, 2.0);
        let best = policy_from_reward(&r, &inst, beta, omega);
        let v_best = relative_value(&best, &r, &inst.ref_policy, &inst, beta, omega);
        let beaten = (0..policies)
            .map(|_| relative_value(&random_policy(&mut s, nx, na), &r, &inst.ref_policy, &inst, beta, omega))
            .filter(|&v| v > v_best)
            .count();
        let mut err: f64 = 0.0;
        for x in 0..nx {
            let shaped: Vec<f64> = (0..na).map(|a| r.get(x, a) - omega * inst.len_of(x, a)).collect();
            let md = oracles::mirror_ascent(&shaped, inst.ref_policy.row(x), beta, 200);
            let v_md = oracles::row_value(&md, &shaped, inst.ref_policy.row(x), beta);
            let v_cf = oracles::row_value(best.row(x), &shaped, inst.ref_policy.row(x), beta);
            err = err.max((v_cf - v_md).abs());
        }
        c.record(err, beaten == 0, || json!({"k": k, "n_prompts": nx, "n_responses": na, "beta": beta, "omega": omega, "beaten_by": beaten}));
    }
    c
}

/// Closed-form noise against golden-section search on `triples` random
/// `(r_diff, y, λ)`, a fifth of them with `λ ≥ 1` where it must be zero.
pub fn check_noise_closed_form(seed: u64, triples: usize) -> CheckResult {
    let mut c = CheckResult::new("closed-form noise vs golden section", 1e-8);
    let mut s = rng::stream(seed, 102);
    for k in 0..triples {
        let d = uniform_in(&mut s, -6.0, 6.0);
        let y = random_label(&mut s);
        let lambda = if k % 5 == 0 { uniform_in(&mut s, 1.0, 3.0) } else { uniform_in(&mut s, 0.01, 1.0) };
        let xi = noise_closed_form(d, y, lambda).unwrap_or(f64::NAN);
        let searched = oracles::noise_by_search(d, y.sign(), lambda);
        let zero_ok = lambda < 1.0 || xi == 0.0;
        c.record((xi - searched).abs(), zero_ok, || json!({"r_diff": d, "y": y.as_i8(), "lambda": lambda}));
    }
    c
}

/// `π_{r^π} = π` and implied-reward differences, within `1e-12`.
pub fn check_round_trips(seed: u64, cases: usize) -> CheckResult {
    let mut c = CheckResult::new("policy/reward round trips", 1e-12);
    let mut s = rng::stream(seed, 103);
    for k in 0..cases {
        let (nx, na) = (1 + rng::index(&mut s, 4), 2 + rng::index(&mut s, 4));
        let inst = make_random_instance(nx, na, 1.0, seed.wrapping_add(k as u64)).expect("valid sizes");
        let (beta, omega) = (uniform_in(&mut s, 0.1, 2.0), uniform_in(&mut s, 0.0, 0.01));
        let pi = random_policy(&mut s, nx, na);
        let back = reward_from_policy(&pi, &inst, beta, omega).map(|r| policy_from_reward(&r, &inst, beta, omega));
        let mut err = match back {
            Ok(b) => pi.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            Err(_) => f64::INFINITY,
        };
        let r = random_reward(&mut s, nx, na, 1.0);
        if let Ok(implied) = reward_from_policy(&policy_from_reward(&r, &inst, beta, omega), &inst, beta, omega) {
            for x in 0..nx {
                for a in 1..na {
                    err = err.max((implied.diff(x, a, 0) - r.diff(x, a, 0)).abs());
                }
            }
        } else {
            err = f64::INFINITY;
        }
        c.record(err, true, || json!({"k": k, "n_prompts": nx, "n_responses": na, "beta": beta, "omega": omega}));
    }
    c
}

/// Analytic `θ`-gradients against central differences at `points` random
/// points whose hinge arguments are at least `1e-3` from the kink; relative
/// error at most `1e-5`.
pub fn check_gradients(seed: u64, points: usize) -> CheckResult {
    let mut c = CheckResult::new("gradient vs central differences", 1e-5);
    let mut s = rng::stream(seed, 104);
    let mut k = 0u64;
    while c.trials < points {
        k += 1;
        let (nx, na) = (1 + rng::index(&mut s, 3), 2 + rng::index(&mut s, 3));
        let inst = make_random_instance(nx, na, 2.0, seed.wrapping_add(k)).expect("valid sizes");
        let corruption = CorruptionSpec::new(0.3, 1.5, SignRule::RandomSign).expect("valid spec");
        let ds = generate_offline_dataset(&inst, 20 + rng::index(&mut s, 40), corruption, k).expect("n > 0");
        let hyper = Hyperparams {
            beta: uniform_in(&mut s, 0.2, 1.5),
            eta: uniform_in(&mut s, 0.0, 0.5),
            omega: uniform_in(&mut s, 0.0, 0.005),
            lambda: uniform_in(&mut s, 0.05, 1.2),
        };
        let setting = if k.is_multiple_of(2) { Setting::Offline } else { Setting::Online };
        let theta: Vec<f64> = (0..nx * na).map(|_| uniform_in(&mut s, -3.0, 3.0)).collect();
        let obj = CompiledObjective::new(&ds.samples, &inst, &hyper, setting, &Anchor::Empirical).expect("valid inputs");
        if obj.hinge_arguments(&theta).iter().any(|h| h.abs() < 1e-3) {
            continue;
        }
        let loss = |t: &[f64]| {
            let pi = PolicyParams::new(nx, na, 2.0, t.to_vec()).expect("finite theta").policy(&inst, hyper.beta, hyper.omega);
            let b = match setting {
                Setting::Offline => offline_loss(&pi, &ds, &inst, &hyper),
                Setting::Online => online_loss(&pi, &ds.samples, &inst, &hyper),
            };
            b.map_or(f64::NAN, |b| b.total)
        };
        let g = loss_gradient(&theta, &ds.samples, &inst, &hyper, setting).expect("valid inputs");
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        let err = (0..theta.len())
            .map(|i| (g[i] - oracles::central_difference(loss, &theta, i, 1e-5)).abs())
            .fold(0.0f64, f64::max)
            / scale;
        c.record(err, true, || json!({"k": k, "setting": setting.as_str(), "theta": theta, "hyperparams": hyper}));
    }
    c
}

/// At `λ = 1, η = ω = 0` both practical losses equal the vanilla DPO loss
/// up to a few ulps.
pub fn check_vanilla_reduction(seed: u64, datasets: usize) -> CheckResult {
    let mut c = CheckResult::new("vanilla reduction (offline and online)", 4.0 * f64::EPSILON);
    let mut s = rng::stream(seed, 105);
    for k in 0..datasets {
        let (nx, na) = (1 + rng::index(&mut s, 4), 2 + rng::index(&mut s, 4));
        let inst = make_random_instance(nx, na, 1.0, seed.wrapping_add(k as u64)).expect("valid sizes");
        let corruption = CorruptionSpec::new(0.2, 1.0, SignRule::RandomSign).expect("valid spec");
        let ds = generate_offline_dataset(&inst, 1 + rng::index(&mut s, 100), corruption, k as u64).expect("n > 0");
        let beta = uniform_in(&mut s, 0.05, 2.0);
        let pi = random_policy(&mut s, nx, na);
        let h = Hyperparams::vanilla(beta);
        let v = vanilla_dpo_loss(&pi, &ds.samples, &inst, beta);
        let off = offline_loss(&pi, &ds, &inst, &h).map_or(f64::NAN, |b| b.total);
        let on = online_loss(&pi, &ds.samples, &inst, &h).map_or(f64::NAN, |b| b.total);
        let err = (off - v).abs().max((on - v).abs()) / v.abs().max(1.0);
        c.record(err, true, || json!({"k": k, "n_prompts": nx, "n_responses": na, "beta": beta}));
    }
    c
}

/// Outcome of one grid-oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceErrors {
    pub total_variation: f64,
    pub reward_diff: f64,
    pub noise: f64,
    pub grid_spacing: f64,
    pub converged: bool,
}

/// Brute-force reward-space minimizer on a 21-level grid against the
/// policy-space optimizer with the exact base-policy anchor. `λ = 0.6` puts
/// the hinge threshold below zero; for `λ ≤ 1/2` the hinge pieces of winning
/// and losing pairs can cancel, leaving the objective flat in the reward
/// difference and the grid argmin arbitrarily far from the continuous one.
pub fn equivalence_errors(n_prompts: usize, seed: u64) -> dpocov_core::Result<EquivalenceErrors> {
    let inst = make_random_instance(n_prompts, 2, 1.0, seed)?;
    let corruption = CorruptionSpec::new(0.2, 1.0, SignRule::RandomSign)?;
    let ds = generate_offline_dataset(&inst, 60, corruption, seed)?;
    let hyper = Hyperparams::new(1.0, 0.3, 0.01, 0.6)?;
    let bf = brute_force_rlhfcov_offline(&ds, &inst, &hyper, 21)?;
    let anchor = Anchor::Exact(base_policy_offline_exact(&inst, &ds.corruption));
    let (pi, rep) = optimize_offline_with(&ds, &inst, &hyper, &OptSettings::default(), &PolicyParams::zeros(&inst), &anchor)?;
    let r_pi = reward_from_policy(&pi, &inst, hyper.beta, hyper.omega)?;
    let mut reward_diff: f64 = 0.0;
    for x in 0..n_prompts {
        reward_diff = reward_diff.max((bf.reward.diff(x, 1, 0) - r_pi.diff(x, 1, 0)).abs());
    }
    let mut noise: f64 = 0.0;
    for (sample, xi_bf) in ds.samples.iter().zip(&bf.noise) {
        noise = noise.max((noise_from_policy(&pi, sample, &inst, &hyper)? - xi_bf).abs());
    }
    Ok(EquivalenceErrors {
        total_variation: pi.max_total_variation(&bf.policy),
        reward_diff,
        noise,
        grid_spacing: bf.grid_spacing,
        converged: rep.converged,
    })
}

/// [`equivalence_errors`] on 1×2 and 2×2 instances, `per_shape` seeds each:
/// total variation at most `0.02`, reward differences and noise within one
/// grid spacing.
pub fn check_equivalence(seed: u64, per_shape: usize) -> CheckResult {
    let mut c = CheckResult::new("reward-space grid oracle vs policy optimizer", 0.02);
    for nx in [1usize, 2] {
        for k in 0..per_shape as u64 {
            let s = seed.wrapping_add(k);
            match equivalence_errors(nx, s) {
                Ok(e) => {
                    let ok = e.converged && e.reward_diff <= e.grid_spacing && e.noise <= e.grid_spacing;
                    c.record(e.total_variation, ok, || {
                        json!({"n_prompts": nx, "seed": s, "reward_diff": e.reward_diff, "noise": e.noise})
                    });
                }
                Err(err) => c.record(f64::INFINITY, false, || json!({"n_prompts": nx, "seed": s, "error": err.to_string()})),
            }
        }
    }
    c
}

/// Every check, sized from `trials`: the lemma suite and noise search use
/// `trials` directly, the other checks a capped share of it.
pub fn run_suite(seed: u64, trials: usize) -> Vec<CheckResult> {
    let trials = trials.max(1);
    let lemmas = verify_lemma_suite(seed, trials);
    let mut checks: Vec<CheckResult> = lemmas.checks.iter().map(CheckResult::from_lemma).collect();
    checks.push(check_closed_form_maximizer(seed, (trials / 500).clamp(1, 200), trials.min(1000)));
    checks.push(check_noise_closed_form(seed, trials));
    checks.push(check_round_trips(seed, trials.min(1000)));
    checks.push(check_gradients(seed, trials.min(100)));
    checks.push(check_vanilla_reduction(seed, trials.min(100)));
    checks.push(check_equivalence(seed, if trials >= 1000 { 3 } else { 1 }));
    checks
}

/// Runs the suite, prints a pass/fail table and writes `verify_report.json`.
/// Exit code 3 if any check failed.
pub fn cmd_verify(seed: u64, trials: usize, ctx: &RunContext) -> CliResult<CommandResult> {
    let started = Instant::now();
    let checks = run_suite(seed, trials);
    let all_passed = checks.iter().all(CheckResult::passed);
    let report = VerifyReport {
        seed,
        trials,
        checks,
        all_passed,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let width = report.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>8}  {:>8}  {:>11}  {:>9}  result", "check", "trials", "failures", "worst", "tolerance");
    for c in &report.checks {
        println!(
            "{:<width$}  {:>8}  {:>8}  {:>11.3e}  {:>9.1e}  {}",
            c.name,
            c.trials,
            c.failures,
            c.worst,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    let path = ctx.artifact("verify_report.json")?;
    write_json(&path, &report)?;
    let exit_code = if all_passed { exit::OK } else { exit::VERIFICATION };
    if !all_passed {
        eprintln!("error: verification failed; witnesses are in {}", path.display());
    }
    Ok(CommandResult { exit_code, artifacts: vec![path] })
}

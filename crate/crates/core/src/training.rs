//! Offline and online DPO-COV training over the reward-induced policy class.
//!
//! Policies are parameterized through the reward, `r_θ = R·σ(θ)`, so every
//! iterate stays inside the bounded reward family without projection.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::closed_forms::policy_from_reward;
use crate::datagen::{online_noise, oracle_label, PreferenceDataset};
use crate::error::{Error, Result};
use crate::math::{self, sigmoid};
use crate::objectives::{j_value, Anchor, CompiledObjective, Evaluation, LossBreakdown, Setting};
use crate::rng;
use crate::types::{CorruptionSpec, Hyperparams, Instance, Policy, PreferenceSample, RewardTable};

/// Reward parameters `θ`, one per `(x, a)` cell, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub n_prompts: usize,
    pub n_responses: usize,
    pub reward_bound: f64,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(n_prompts: usize, n_responses: usize, reward_bound: f64, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_prompts * n_responses {
            return Err(Error::Shape {
                what: "theta",
                expected: n_prompts * n_responses,
                found: theta.len(),
            });
        }
        if !(reward_bound > 0.0 && reward_bound.is_finite()) {
            return Err(Error::OutOfRange {
                what: "reward bound",
                value: reward_bound,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("theta must be finite".into()));
        }
        Ok(PolicyParams {
            n_prompts,
            n_responses,
            reward_bound,
            theta,
        })
    }

    /// `θ = 0`, i.e. the constant reward `R/2`.
    pub fn zeros(instance: &Instance) -> Self {
        PolicyParams {
            n_prompts: instance.n_prompts,
            n_responses: instance.n_responses,
            reward_bound: instance.reward_bound,
            theta: vec![0.0; instance.cells()],
        }
    }

    /// Inverse of the squash; every entry of `r` must lie strictly inside
    /// `(0, R)`.
    pub fn from_reward(r: &RewardTable, reward_bound: f64) -> Result<Self> {
        let mut theta = Vec::with_capacity(r.as_slice().len());
        for &v in r.as_slice() {
            if !(v > 0.0 && v < reward_bound) {
                return Err(Error::OutOfRange {
                    what: "reward for parameterization",
                    value: v,
                    lo: 0.0,
                    hi: reward_bound,
                });
            }
            let p = v / reward_bound;
            theta.push(math::ln(p / (1.0 - p)));
        }
        Self::new(r.n_prompts(), r.n_responses(), reward_bound, theta)
    }

    #[inline]
    pub fn reward_of(theta: f64, reward_bound: f64) -> f64 {
        reward_bound * sigmoid(theta)
    }

    /// `dr/dθ = R σ(θ) σ(-θ)`.
    #[inline]
    pub fn jacobian(theta: f64, reward_bound: f64) -> f64 {
        reward_bound * sigmoid(theta) * sigmoid(-theta)
    }

    pub fn reward_table(&self) -> RewardTable {
        let values = self.theta.iter().map(|&t| Self::reward_of(t, self.reward_bound)).collect();
        RewardTable::new(self.n_prompts, self.n_responses, values).expect("squashed rewards are finite")
    }

    pub fn policy(&self, instance: &Instance, beta: f64, omega: f64) -> Policy {
        policy_from_reward(&self.reward_table(), instance, beta, omega)
    }

    fn check_against(&self, instance: &Instance) -> Result<()> {
        if self.theta.len() != instance.cells() {
            return Err(Error::Shape {
                what: "initial parameters",
                expected: instance.cells(),
                found: self.theta.len(),
            });
        }
        if self.reward_bound != instance.reward_bound {
            return Err(Error::Invalid("parameter reward bound differs from the instance".into()));
        }
        Ok(())
    }
}

/// Coordinates the descent steps are taken in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSpace {
    /// Plain gradient descent on `θ`.
    Theta,
    /// Projected gradient descent on the reward table `r_θ` over the box
    /// `[R σ(-Θ), R σ(Θ)]`, mapped back to `θ`. Optima on the reward
    /// boundary sit at `|θ| → ∞`, where the `θ`-gradient vanishes
    /// exponentially and plain descent crawls.
    Reward,
}

/// Largest `|θ|` the reward-space steps produce.
pub const THETA_LIMIT: f64 = 40.0;

/// Full-batch gradient descent with Armijo backtracking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptSettings {
    /// Initial trial step, also used whenever no curvature estimate exists.
    pub step: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    /// Stop once the Euclidean norm of the `θ`-gradient is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed each line search with a Barzilai-Borwein step instead of `step`.
    pub barzilai_borwein: bool,
    pub space: StepSpace,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            step: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            tol: 1e-8,
            max_iter: 5000,
            barzilai_borwein: true,
            space: StepSpace::Reward,
        }
    }
}

impl OptSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |what, value, lo, hi| Err(Error::OutOfRange { what, value, lo, hi });
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("optimizer step", self.step, 0.0, f64::INFINITY);
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("optimizer shrink", self.shrink, 0.0, 1.0);
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("Armijo constant", self.armijo_c, 0.0, 1.0);
        }
        if !(self.tol >= 0.0) {
            return bad("optimizer tolerance", self.tol, 0.0, f64::INFINITY);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_params: PolicyParams,
    /// Loss at the initial point followed by one entry per accepted step.
    pub loss_trace: Vec<f64>,
    /// Norm of the `θ`-gradient at each point of the loss trace.
    pub grad_norm_trace: Vec<f64>,
    /// Loss components at each point of the loss trace.
    pub breakdown_trace: Vec<LossBreakdown>,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: LossBreakdown,
    /// Filled in by callers that can read a clock.
    pub wall_time_s: Option<f64>,
}

struct Coords {
    space: StepSpace,
    bound: f64,
}

impl Coords {
    fn of_theta(&self, theta: &[f64]) -> Vec<f64> {
        match self.space {
            StepSpace::Theta => theta.to_vec(),
            StepSpace::Reward => theta.iter().map(|&t| PolicyParams::reward_of(t, self.bound)).collect(),
        }
    }

    fn to_theta(&self, c: &[f64]) -> Vec<f64> {
        match self.space {
            StepSpace::Theta => c.to_vec(),
            StepSpace::Reward => c
                .iter()
                .map(|&r| {
                    let p = r / self.bound;
                    if p <= 0.0 {
                        -THETA_LIMIT
                    } else if p >= 1.0 {
                        THETA_LIMIT
                    } else {
                        math::ln(p / (1.0 - p)).clamp(-THETA_LIMIT, THETA_LIMIT)
                    }
                })
                .collect(),
        }
    }

    fn gradient<'a>(&self, ev: &'a Evaluation) -> &'a [f64] {
        match self.space {
            StepSpace::Theta => &ev.gradient,
            StepSpace::Reward => &ev.reward_gradient,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes a compiled objective from `init`. The objective is a sum of
/// per-prompt terms, so each prompt's row takes its own BB trial step and
/// its own Armijo backtracking; the total loss is non-increasing.
/// Convergence is always judged on the `θ`-gradient norm.
pub fn minimize(obj: &CompiledObjective, init: &PolicyParams, opt: &OptSettings) -> Result<TrainReport> {
    opt.validate()?;
    let coords = Coords {
        space: opt.space,
        bound: init.reward_bound,
    };
    let na = obj.n_responses();
    let mut theta = init.theta.clone();
    let mut ev = obj.evaluate(&theta);
    let mut gnorm = math::l2_norm(&ev.gradient);
    let mut loss_trace = vec![ev.value];
    let mut grad_norm_trace = vec![gnorm];
    let mut breakdown_trace = vec![ev.breakdown.clone()];
    let mut prev: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; obj.n_prompts()];
    let mut converged = gnorm <= opt.tol;
    let mut iterations = 0;

    while !converged && iterations < opt.max_iter {
        // Once the predicted decrease drops below the resolution of the
        // loss, accept any non-increasing step.
        let resolution = 4.0 * f64::EPSILON * ev.value.abs().max(1e-300);
        let g_all = coords.gradient(&ev).to_vec();
        let mut next = theta.clone();
        let mut strict = vec![false; obj.n_prompts()];
        let mut moved_any = false;
        for (x, row) in theta.chunks(na).enumerate() {
            let g = &g_all[x * na..(x + 1) * na];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let here = coords.of_theta(row);
            let f0 = obj.block_value(x, row);
            let mut t = match (&prev[x], opt.barzilai_borwein) {
                (Some((s, y)), true) => bb_step(s, y, opt),
                _ => opt.step,
            };
            while t > 1e-20 {
                let moved: Vec<f64> = here.iter().zip(g).map(|(c, gi)| c - t * gi).collect();
                let trial = coords.to_theta(&moved);
                let actual = coords.of_theta(&trial);
                let slope: f64 = g.iter().zip(actual.iter().zip(&here)).map(|(gi, (a, b))| gi * (a - b)).sum();
                if !(slope < 0.0) {
                    // Projection removed every descent component at this step.
                    t *= opt.shrink;
                    continue;
                }
                let f = obj.block_value(x, &trial);
                let demand = -opt.armijo_c * slope;
                if f.is_finite() && f <= f0 - demand {
                    strict[x] = true;
                } else if !(f.is_finite() && demand <= resolution && f <= f0) {
                    t *= opt.shrink;
                    continue;
                }
                next[x * na..(x + 1) * na].copy_from_slice(&trial);
                moved_any = true;
                break;
            }
        }
        if !moved_any {
            break;
        }
        let mut next_ev = obj.evaluate(&next);
        if next_ev.value > ev.value {
            // Rounding in the total can undo resolution-level block gains.
            for (x, &ok) in strict.iter().enumerate() {
                if !ok {
                    next[x * na..(x + 1) * na].copy_from_slice(&theta[x * na..(x + 1) * na]);
                }
            }
            next_ev = obj.evaluate(&next);
            if next_ev.value > ev.value || next == theta {
                break;
            }
        }
        let here = coords.of_theta(&theta);
        let there = coords.of_theta(&next);
        let g_next = coords.gradient(&next_ev);
        for (x, p) in prev.iter_mut().enumerate() {
            let r = x * na..(x + 1) * na;
            let s: Vec<f64> = there[r.clone()].iter().zip(&here[r.clone()]).map(|(a, b)| a - b).collect();
            if s.iter().any(|&v| v != 0.0) {
                let y = g_next[r.clone()].iter().zip(&g_all[r]).map(|(a, b)| a - b).collect();
                *p = Some((s, y));
            }
        }
        theta = next;
        ev = next_ev;
        gnorm = math::l2_norm(&ev.gradient);
        iterations += 1;
        loss_trace.push(ev.value);
        grad_norm_trace.push(gnorm);
        breakdown_trace.push(ev.breakdown.clone());
        converged = gnorm <= opt.tol;
    }

    Ok(TrainReport {
        final_params: PolicyParams {
            theta,
            ..init.clone()
        },
        loss_trace,
        grad_norm_trace,
        breakdown_trace,
        iterations,
        converged,
        final_loss: ev.breakdown,
        wall_time_s: None,
    })
}

const BB_MIN: f64 = 1e-10;
const BB_MAX: f64 = 1e10;

/// Long BB step `sᵀs / sᵀy`. Along non-positive curvature the projected
/// reward step starts from the largest step and lets the box stop it; the
/// unconstrained `θ` step falls back to the base step.
fn bb_step(s: &[f64], y: &[f64], opt: &OptSettings) -> f64 {
    let ss = dot(s, s);
    let sy = dot(s, y);
    if sy > 0.0 && (ss / sy).is_finite() {
        return (ss / sy).clamp(BB_MIN, BB_MAX);
    }
    match opt.space {
        StepSpace::Reward if ss > 0.0 => BB_MAX,
        _ => opt.step,
    }
}

/// Offline DPO-COV: minimizes the practical objective with the empirical
/// winner pessimism term.
pub fn optimize_offline(
    dataset: &PreferenceDataset,
    instance: &Instance,
    hyper: &Hyperparams,
    opt: &OptSettings,
    init: &PolicyParams,
) -> Result<(Policy, TrainReport)> {
    optimize_offline_with(dataset, instance, hyper, opt, init, &Anchor::Empirical)
}

/// [`optimize_offline`] with an explicit choice of pessimism anchor.
pub fn optimize_offline_with(
    dataset: &PreferenceDataset,
    instance: &Instance,
    hyper: &Hyperparams,
    opt: &OptSettings,
    init: &PolicyParams,
    anchor: &Anchor,
) -> Result<(Policy, TrainReport)> {
    init.check_against(instance)?;
    let obj = CompiledObjective::new(&dataset.samples, instance, hyper, Setting::Offline, anchor)?;
    let report = minimize(&obj, init, opt)?;
    let pi = report.final_params.policy(instance, hyper.beta, hyper.omega);
    Ok((pi, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSettings {
    /// Refit from the previous iterate rather than from `θ = 0`.
    pub warm_start: bool,
    /// Oracle queries per iteration.
    pub batch_per_iter: usize,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        OnlineSettings {
            warm_start: true,
            batch_per_iter: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineStep {
    pub t: usize,
    /// `J_{β,ω}(π_t)` of the policy that generated this step's data.
    pub j_value: f64,
    /// Objective of the refit producing `π_{t+1}`, at its final point.
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRun {
    pub steps: Vec<OnlineStep>,
    /// Index of the returned iterate, uniform on `{2, ..., T+1}`.
    pub t_hat: usize,
    pub output_params: PolicyParams,
    pub samples: Vec<PreferenceSample>,
    pub noise_l1: f64,
    pub nonconverged: usize,
}

/// Online DPO-COV with `T` iterations and one oracle query per iteration.
pub fn run_online(
    instance: &Instance,
    hyper: &Hyperparams,
    t: usize,
    corruption: &CorruptionSpec,
    opt: &OptSettings,
    seed: u64,
) -> Result<(Policy, OnlineRun)> {
    let settings = OnlineSettings::default();
    corruption.validate()?;
    let noise = online_noise(corruption, t * settings.batch_per_iter, seed);
    run_online_with_noise(instance, hyper, &noise, opt, &settings, seed)
}

/// Online loop driven by a pre-drawn noise sequence, one entry per oracle
/// query (`T · batch_per_iter` in total).
pub fn run_online_with_noise(
    instance: &Instance,
    hyper: &Hyperparams,
    noise: &[f64],
    opt: &OptSettings,
    settings: &OnlineSettings,
    seed: u64,
) -> Result<(Policy, OnlineRun)> {
    hyper.validate()?;
    opt.validate()?;
    let batch = settings.batch_per_iter;
    if batch == 0 {
        return Err(Error::Invalid("batch_per_iter must be at least 1".into()));
    }
    if noise.is_empty() || !noise.len().is_multiple_of(batch) {
        return Err(Error::Invalid("noise length must be a positive multiple of batch_per_iter".into()));
    }
    let t_total = noise.len() / batch;
    let t_hat = 2 + rng::index(&mut rng::stream(seed, rng::streams::ONLINE_OUTPUT), t_total);

    let mut data_rng = rng::stream(seed, rng::streams::ONLINE_DATA);
    let mut params = PolicyParams::zeros(instance);
    let mut pi = params.policy(instance, hyper.beta, hyper.omega);
    let mut samples = Vec::with_capacity(noise.len());
    let mut steps = Vec::with_capacity(t_total);
    let mut output = None;
    let mut nonconverged = 0;

    for (step, chunk) in noise.chunks(batch).enumerate() {
        let t = step + 1;
        for &xi in chunk {
            let x = rng::categorical(&mut data_rng, &instance.prompt_dist);
            let a_minus1 = rng::categorical(&mut data_rng, instance.ref_policy.row(x));
            let a1 = rng::categorical(&mut data_rng, pi.row(x));
            let label = oracle_label(instance, x, a1, a_minus1, xi, &mut data_rng);
            samples.push(PreferenceSample::from_draw(x, a1, a_minus1, label, xi));
        }
        let obj = CompiledObjective::new(&samples, instance, hyper, Setting::Online, &Anchor::Empirical)?;
        let init = if settings.warm_start {
            params.clone()
        } else {
            PolicyParams::zeros(instance)
        };
        let report = minimize(&obj, &init, opt)?;
        if !report.converged {
            nonconverged += 1;
        }
        steps.push(OnlineStep {
            t,
            j_value: j_value(&pi, instance, hyper.beta, hyper.omega),
            loss: report.final_loss.clone(),
            grad_norm: *report.grad_norm_trace.last().expect("trace starts nonempty"),
            iterations: report.iterations,
            converged: report.converged,
        });
        params = report.final_params;
        pi = params.policy(instance, hyper.beta, hyper.omega);
        if t + 1 == t_hat {
            output = Some(params.clone());
        }
    }

    let output_params = output.expect("t_hat lies in 2..=T+1");
    let out_pi = output_params.policy(instance, hyper.beta, hyper.omega);
    Ok((
        out_pi,
        OnlineRun {
            steps,
            t_hat,
            output_params,
            samples,
            noise_l1: noise.iter().map(|v| v.abs()).sum(),
            nonconverged,
        },
    ))
}

//! Generalization gap as a function of sample size.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::coverage::{estimate_online_coverability, sample_reward_family};
use super::eta::{theorem_eta_offline, theorem_eta_online};
use super::gap::generalization_gap;
use crate::datagen::{generate_offline_dataset, online_noise};
use crate::error::{Error, Result};
use crate::math::{ln, sqrt};
use crate::objectives::Setting;
use crate::training::{optimize_offline, run_online_with_noise, OnlineSettings, OptSettings, PolicyParams};
use crate::types::{CorruptionSpec, Hyperparams, Instance};

/// How each cell picks `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum EtaRule {
    /// Use the template's `η` unchanged.
    Fixed,
    /// Theorem-guided `η` from the realized `‖ξ*‖₁`, the sample size and
    /// `δ`.
    Theorem { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub instance: Instance,
    pub hyper: Hyperparams,
    pub eta_rule: EtaRule,
    /// Offline sample sizes, or online horizons `T`.
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub setting: Setting,
    pub corruption: CorruptionSpec,
    pub opt: OptSettings,
    pub online: OnlineSettings,
    /// Reward family size for the coverability estimate feeding online `η`.
    pub coverage_family: usize,
    pub coverage_seed: u64,
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        self.hyper.validate()?;
        self.corruption.validate()?;
        self.opt.validate()?;
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::Invalid("n_values must be nonempty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Empty("seeds"));
        }
        if let EtaRule::Theorem { delta } = self.eta_rule {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::OutOfRange {
                    what: "delta",
                    value: delta,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(())
    }

    /// Coverability used by the online theorem-guided `η`; `None` when it is
    /// not needed.
    pub fn online_coverability(&self) -> Result<Option<f64>> {
        if self.setting != Setting::Online || self.eta_rule == EtaRule::Fixed {
            return Ok(None);
        }
        let family = sample_reward_family(&self.instance, self.coverage_family.max(1), self.coverage_seed);
        let cov = estimate_online_coverability(&self.instance, &family, self.hyper.beta, self.hyper.omega)?;
        Ok(Some(cov.g_on))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RateCell {
    pub n: usize,
    pub seed: u64,
}

/// One row of the rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub setting: Setting,
    pub n: usize,
    pub seed: u64,
    pub lambda: f64,
    pub eta: f64,
    pub omega: f64,
    pub beta: f64,
    pub corrupt_frac: f64,
    pub noise_mag: f64,
    pub xi_l1: f64,
    pub gap: f64,
    pub j_opt: f64,
    pub j_hat: f64,
    pub kl_to_ref: f64,
    pub avg_len: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub mean_gap: f64,
    /// Standard error of the mean; zero with fewer than two runs.
    pub se_gap: f64,
    pub runs: usize,
    pub mean_len: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub rows: Vec<RateRow>,
    pub per_n: Vec<NSummary>,
    pub fit: Option<SlopeFit>,
    /// Runs excluded from the summaries because they did not converge.
    pub nonconverged: usize,
}

/// Cells in `(n, seed)` order.
pub fn rate_cells(cfg: &RateConfig) -> Vec<RateCell> {
    let mut ns = cfg.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    ns.iter().flat_map(|&n| seeds.iter().map(move |&seed| RateCell { n, seed })).collect()
}

/// Runs one isolated cell: data, `η`, training, gap.
pub fn run_rate_cell(cfg: &RateConfig, cell: RateCell, g_on: Option<f64>) -> Result<RateRow> {
    let inst = &cfg.instance;
    let (nx, na, bound) = (inst.n_prompts, inst.n_responses, inst.reward_bound);
    let (pi, eta, xi_l1, converged) = match cfg.setting {
        Setting::Offline => {
            let data = generate_offline_dataset(inst, cell.n, cfg.corruption, cell.seed)?;
            let xi_l1 = data.noise_l1();
            let eta = match cfg.eta_rule {
                EtaRule::Fixed => cfg.hyper.eta,
                EtaRule::Theorem { delta } => theorem_eta_offline(cell.n, bound, xi_l1, delta, nx, na)?,
            };
            let hyper = cfg.hyper.with_eta(eta);
            let (pi, report) = optimize_offline(&data, inst, &hyper, &cfg.opt, &PolicyParams::zeros(inst))?;
            (pi, eta, xi_l1, report.converged)
        }
        Setting::Online => {
            let batch = cfg.online.batch_per_iter.max(1);
            let noise = online_noise(&cfg.corruption, cell.n * batch, cell.seed);
            let xi_l1: f64 = noise.iter().map(|v| v.abs()).sum();
            let eta = match cfg.eta_rule {
                EtaRule::Fixed => cfg.hyper.eta,
                EtaRule::Theorem { delta } => {
                    let g = g_on.ok_or_else(|| Error::Invalid("online theorem eta needs a coverability estimate".into()))?;
                    theorem_eta_online(cell.n, bound, xi_l1, delta, g, nx, na)?
                }
            };
            let hyper = cfg.hyper.with_eta(eta);
            let (pi, run) = run_online_with_noise(inst, &hyper, &noise, &cfg.opt, &cfg.online, cell.seed)?;
            (pi, eta, xi_l1, run.nonconverged == 0)
        }
    };
    let gap = generalization_gap(&pi, inst, cfg.hyper.beta, cfg.hyper.omega);
    Ok(RateRow {
        setting: cfg.setting,
        n: cell.n,
        seed: cell.seed,
        lambda: cfg.hyper.lambda,
        eta,
        omega: cfg.hyper.omega,
        beta: cfg.hyper.beta,
        corrupt_frac: cfg.corruption.corrupt_fraction,
        noise_mag: cfg.corruption.noise_magnitude,
        xi_l1,
        gap: gap.gap,
        j_opt: gap.j_opt,
        j_hat: gap.j_hat,
        kl_to_ref: gap.kl_to_ref,
        avg_len: gap.expected_len,
        converged,
    })
}

/// Least-squares line through `(ln x, ln y)`; points with `y ≤ 0` are
/// dropped. `None` with fewer than two usable distinct `x`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (ln(x), ln(y)))
        .collect();
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
    })
}

/// Per-`n` mean and standard error over converged rows, plus the log-log
/// fit of mean gap against `n`.
pub fn summarize_rates(rows: &[RateRow]) -> (Vec<NSummary>, Option<SlopeFit>, usize) {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let nonconverged = rows.iter().filter(|r| !r.converged).count();
    let per_n: Vec<NSummary> = ns
        .iter()
        .filter_map(|&n| {
            let sel: Vec<&RateRow> = rows.iter().filter(|r| r.n == n && r.converged).collect();
            if sel.is_empty() {
                return None;
            }
            let k = sel.len() as f64;
            let mean = sel.iter().map(|r| r.gap).sum::<f64>() / k;
            let se = if sel.len() > 1 {
                let var = sel.iter().map(|r| (r.gap - mean) * (r.gap - mean)).sum::<f64>() / (k - 1.0);
                sqrt(var / k)
            } else {
                0.0
            };
            Some(NSummary {
                n,
                mean_gap: mean,
                se_gap: se,
                runs: sel.len(),
                mean_len: sel.iter().map(|r| r.avg_len).sum::<f64>() / k,
            })
        })
        .collect();
    let pts: Vec<(f64, f64)> = per_n.iter().map(|s| (s.n as f64, s.mean_gap)).collect();
    (per_n, fit_log_log(&pts), nonconverged)
}

/// Sequential rate experiment. Needs at least four distinct sizes and ten
/// seeds so the fitted slope means something.
pub fn rate_experiment(cfg: &RateConfig) -> Result<RateExperiment> {
    cfg.validate()?;
    let cells = rate_cells(cfg);
    let distinct_n = cells.iter().map(|c| c.n).collect::<alloc::collections::BTreeSet<_>>().len();
    let distinct_seeds = cells.len() / distinct_n;
    if distinct_n < 4 || distinct_seeds < 10 {
        return Err(Error::Invalid("rate experiment needs at least 4 sizes and 10 seeds".into()));
    }
    let g_on = cfg.online_coverability()?;
    let rows = cells
        .into_iter()
        .map(|c| run_rate_cell(cfg, c, g_on))
        .collect::<Result<Vec<_>>>()?;
    let (per_n, fit, nonconverged) = summarize_rates(&rows);
    Ok(RateExperiment {
        rows,
        per_n,
        fit,
        nonconverged,
    })
}

use std::cmp::Ordering;
use std::time::Instant;

use dpocov_core::analysis::{rate_cells, run_rate_cell, summarize_rates, EtaRule, NSummary, RateCell, RateConfig, RateRow};
use dpocov_core::objectives::Setting;
use dpocov_core::Hyperparams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RunContext;
use crate::config::{EtaSweep, LoadedConfig};
use crate::error::{exit, CliError, CliResult, CommandResult};
use crate::formats::{csv_bytes, fmt_f64, write_file, write_json};
use crate::presets::variant_label;

pub const RATES_HEADER: [&str; 17] = [
    "setting", "n", "seed", "lambda", "eta", "omega", "beta", "corrupt_frac", "noise_mag", "xi_l1", "gap", "j_opt",
    "j_hat", "kl_to_ref", "avg_len", "converged", "wall_time_s",
];

/// Per-configuration reduction over its cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub setting: Setting,
    pub label: String,
    /// Template hyperparameters; under the theorem rule `η` varies per cell.
    pub hyperparams: Hyperparams,
    pub eta_rule: EtaRule,
    pub g_on: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub per_n: Vec<NSummary>,
    pub rows: usize,
    pub nonconverged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub setting: Setting,
    pub label: String,
    pub n: usize,
    pub seed: u64,
    pub lambda: f64,
    pub omega: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub groups: Vec<GroupSummary>,
    pub failures: Vec<CellFailure>,
    pub cells: usize,
    pub wall_time_s: f64,
}

/// Expands the sweep block into one rate configuration per hyperparameter
/// combination, in config order.
fn expand(cfg: &LoadedConfig) -> CliResult<Vec<RateConfig>> {
    let sweep = cfg
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("sweep needs a `sweep` section in the config".into()))?;
    if sweep.settings.is_empty() {
        return Err(CliError::Validation("sweep.settings must list at least one setting".into()));
    }
    let instance = cfg.instance()?;
    let opt = cfg.optimizer()?;
    let corruption = cfg.config.data.corruption;
    let online = cfg.config.online.settings();
    if online.batch_per_iter == 0 {
        return Err(CliError::Validation("online.batch_per_iter must be at least 1".into()));
    }
    let bases: Vec<Hyperparams> = match &sweep.presets {
        Some(ps) if ps.is_empty() => return Err(CliError::Validation("sweep.presets must not be empty".into())),
        Some(ps) => ps.iter().map(|p| p.hyperparams()).collect(),
        None => vec![cfg.config.hyperparams.resolve()?],
    };
    let etas: Vec<(EtaRule, Option<f64>)> = match &sweep.eta {
        EtaSweep::Theorem { delta } => vec![(EtaRule::Theorem { delta: *delta }, None)],
        EtaSweep::Fixed { values: None } => vec![(EtaRule::Fixed, None)],
        EtaSweep::Fixed { values: Some(v) } => v.iter().map(|&e| (EtaRule::Fixed, Some(e))).collect(),
    };
    let mut out = Vec::new();
    for &setting in &sweep.settings {
        for base in &bases {
            let lambdas = sweep.lambda.clone().unwrap_or_else(|| vec![base.lambda]);
            let omegas = sweep.omega.clone().unwrap_or_else(|| vec![base.omega]);
            for &lambda in &lambdas {
                for &omega in &omegas {
                    for &(eta_rule, eta) in &etas {
                        let hyper = Hyperparams {
                            lambda,
                            omega,
                            eta: eta.unwrap_or(base.eta),
                            beta: base.beta,
                        };
                        let rc = RateConfig {
                            instance: instance.clone(),
                            hyper,
                            eta_rule,
                            n_values: sweep.n_values.clone(),
                            seeds: sweep.seeds.clone(),
                            setting,
                            corruption,
                            opt: opt.clone(),
                            online: online.clone(),
                            coverage_family: sweep.coverage_family,
                            coverage_seed: sweep.coverage_seed,
                        };
                        rc.validate()?;
                        out.push(rc);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn row_order(a: &RateRow, b: &RateRow) -> Ordering {
    a.setting
        .cmp(&b.setting)
        .then(a.n.cmp(&b.n))
        .then(a.seed.cmp(&b.seed))
        .then(a.lambda.total_cmp(&b.lambda))
        .then(a.eta.total_cmp(&b.eta))
        .then(a.omega.total_cmp(&b.omega))
}

fn rate_record(r: &RateRow, wall: f64) -> Vec<String> {
    vec![
        r.setting.as_str().to_string(),
        r.n.to_string(),
        r.seed.to_string(),
        fmt_f64(r.lambda),
        fmt_f64(r.eta),
        fmt_f64(r.omega),
        fmt_f64(r.beta),
        fmt_f64(r.corrupt_frac),
        fmt_f64(r.noise_mag),
        fmt_f64(r.xi_l1),
        fmt_f64(r.gap),
        fmt_f64(r.j_opt),
        fmt_f64(r.j_hat),
        fmt_f64(r.kl_to_ref),
        fmt_f64(r.avg_len),
        r.converged.to_string(),
        fmt_f64(wall),
    ]
}

/// Runs every `(configuration, n, seed)` cell in parallel and writes
/// `rates.csv` and `summary.json`.
pub fn cmd_sweep(cfg: &LoadedConfig, ctx: &RunContext) -> CliResult<CommandResult> {
    let started = Instant::now();
    let configs = expand(cfg)?;
    let coverability: Vec<Option<f64>> =
        configs.par_iter().map(|c| c.online_coverability()).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, RateCell)> = configs
        .iter()
        .enumerate()
        .flat_map(|(g, c)| rate_cells(c).into_iter().map(move |cell| (g, cell)))
        .collect();
    let results: Vec<(usize, RateCell, Result<RateRow, dpocov_core::Error>, f64)> = jobs
        .par_iter()
        .map(|&(g, cell)| {
            let t0 = Instant::now();
            let r = run_rate_cell(&configs[g], cell, coverability[g]);
            (g, cell, r, t0.elapsed().as_secs_f64())
        })
        .collect();

    let mut rows: Vec<(usize, RateRow, f64)> = Vec::new();
    let mut failures = Vec::new();
    let mut failed_per_group = vec![0usize; configs.len()];
    for (g, cell, r, wall) in results {
        match r {
            Ok(row) => rows.push((g, row, wall)),
            Err(e) => {
                failed_per_group[g] += 1;
                let c = &configs[g];
                failures.push(CellFailure {
                    setting: c.setting,
                    label: variant_label(&c.hyper).to_string(),
                    n: cell.n,
                    seed: cell.seed,
                    lambda: c.hyper.lambda,
                    omega: c.hyper.omega,
                    error: e.to_string(),
                });
            }
        }
    }

    let groups: Vec<GroupSummary> = configs
        .iter()
        .enumerate()
        .map(|(g, c)| {
            let mine: Vec<RateRow> = rows.iter().filter(|r| r.0 == g).map(|r| r.1.clone()).collect();
            let (per_n, fit, nonconverged) = summarize_rates(&mine);
            GroupSummary {
                setting: c.setting,
                label: variant_label(&c.hyper).to_string(),
                hyperparams: c.hyper,
                eta_rule: c.eta_rule,
                g_on: coverability[g],
                slope: fit.map(|f| f.slope),
                intercept: fit.map(|f| f.intercept),
                per_n,
                rows: mine.len(),
                nonconverged,
                failed: failed_per_group[g],
            }
        })
        .collect();

    rows.sort_by(|a, b| row_order(&a.1, &b.1));
    let records: Vec<Vec<String>> = rows.iter().map(|(_, r, w)| rate_record(r, *w)).collect();
    let nonconverged: usize = groups.iter().map(|g| g.nonconverged).sum();
    let summary = SweepSummary {
        groups,
        failures,
        cells: jobs.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };

    let rates_path = ctx.artifact("rates.csv")?;
    let summary_path = ctx.artifact("summary.json")?;
    write_file(&rates_path, &csv_bytes(&RATES_HEADER, &records))?;
    write_json(&summary_path, &summary)?;

    for g in &summary.groups {
        println!(
            "{} {} lambda={} omega={}: slope {} over {} rows ({} nonconverged, {} failed)",
            g.setting.as_str(),
            g.label,
            fmt_f64(g.hyperparams.lambda),
            fmt_f64(g.hyperparams.omega),
            g.slope.map_or_else(|| "n/a".to_string(), fmt_f64),
            g.rows,
            g.nonconverged,
            g.failed
        );
    }
    let artifacts = vec![rates_path, summary_path];
    if !summary.failures.is_empty() {
        eprintln!("error: {} of {} cells failed; see summary.json", summary.failures.len(), summary.cells);
        return Ok(CommandResult { exit_code: exit::NONCONVERGED, artifacts });
    }
    if nonconverged > 0 && !ctx.allow_nonconverged {
        eprintln!("error: {nonconverged} runs did not converge; rerun with --allow-nonconverged to accept");
        return Ok(CommandResult { exit_code: exit::NONCONVERGED, artifacts });
    }
    Ok(CommandResult::ok(artifacts))
}

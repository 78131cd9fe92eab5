use std::time::Instant;

use dpocov_core::analysis::{generalization_gap, GapReport};
use dpocov_core::datagen::{generate_offline_dataset, online_noise};
use dpocov_core::objectives::{LossBreakdown, Setting};
use dpocov_core::training::{optimize_offline, run_online_with_noise, PolicyParams};
use dpocov_core::Hyperparams;
use serde::{Deserialize, Serialize};

use super::RunContext;
use crate::config::LoadedConfig;
use crate::error::{exit, CliError, CliResult, CommandResult};
use crate::formats::{csv_bytes, fmt_f64, read_dataset, write_file, write_json, InstanceDoc};
use crate::presets::{variant_label, Preset};

pub const OFFLINE_TRACE_HEADER: [&str; 6] = ["iter", "total", "nll", "noise_penalty", "pessimism", "grad_norm"];
pub const ONLINE_TRACE_HEADER: [&str; 9] =
    ["t", "j_value", "total", "nll", "noise_penalty", "pessimism", "grad_norm", "iterations", "converged"];
pub const GAP_HEADER: [&str; 17] = [
    "setting", "label", "n", "seed", "lambda", "eta", "omega", "beta", "xi_l1", "gap", "j_opt", "j_hat", "kl_to_ref",
    "avg_len", "converged", "iterations", "wall_time_s",
];

/// Everything needed to rebuild and audit the trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub setting: Setting,
    pub label: String,
    /// Preset named in the config, if any.
    pub preset: Option<Preset>,
    pub hyperparams: Hyperparams,
    pub instance_hash: String,
    pub seed: u64,
    /// Offline sample size or online horizon.
    pub n: usize,
    pub params: PolicyParams,
    /// Row-major `π_θ`.
    pub policy: Vec<f64>,
    /// Index of the returned online iterate.
    pub t_hat: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Final offline objective, or the last online refit's.
    pub final_loss: LossBreakdown,
    pub xi_l1: f64,
    pub gap: GapReport,
    pub wall_time_s: f64,
}

fn breakdown_cells(b: &LossBreakdown) -> [String; 4] {
    [fmt_f64(b.total), fmt_f64(b.nll_term), fmt_f64(b.noise_penalty), fmt_f64(b.pessimism_term)]
}

/// Trains one policy; writes `trace.csv`, `checkpoint.json` and `gap.csv`.
pub fn cmd_train(cfg: &LoadedConfig, ctx: &RunContext, setting: Setting) -> CliResult<CommandResult> {
    let inst = cfg.instance()?;
    let hyper = cfg.config.hyperparams.resolve()?;
    let opt = cfg.optimizer()?;
    let seed = cfg.data_seed();
    let corruption = cfg.config.data.corruption;
    corruption.validate()?;
    let started = Instant::now();

    let (params, pi, trace, iterations, converged, final_loss, n, xi_l1, t_hat) = match setting {
        Setting::Offline => {
            let ds = match &cfg.config.data.dataset {
                Some(p) => read_dataset(&cfg.resolve_path(p), &inst, corruption)?,
                None if cfg.config.data.n == 0 => {
                    return Err(CliError::Validation(
                        "offline training needs data.n >= 1 or a data.dataset path".into(),
                    ))
                }
                None => generate_offline_dataset(&inst, cfg.config.data.n, corruption, seed)?,
            };
            let (pi, rep) = optimize_offline(&ds, &inst, &hyper, &opt, &PolicyParams::zeros(&inst))?;
            let rows: Vec<Vec<String>> = rep
                .breakdown_trace
                .iter()
                .zip(&rep.grad_norm_trace)
                .enumerate()
                .map(|(i, (b, g))| {
                    let mut row = vec![i.to_string()];
                    row.extend(breakdown_cells(b));
                    row.push(fmt_f64(*g));
                    row
                })
                .collect();
            let trace = csv_bytes(&OFFLINE_TRACE_HEADER, &rows);
            (rep.final_params, pi, trace, rep.iterations, rep.converged, rep.final_loss, ds.len(), ds.noise_l1(), None)
        }
        Setting::Online => {
            let online = &cfg.config.online;
            if online.t == 0 || online.batch_per_iter == 0 {
                return Err(CliError::Validation("online.t and online.batch_per_iter must be at least 1".into()));
            }
            let noise = online_noise(&corruption, online.t * online.batch_per_iter, seed);
            let (pi, run) = run_online_with_noise(&inst, &hyper, &noise, &opt, &online.settings(), seed)?;
            let rows: Vec<Vec<String>> = run
                .steps
                .iter()
                .map(|s| {
                    let mut row = vec![s.t.to_string(), fmt_f64(s.j_value)];
                    row.extend(breakdown_cells(&s.loss));
                    row.extend([fmt_f64(s.grad_norm), s.iterations.to_string(), s.converged.to_string()]);
                    row
                })
                .collect();
            let trace = csv_bytes(&ONLINE_TRACE_HEADER, &rows);
            let iterations = run.steps.iter().map(|s| s.iterations).sum();
            let last = run.steps.last().expect("t >= 1").loss.clone();
            (run.output_params, pi, trace, iterations, run.nonconverged == 0, last, online.t, run.noise_l1, Some(run.t_hat))
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let gap = generalization_gap(&pi, &inst, hyper.beta, hyper.omega);
    let label = variant_label(&hyper);

    let gap_row = vec![
        setting.as_str().to_string(),
        label.to_string(),
        n.to_string(),
        seed.to_string(),
        fmt_f64(hyper.lambda),
        fmt_f64(hyper.eta),
        fmt_f64(hyper.omega),
        fmt_f64(hyper.beta),
        fmt_f64(xi_l1),
        fmt_f64(gap.gap),
        fmt_f64(gap.j_opt),
        fmt_f64(gap.j_hat),
        fmt_f64(gap.kl_to_ref),
        fmt_f64(gap.expected_len),
        converged.to_string(),
        iterations.to_string(),
        fmt_f64(wall),
    ];
    let checkpoint = Checkpoint {
        setting,
        label: label.to_string(),
        preset: cfg.config.hyperparams.preset,
        hyperparams: hyper,
        instance_hash: InstanceDoc::from(&inst).hash(),
        seed,
        n,
        policy: pi.as_slice().to_vec(),
        params,
        t_hat,
        iterations,
        converged,
        final_loss,
        xi_l1,
        gap,
        wall_time_s: wall,
    };

    let trace_path = ctx.artifact("trace.csv")?;
    let checkpoint_path = ctx.artifact("checkpoint.json")?;
    let gap_path = ctx.artifact("gap.csv")?;
    write_file(&trace_path, &trace)?;
    write_json(&checkpoint_path, &checkpoint)?;
    write_file(&gap_path, &csv_bytes(&GAP_HEADER, &[gap_row]))?;
    println!(
        "{} {label}: gap {} after {iterations} iterations{}",
        setting.as_str(),
        fmt_f64(gap.gap),
        if converged { "" } else { " (not converged)" }
    );

    let artifacts = vec![trace_path, checkpoint_path, gap_path];
    if converged || ctx.allow_nonconverged {
        Ok(CommandResult::ok(artifacts))
    } else {
        eprintln!("error: optimizer did not reach the gradient tolerance; rerun with --allow-nonconverged to accept");
        Ok(CommandResult {
            exit_code: exit::NONCONVERGED,
            artifacts,
        })
    }
}

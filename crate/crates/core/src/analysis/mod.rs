//! Measurement and verification on top of the training pipeline.

mod brute_force;
mod coverage;
mod eta;
mod gap;
mod lemmas;
mod rates;

pub use brute_force::{brute_force_rlhfcov_offline, BruteForceResult, BRUTE_FORCE_MAX_CELLS, BRUTE_FORCE_MAX_RESOLUTION};
pub use coverage::{
    estimate_offline_coverage, estimate_online_coverability, offline_coverage_over_family, sample_reward_family,
    CoverageReport, OfflineCoverage, OnlineCoverability,
};
pub use eta::{log_cover_size, theorem_eta_offline, theorem_eta_online};
pub use gap::{generalization_gap, GapReport};
pub use lemmas::{verify_lemma_suite, verify_lemma_suite_with, LemmaCheck, LemmaReport};
pub use rates::{
    fit_log_log, rate_cells, rate_experiment, run_rate_cell, summarize_rates, EtaRule, NSummary, RateCell, RateConfig,
    RateExperiment, RateRow, SlopeFit,
};

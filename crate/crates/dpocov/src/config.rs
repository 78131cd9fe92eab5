//! Experiment configuration: one JSON document with sections `instance`,
//! `data`, `hyperparams`, `optimizer`, `online` and `sweep`.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "instance": {"random": {"n_prompts": 2, "n_responses": 3, "reward_bound": 1.0}},
//!   "data": {"n": 500, "corruption": {"corrupt_fraction": 0.25, "noise_magnitude": 4.0,
//!            "noise_sign_rule": "random-sign"}},
//!   "hyperparams": {"preset": "dpo-cov", "lambda": 0.1},
//!   "optimizer": {"max_iter": 2000},
//!   "online": {"t": 128},
//!   "sweep": {"n_values": [64, 256, 1024, 4096], "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
//!             "eta": {"rule": "theorem", "delta": 0.1}}
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use dpocov_core::objectives::Setting;
use dpocov_core::training::{OnlineSettings, OptSettings};
use dpocov_core::types::make_random_instance;
use dpocov_core::{CorruptionSpec, Hyperparams, Instance};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{read_instance, InstanceDoc};
use crate::presets::Preset;

/// Deserializes JSON, reporting the failing field path with its line and
/// column.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner();
        CliError::Validation(format!(
            "{}:{}:{}: field `{}`: {}",
            origin.display(),
            inner.line(),
            inner.column(),
            path,
            strip_position(&inner.to_string())
        ))
    })
}

/// serde_json appends " at line L column C"; the prefix already has it.
fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub instance: InstanceSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub hyperparams: HyperSpec,
    #[serde(default)]
    pub optimizer: OptSettings,
    #[serde(default)]
    pub online: OnlineSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Random(RandomInstanceSpec),
    /// Path to an instance JSON, relative to the config file.
    File(PathBuf),
    Inline(InstanceDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInstanceSpec {
    pub n_prompts: usize,
    pub n_responses: usize,
    #[serde(default = "one")]
    pub reward_bound: f64,
    /// Defaults to the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Offline sample size for `gen` and `train`.
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    /// Defaults to the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Existing dataset CSV for offline training, relative to the config file.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

/// A preset plus optional per-field overrides. Without a preset the
/// overrides apply to `dpo-cov`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSpec {
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl HyperSpec {
    pub fn resolve(&self) -> CliResult<Hyperparams> {
        let base = self.preset.unwrap_or(Preset::DpoCov).hyperparams();
        let h = Hyperparams {
            beta: self.beta.unwrap_or(base.beta),
            eta: self.eta.unwrap_or(base.eta),
            omega: self.omega.unwrap_or(base.omega),
            lambda: self.lambda.unwrap_or(base.lambda),
        };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSpec {
    /// Number of online iterations `T`.
    pub t: usize,
    pub warm_start: bool,
    pub batch_per_iter: usize,
}

impl Default for OnlineSpec {
    fn default() -> Self {
        let s = OnlineSettings::default();
        OnlineSpec {
            t: 64,
            warm_start: s.warm_start,
            batch_per_iter: s.batch_per_iter,
        }
    }
}

impl OnlineSpec {
    pub fn settings(&self) -> OnlineSettings {
        OnlineSettings {
            warm_start: self.warm_start,
            batch_per_iter: self.batch_per_iter,
        }
    }
}

/// How a sweep chooses `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum EtaSweep {
    /// Theorem-guided `η` per cell from the realized noise and sample size.
    Theorem {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Fixed values; absent means the resolved hyperparameter `η`.
    Fixed {
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
}

fn default_delta() -> f64 {
    0.1
}

impl Default for EtaSweep {
    fn default() -> Self {
        EtaSweep::Fixed { values: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "offline_only")]
    pub settings: Vec<Setting>,
    /// Sample sizes offline, horizons `T` online.
    #[serde(alias = "t_values")]
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Hyperparameter bases; absent means the resolved `hyperparams`.
    #[serde(default)]
    pub presets: Option<Vec<Preset>>,
    /// Noise-penalty grid; absent means each base's `λ`.
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    /// Length-penalty grid; absent means each base's `ω`.
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: EtaSweep,
    /// Reward family size for the online coverability estimate.
    #[serde(default = "default_family")]
    pub coverage_family: usize,
    #[serde(default)]
    pub coverage_seed: u64,
}

fn offline_only() -> Vec<Setting> {
    vec![Setting::Offline]
}

fn default_family() -> usize {
    1000
}

/// Largest random instance a config may request.
pub const MAX_RANDOM_CELLS: usize = 1 << 20;

/// A config together with the directory its relative paths resolve from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut config: Config = parse_json(&text, path)?;
        if let Some(s) = seed_override {
            config.seed = s;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn instance(&self) -> CliResult<Instance> {
        match &self.config.instance {
            InstanceSpec::Random(r) => {
                let cells = r.n_prompts.saturating_mul(r.n_responses);
                if cells > MAX_RANDOM_CELLS {
                    return Err(CliError::Validation(format!(
                        "instance.random: {} x {} exceeds {MAX_RANDOM_CELLS} cells",
                        r.n_prompts, r.n_responses
                    )));
                }
                Ok(make_random_instance(
                r.n_prompts,
                r.n_responses,
                r.reward_bound,
                r.seed.unwrap_or(self.config.seed),
            )?)
            }
            InstanceSpec::File(p) => read_instance(&self.resolve_path(p)),
            InstanceSpec::Inline(doc) => doc.to_instance(),
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.config.data.seed.unwrap_or(self.config.seed)
    }

    pub fn optimizer(&self) -> CliResult<OptSettings> {
        self.config.optimizer.validate()?;
        Ok(self.config.optimizer.clone())
    }
}

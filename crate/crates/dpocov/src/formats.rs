//! On-disk formats: instance JSON, dataset CSV with its sidecar, and the
//! helpers every emitted CSV shares.

use std::fs;
use std::path::{Path, PathBuf};

use dpocov_core::datagen::PreferenceDataset;
use dpocov_core::{CorruptionSpec, Instance, Label, Policy, PreferenceSample, RewardTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Header plus rows, all fields already formatted.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Instance with every table flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub n_prompts: usize,
    pub n_responses: usize,
    pub reward_bound: f64,
    pub prompt_dist: Vec<f64>,
    pub ref_policy: Vec<f64>,
    pub behavior_policy: Vec<f64>,
    pub true_reward: Vec<f64>,
    pub response_len: Vec<u32>,
}

impl From<&Instance> for InstanceDoc {
    fn from(inst: &Instance) -> Self {
        InstanceDoc {
            n_prompts: inst.n_prompts,
            n_responses: inst.n_responses,
            reward_bound: inst.reward_bound,
            prompt_dist: inst.prompt_dist.clone(),
            ref_policy: inst.ref_policy.as_slice().to_vec(),
            behavior_policy: inst.behavior_policy.as_slice().to_vec(),
            true_reward: inst.true_reward.as_slice().to_vec(),
            response_len: inst.response_len.clone(),
        }
    }
}

impl InstanceDoc {
    pub fn to_instance(&self) -> CliResult<Instance> {
        let (nx, na) = (self.n_prompts, self.n_responses);
        let inst = Instance {
            n_prompts: nx,
            n_responses: na,
            prompt_dist: self.prompt_dist.clone(),
            ref_policy: Policy::new(nx, na, self.ref_policy.clone())?,
            behavior_policy: Policy::new(nx, na, self.behavior_policy.clone())?,
            true_reward: RewardTable::new(nx, na, self.true_reward.clone())?,
            response_len: self.response_len.clone(),
            reward_bound: self.reward_bound,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("instance serializes"))
    }
}

pub fn read_instance(path: &Path) -> CliResult<Instance> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let doc: InstanceDoc = crate::config::parse_json(&text, path)?;
    doc.to_instance()
}

pub const DATASET_HEADER: [&str; 8] =
    ["i", "prompt", "winner", "loser", "label", "hidden_first", "hidden_second", "hidden_noise"];

pub fn dataset_csv(samples: &[PreferenceSample]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                i.to_string(),
                s.prompt.to_string(),
                s.winner.to_string(),
                s.loser.to_string(),
                s.label.as_i8().to_string(),
                s.hidden_first.to_string(),
                s.hidden_second.to_string(),
                fmt_f64(s.hidden_noise),
            ]
        })
        .collect();
    csv_bytes(&DATASET_HEADER, &rows)
}

#[derive(Debug, Deserialize)]
struct DatasetRecord {
    i: usize,
    prompt: usize,
    winner: usize,
    loser: usize,
    label: i64,
    hidden_first: usize,
    hidden_second: usize,
    hidden_noise: f64,
}

/// Parses a dataset CSV and checks every row against the instance shape and
/// the winner/loser/label consistency rule.
pub fn read_dataset_samples(path: &Path, instance: &Instance) -> CliResult<Vec<PreferenceSample>> {
    let mut reader = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let headers = reader.headers().map_err(CliError::csv(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(CliError::Validation(format!(
            "{}: expected header {}",
            path.display(),
            DATASET_HEADER.join(",")
        )));
    }
    let bad = |row: usize, msg: String| CliError::Validation(format!("{}: row {row}: {msg}", path.display()));
    let mut samples = Vec::new();
    for (row, rec) in reader.deserialize::<DatasetRecord>().enumerate() {
        let rec = rec.map_err(CliError::csv(path))?;
        if rec.i != row {
            return Err(bad(row, format!("index {} out of sequence", rec.i)));
        }
        if rec.prompt >= instance.n_prompts {
            return Err(bad(row, format!("prompt {} outside 0..{}", rec.prompt, instance.n_prompts)));
        }
        for a in [rec.winner, rec.loser, rec.hidden_first, rec.hidden_second] {
            if a >= instance.n_responses {
                return Err(bad(row, format!("response {a} outside 0..{}", instance.n_responses)));
            }
        }
        let label = Label::from_i64(rec.label).ok_or_else(|| bad(row, format!("label {} is not +1 or -1", rec.label)))?;
        if !rec.hidden_noise.is_finite() {
            return Err(bad(row, "hidden_noise is not finite".into()));
        }
        let s = PreferenceSample::from_draw(rec.prompt, rec.hidden_first, rec.hidden_second, label, rec.hidden_noise);
        if (s.winner, s.loser) != (rec.winner, rec.loser) {
            return Err(bad(row, "winner/loser disagree with the label and hidden draws".into()));
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(CliError::Validation(format!("{}: dataset has no rows", path.display())));
    }
    Ok(samples)
}

/// Provenance written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub instance_hash: String,
    pub seed: u64,
    pub n: usize,
    pub corruption: CorruptionSpec,
    pub dataset_hash: String,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Loads a dataset CSV. When a sidecar exists its instance hash and CSV hash
/// must match, and its corruption law is used; otherwise `fallback` is.
pub fn read_dataset(path: &Path, instance: &Instance, fallback: CorruptionSpec) -> CliResult<PreferenceDataset> {
    let samples = read_dataset_samples(path, instance)?;
    let side = sidecar_path(path);
    let corruption = if side.exists() {
        let text = fs::read_to_string(&side).map_err(CliError::io(&side))?;
        let meta: DatasetMeta = crate::config::parse_json(&text, &side)?;
        let want = InstanceDoc::from(instance).hash();
        if meta.instance_hash != want {
            return Err(CliError::Validation(format!(
                "{}: instance_hash {} does not match the configured instance ({want})",
                side.display(),
                meta.instance_hash
            )));
        }
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        if meta.dataset_hash != sha256_hex(&bytes) {
            return Err(CliError::Validation(format!("{}: dataset_hash does not match {}", side.display(), path.display())));
        }
        meta.corruption
    } else {
        fallback
    };
    corruption.validate()?;
    Ok(PreferenceDataset { samples, corruption })
}

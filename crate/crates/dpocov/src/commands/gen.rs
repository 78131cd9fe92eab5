use dpocov_core::datagen::generate_offline_dataset;

use super::RunContext;
use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult, CommandResult};
use crate::formats::{dataset_csv, sha256_hex, write_file, write_json, DatasetMeta, InstanceDoc};

/// Writes `instance.json`, `dataset.csv` and its sidecar `dataset.json`,
/// then prints the dataset hash.
pub fn cmd_gen(cfg: &LoadedConfig, ctx: &RunContext) -> CliResult<CommandResult> {
    let inst = cfg.instance()?;
    let data = &cfg.config.data;
    if data.n == 0 {
        return Err(CliError::Validation("data.n must be at least 1 to generate a dataset".into()));
    }
    data.corruption.validate()?;
    let seed = cfg.data_seed();
    let ds = generate_offline_dataset(&inst, data.n, data.corruption, seed)?;

    let doc = InstanceDoc::from(&inst);
    let csv = dataset_csv(&ds.samples);
    let dataset_hash = sha256_hex(&csv);
    let meta = DatasetMeta {
        instance_hash: doc.hash(),
        seed,
        n: ds.len(),
        corruption: ds.corruption,
        dataset_hash: dataset_hash.clone(),
    };

    let instance_path = ctx.artifact("instance.json")?;
    let csv_path = ctx.artifact("dataset.csv")?;
    let meta_path = ctx.artifact("dataset.json")?;
    write_json(&instance_path, &doc)?;
    write_file(&csv_path, &csv)?;
    write_json(&meta_path, &meta)?;
    println!("dataset_hash {dataset_hash}");
    Ok(CommandResult::ok(vec![csv_path, meta_path, instance_path]))
}

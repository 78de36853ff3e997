//! Output files: `manifest.json` (written first), `report.json` and
//! `summary.csv`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const SUMMARY: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSeed {
    pub name: String,
    pub kind: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    /// SHA-256 of the config re-serialized in canonical field order.
    pub config_sha256: String,
    pub master_seed: u64,
    pub stages: Vec<StageSeed>,
    pub inputs: Vec<InputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, stages: Vec<StageSeed>) -> Result<RunManifest, CliError> {
        let canonical = serde_json::to_vec(config).map_err(|e| CliError::Config(e.to_string()))?;
        let inputs = config
            .input_paths()
            .into_iter()
            .map(|path| {
                let bytes = std::fs::read(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                Ok(InputDigest {
                    sha256: sha256_hex(&bytes),
                    path,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(RunManifest {
            tool: "instenc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            config_sha256: sha256_hex(&canonical),
            master_seed: config.seed,
            stages,
            inputs,
        })
    }
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub stage: String,
    pub setting: String,
    pub task: String,
    pub seed: u64,
    pub value: f64,
}

impl SummaryRow {
    pub fn new(stage: &str, setting: impl Into<String>, task: impl Into<String>, seed: u64, value: f64) -> Self {
        SummaryRow {
            stage: stage.to_string(),
            setting: setting.into(),
            task: task.into(),
            seed,
            value,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let out = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(out)?;
    if rows.is_empty() {
        w.write_record(["stage", "setting", "task", "seed", "value"]).map_err(out)?;
    }
    for r in rows {
        w.serialize(r).map_err(out)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}

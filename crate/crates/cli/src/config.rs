//! The experiment config: one versioned JSON document per run.
//!
//! Seeds inside module sections are ignored. Every stage gets
//! `derive(master, stage name)` and each consumer inside a stage derives its
//! own seed from that by a fixed key, so adding a stage never moves the
//! seeds of the others.

use std::path::{Path, PathBuf};

use instenc_core::families::{FamilyDoc, PermutationKind};
use instenc_neural::attacks::{AttackConfig, FitConfig, MatchingConfig};
use instenc_neural::learning::{ClassifierSpec, Encoding, Setting, SplitPreset};
use instenc_neural::synthetic::ImageTaskSpec;
use instenc_neural::ImageEncoderSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Cap on enumerated outcomes for exact scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u128>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Score(ScoreConfig),
    ComposeSweep(ComposeSweepConfig),
    Encode(EncodeConfig),
    Attack(AttackExperiment),
    Train(TrainExperiment),
    FullPipeline(PipelineConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Score(_) => "score",
            Experiment::ComposeSweep(_) => "compose_sweep",
            Experiment::Encode(_) => "encode",
            Experiment::Attack(_) => "attack",
            Experiment::Train(_) => "train",
            Experiment::FullPipeline(_) => "full_pipeline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseSource {
    /// Samples `1..=k` carrying only labels.
    Labels { labels: Vec<usize>, label_count: usize },
    /// One-dimensional samples with string labels.
    Scalar { values: Vec<f64>, labels: Vec<String> },
    /// Header `id,label[,sensitive],f0,..,fk`.
    Csv { path: PathBuf },
    /// Header `id,label,tokens` with space-separated token ids; rows with
    /// fewer than `min_tokens` tokens are dropped.
    TokenCsv {
        path: PathBuf,
        #[serde(default = "default_min_tokens")]
        min_tokens: usize,
    },
    /// A raw tensor `[N, ...]` plus a label CSV `id,label[,sensitive]`.
    RawTensor {
        path: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        pixel_max: Option<f64>,
    },
}

pub fn default_min_tokens() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySource {
    Inline(FamilyDoc),
    File(PathBuf),
    /// All permutations of the universe, or only label-preserving ones.
    Permutations(PermutationKind),
    /// `size` random injections into `codomain` symbols with random weights.
    Random { codomain: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFamily {
    pub name: String,
    pub family: FamilySource,
    /// Encoders appended to `family`, making the union uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<FamilyDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composition {
    pub name: String,
    pub inner: String,
    pub outer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Privacy,
    /// `H[X_A | O]` and `H[T_A | X_A, O]`.
    Decomposition,
    /// Utility under the uniform prior over all labelings.
    Utility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub universe: UniverseSource,
    pub families: Vec<NamedFamily>,
    #[serde(default)]
    pub compositions: Vec<Composition>,
    pub n: Vec<usize>,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
}

fn default_measures() -> Vec<Measure> {
    vec![Measure::Privacy]
}

/// Random family pairs checked for monotone composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSweepConfig {
    pub trials: usize,
    #[serde(default = "default_max_domain")]
    pub max_domain: usize,
    #[serde(default = "default_max_family")]
    pub max_family: usize,
    #[serde(default = "default_sweep_n")]
    pub n: Vec<usize>,
}

fn default_max_domain() -> usize {
    6
}
fn default_max_family() -> usize {
    8
}
fn default_sweep_n() -> Vec<usize> {
    vec![1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Synthetic(ImageTaskSpec),
    /// A raw tensor `[N, C, H, W]` plus a label CSV `id,label[,sensitive]`.
    RawTensor {
        path: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        pixel_max: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeConfig {
    pub images: ImageSource,
    pub encoder: ImageEncoderSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Mmd,
    Sensitive,
    Match,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackExperiment {
    pub mode: AttackMode,
    /// The owner's data, encoded by the owner's encoder.
    pub private: ImageSource,
    /// The attacker's own data; needed by `mmd` and `sensitive`.
    #[serde(default)]
    pub public: Option<ImageSource>,
    pub encoder: ImageEncoderSpec,
    #[serde(default)]
    pub mmd: Option<AttackConfig>,
    #[serde(default)]
    pub classifier: Option<ClassifierSpec>,
    #[serde(default)]
    pub matching: Option<MatchingConfig>,
    #[serde(default)]
    pub plaintext: Option<FitConfig>,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExperiment {
    pub owners: Vec<ImageSource>,
    pub encoding: Encoding,
    pub classifier: ClassifierSpec,
    pub settings: Vec<Setting>,
    #[serde(default = "default_split")]
    pub split: SplitPreset,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn default_split() -> SplitPreset {
    SplitPreset::Standard
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if let Experiment::FullPipeline(p) = &self.experiment {
            let mut names = std::collections::BTreeSet::new();
            for s in &p.stages {
                if matches!(s.experiment, Experiment::FullPipeline(_)) {
                    return Err(CliError::Config("pipelines cannot nest".into()));
                }
                if !names.insert(s.name.as_str()) {
                    return Err(CliError::Config(format!("stage `{}` appears twice", s.name)));
                }
            }
        }
        Ok(())
    }

    /// `(stage name, experiment)` in run order.
    pub fn stages(&self) -> Vec<(String, &Experiment)> {
        match &self.experiment {
            Experiment::FullPipeline(p) => p.stages.iter().map(|s| (s.name.clone(), &s.experiment)).collect(),
            e => vec![(e.kind().to_string(), e)],
        }
    }

    /// Every input file the config reads.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for (_, e) in self.stages() {
            collect_paths(e, &mut out);
        }
        out.sort();
        out.dedup();
        out
    }
}

fn image_paths(s: &ImageSource, out: &mut Vec<PathBuf>) {
    if let ImageSource::RawTensor { path, labels, .. } = s {
        out.push(path.clone());
        out.push(labels.clone());
    }
}

fn collect_paths(e: &Experiment, out: &mut Vec<PathBuf>) {
    match e {
        Experiment::Score(s) => {
            match &s.universe {
                UniverseSource::Csv { path } | UniverseSource::TokenCsv { path, .. } => out.push(path.clone()),
                UniverseSource::RawTensor { path, labels, .. } => {
                    out.push(path.clone());
                    out.push(labels.clone());
                }
                UniverseSource::Labels { .. } | UniverseSource::Scalar { .. } => {}
            }
            for f in &s.families {
                if let FamilySource::File(p) = &f.family {
                    out.push(p.clone());
                }
            }
        }
        Experiment::Encode(c) => image_paths(&c.images, out),
        Experiment::Attack(a) => {
            image_paths(&a.private, out);
            if let Some(p) = &a.public {
                image_paths(p, out);
            }
        }
        Experiment::Train(t) => t.owners.iter().for_each(|o| image_paths(o, out)),
        Experiment::ComposeSweep(_) | Experiment::FullPipeline(_) => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let ok = r#"{"version": 1, "experiment": {"kind": "compose_sweep", "trials": 2}}"#;
        assert!(ExperimentConfig::parse(ok).is_ok());
        let bad = r#"{"version": 1, "experiment": {"kind": "compose_sweep", "trials": 2, "extra": 1}}"#;
        assert!(matches!(ExperimentConfig::parse(bad), Err(CliError::Config(_))));
        let top = r#"{"version": 1, "colour": "red", "experiment": {"kind": "compose_sweep", "trials": 2}}"#;
        assert!(ExperimentConfig::parse(top).is_err());
        let old = r#"{"version": 0, "experiment": {"kind": "compose_sweep", "trials": 2}}"#;
        assert!(ExperimentConfig::parse(old).is_err());
    }

    #[test]
    fn pipelines_name_their_stages() {
        let text = r#"{"version": 1, "experiment": {"kind": "full_pipeline", "stages": [
            {"name": "a", "experiment": {"kind": "compose_sweep", "trials": 1}},
            {"name": "a", "experiment": {"kind": "compose_sweep", "trials": 1}}]}}"#;
        assert!(ExperimentConfig::parse(text).is_err());
        let single = ExperimentConfig::parse(r#"{"version": 1, "experiment": {"kind": "compose_sweep", "trials": 1}}"#).unwrap();
        assert_eq!(single.stages()[0].0, "compose_sweep");
    }
}

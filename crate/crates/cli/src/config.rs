//! Optional TOML run configuration. Command-line flags take precedence over
//! every value read here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rarelm::eval::{CandidateConfig, EnrichMode};
use rarelm::neural::TrainConfig;
use rarelm::rescore::RescoreConfig;
use rarelm::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_count: Option<u64>,
    pub max_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSection {
    pub order: Option<usize>,
    pub cutoff: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichSection {
    pub threshold: Option<u64>,
    pub mode: Option<EnrichMode>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub thresholds: Option<Vec<u64>>,
    pub ks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Fallbacks for path flags, keyed by flag name without dashes
    /// (`corpus`, `lexicon`, `model`, ...).
    pub paths: BTreeMap<String, PathBuf>,
    pub vocab: VocabSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub ngram: NgramSection,
    pub enrich: EnrichSection,
    pub candidates: CandidateConfig,
    pub rescore: RescoreConfig,
    pub sweep: SweepSection,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))
    }

    /// The flag value, else the config entry, else a usage error.
    pub fn path(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf, UsageError> {
        self.optional_path(flag, key)
            .ok_or_else(|| UsageError(format!("missing --{key} (or paths.{key} in the config file)")))
    }

    pub fn optional_path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone().or_else(|| self.paths.get(key).cloned())
    }
}

/// SHA-256 of the canonical JSON form of a command's effective settings.
pub fn digest(settings: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(settings.to_string().as_bytes()))
}

//! One config file for every subsystem. Precedence: CLI flags > file > defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::component::SegmenterConfig;
use crate::harness::{GradedRubric, ProviderConfig};
use crate::ingest::FilterPolicy;
use crate::lint::LintConfig;
use crate::metadata::MetadataConfig;
use crate::taxonomy::TaxonomyConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub top_terms: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { top_terms: 10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub segmenter: SegmenterConfig,
    pub taxonomy: TaxonomyConfig,
    pub ingest: FilterPolicy,
    pub metadata: MetadataConfig,
    pub lint: LintConfig,
    pub provider: ProviderConfig,
    pub rubric: GradedRubric,
    pub cluster: ClusterConfig,
    pub report: ReportConfig,
}

impl Config {
    /// `.json` files are JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| e.to_string())
        } else {
            toml::from_str(&raw).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse { path: shown, message })
    }

    /// SHA-256 over the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&serde_json::to_value(self).expect("config serializes")).unwrap();
        format!("{:x}", Sha256::digest(&canonical))
    }
}

use std::collections::BTreeMap;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// Provenance block embedded in every emitted report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub seeds: BTreeMap<String, u64>,
    /// Set when results depend on a remote model and cannot be replayed.
    #[serde(default)]
    pub live_provider: bool,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_hash: &str, inputs: Vec<String>, started_at: DateTime<Utc>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config_hash: config_hash.to_string(),
            inputs,
            started_at,
            seeds: BTreeMap::new(),
            live_provider: false,
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }
}

/// `SOURCE_DATE_EPOCH` when set (reproducible builds convention), else the wall clock.
pub fn run_timestamp() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| Utc.timestamp_opt(secs, 0).single())
        .unwrap_or_else(Utc::now)
}

//! Run manifests.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TnpError};
use crate::io::config::KvConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Canonical `key=value` text of the resolved configuration.
    pub config: String,
    pub seed: u64,
    pub config_hash: String,
    /// Unix seconds.
    pub started: u64,
    pub finished: Option<u64>,
    pub artifacts: Vec<String>,
}

/// SHA-256 of the canonical config text; entries are sorted, so insertion order is irrelevant.
pub fn config_hash(config: &KvConfig) -> String {
    Sha256::digest(config.to_text().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config: &KvConfig, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: config.to_text(),
            seed,
            config_hash: config_hash(config),
            started: now(),
            finished: None,
            artifacts: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished = Some(now());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| TnpError::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|source| TnpError::File {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TnpError::File {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| TnpError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_order() {
        let a = KvConfig::parse("a=1\nb=2\n").unwrap();
        let b = KvConfig::parse("b=2\na=1\n").unwrap();
        let c = KvConfig::parse("b=3\na=1\n").unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }
}

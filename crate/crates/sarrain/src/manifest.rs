//! Per-invocation run manifest: enough to rerun a stage bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::formats::write_json;

pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub subcommand: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub workers: usize,
    /// SHA-256 of the canonical JSON of the resolved stage configuration.
    pub config_sha256: String,
    pub config: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, args: &[String], seed: Option<u64>, workers: usize, config: serde_json::Value) -> Self {
        // serde_json maps are ordered, so this rendering is canonical
        let canonical = serde_json::to_vec(&config).expect("json value serializes");
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: sarrain_core::VERSION.to_string(),
            subcommand: subcommand.to_string(),
            args: args.to_vec(),
            seed,
            workers,
            config_sha256: sha256_hex(&canonical),
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(FILE_NAME), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = serde_json::json!({"b": 1, "a": [1, 2]});
        let b: serde_json::Value = serde_json::from_str(r#"{"a": [1, 2], "b": 1}"#).unwrap();
        let (ma, mb) = (RunManifest::new("x", &[], None, 1, a), RunManifest::new("x", &[], None, 1, b));
        assert_eq!(ma.config_sha256, mb.config_sha256);
        assert_eq!(ma, mb);
    }
}

//! Run manifest: provenance record written next to every stage's outputs,
//! carrying the effective config, digests of consumed inputs, and digests
//! of produced files.
//!
//! The manifest records a wall-clock timestamp, so it is the one file in an
//! output directory excluded from byte-reproducibility comparisons; every
//! digest inside it is still deterministic.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub stage: String,
    pub created_unix: u64,
    /// effective configuration, key → value
    pub config: BTreeMap<String, String>,
    /// consumed artifacts: name → sha256 hex (or backend id)
    pub inputs: BTreeMap<String, String>,
    /// produced files: name → sha256 hex
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(stage: &str, cfg: &PipelineConfig) -> RunManifest {
        RunManifest {
            format: "run-manifest".to_string(),
            version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: cfg.entries_map(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_input_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)
            .with_context(|| format!("digesting input {}", path.display()))?;
        self.inputs.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn record_input_value(&mut self, name: &str, value: &str) {
        self.inputs.insert(name.to_string(), value.to_string());
    }

    /// Digests `out_dir/name`, which must already be written.
    pub fn record_output(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        let path = out_dir.join(name);
        let digest = sha256_file(&path)
            .with_context(|| format!("digesting output {}", path.display()))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).context("serializing run manifest")?;
        std::fs::write(out_dir.join(RUN_MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(out_dir: &Path) -> Result<RunManifest> {
        let path = out_dir.join(RUN_MANIFEST_FILE);
        let bytes =
            std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }

    /// Checks every recorded output digest against the file now present.
    pub fn verify_outputs(&self, out_dir: &Path) -> Result<()> {
        for (name, recorded) in &self.outputs {
            let actual = sha256_file(&out_dir.join(name))
                .with_context(|| format!("digesting {name}"))?;
            if &actual != recorded {
                anyhow::bail!("output `{name}` digest mismatch: recorded {recorded}, found {actual}");
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_validate_and_catch_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("artifact.bin"), b"payload").unwrap();

        let cfg = PipelineConfig::default();
        let mut rm = RunManifest::new("train", &cfg);
        rm.record_output(dir.path(), "artifact.bin").unwrap();
        rm.save(dir.path()).unwrap();

        let loaded = RunManifest::load(dir.path()).unwrap();
        assert_eq!(loaded.stage, "train");
        loaded.verify_outputs(dir.path()).unwrap();

        std::fs::write(dir.path().join("artifact.bin"), b"tampered").unwrap();
        assert!(loaded.verify_outputs(dir.path()).is_err());
    }
}

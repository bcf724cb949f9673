//! Run manifests: every artifact-producing command records what ran, on
//! which inputs (by content digest), with which config and seeds, and
//! what came out. A manifest is enough to reproduce the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance record written alongside a command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest {
            command: command.into(),
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            tool_version: TOOL_VERSION.to_string(),
            outputs: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn with_config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.config = serde_json::to_value(config)
            .map_err(|e| Error::Parse(format!("config not serializable: {e}")))?;
        Ok(self)
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = seeds.to_vec();
        self
    }

    /// Records an input file by digesting its current content.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamps the duration and writes the manifest as pretty JSON.
    pub fn finish(mut self, started: Instant, path: &Path) -> Result<()> {
        self.wall_clock_secs = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::Parse(format!("manifest serialization: {e}")))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: bad manifest: {e}", path.display())))
    }
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(digest_bytes(&bytes))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        use std::fmt::Write as _;
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_the_known_sha256_of_abc() {
        // the FIPS 180-2 appendix value for "abc"
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.json");
        fs::write(&input, "{}").unwrap();
        let started = Instant::now();
        let mut m = RunManifest::new("gen")
            .with_config(&serde_json::json!({"family": "rnn_grid"}))
            .unwrap()
            .with_seeds(&[7]);
        m.add_input(&input).unwrap();
        m.add_output(&dir.path().join("out.json"));
        let path = dir.path().join("manifest.json");
        m.finish(started, &path).unwrap();

        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.command, "gen");
        assert_eq!(back.seeds, vec![7]);
        assert_eq!(back.tool_version, TOOL_VERSION);
        assert_eq!(back.inputs.len(), 1);
        assert!(back.wall_clock_secs >= 0.0);
        assert!(RunManifest::read(&dir.path().join("absent.json")).is_err());
    }
}

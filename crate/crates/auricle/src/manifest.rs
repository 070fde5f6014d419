//! Run manifests and content hashing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Record of one command run: configuration, seeds, input/output hashes and
/// the loss curve for training commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default)]
    pub input_hashes: BTreeMap<String, String>,
    #[serde(default)]
    pub output_hashes: BTreeMap<String, String>,
    #[serde(default)]
    pub loss_curve: Vec<f64>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            seed,
            config: serde_json::Value::Null,
            input_hashes: BTreeMap::new(),
            output_hashes: BTreeMap::new(),
            loss_curve: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn record_input(&mut self, name: &str, path: impl AsRef<Path>) -> Result<()> {
        let h = sha256_file(&path)?;
        self.input_hashes.insert(name.to_string(), h);
        Ok(())
    }

    pub fn record_output(&mut self, name: &str, path: impl AsRef<Path>) -> Result<()> {
        let h = sha256_file(&path)?;
        self.output_hashes.insert(name.to_string(), h);
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("manifest serialization");
        atomic_write(path, json.as_bytes())
    }
}

/// Write-temp-then-rename so partially written files are never observed.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        // sha256("abc")
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
    }
}

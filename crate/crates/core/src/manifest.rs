// SPDX-License-Identifier: MIT OR Apache-2.0

//! Index of emitted files with content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written by one command, keyed by path relative to the output
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactIndex {
    pub command: Vec<String>,
    pub files: BTreeMap<String, String>,
}

impl ArtifactIndex {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            files: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.insert(name.to_owned(), sha256_hex(bytes));
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    /// # Errors
    ///
    /// [`Error::Json`] for malformed input.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Re-reads every listed file under `dir` and compares hashes.
    ///
    /// # Errors
    ///
    /// I/O errors, or [`Error::Provenance`] naming the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, want) in &self.files {
            let got = sha256_hex(&std::fs::read(dir.join(name))?);
            if &got != want {
                return Err(Error::Provenance(format!(
                    "{name}: hash {got}, manifest says {want}"
                )));
            }
        }
        Ok(())
    }
}

/// Writes files into a directory and indexes them.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    index: ArtifactIndex,
}

impl ArtifactWriter {
    /// Creates `dir` if needed.
    ///
    /// # Errors
    ///
    /// I/O errors.
    pub fn create(dir: &Path, command: Vec<String>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            index: ArtifactIndex::new(command),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// # Errors
    ///
    /// I/O errors.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.index.record(name, bytes);
        Ok(path)
    }

    /// Writes the manifest and returns the index.
    ///
    /// # Errors
    ///
    /// I/O errors.
    pub fn finish(self) -> Result<ArtifactIndex> {
        std::fs::write(self.dir.join(MANIFEST_FILE), self.index.to_json_bytes())?;
        Ok(self.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn verify_catches_edits() {
        let dir = std::env::temp_dir().join(format!("capattn-manifest-{}", std::process::id()));
        let mut w = ArtifactWriter::create(&dir, vec!["x".into()]).unwrap();
        w.write("a.txt", b"hello").unwrap();
        let idx = w.finish().unwrap();
        idx.verify(&dir).unwrap();
        let back = ArtifactIndex::from_json_slice(&std::fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, idx);
        std::fs::write(dir.join("a.txt"), b"changed").unwrap();
        assert!(matches!(idx.verify(&dir), Err(Error::Provenance(_))));
        std::fs::remove_dir_all(dir).ok();
    }
}

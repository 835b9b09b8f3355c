//! Per-stage manifests recording an input hash and the files a stage wrote,
//! so unchanged stages can be skipped on re-run.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "artifact.toml";

/// 64-bit FNV-1a accumulated over length-prefixed chunks, so that
/// `["ab", "c"]` and `["a", "bc"]` differ.
#[derive(Default)]
pub struct InputHash(FnvHasher);

impl InputHash {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        self.0.write_u64(data.len() as u64);
        self.0.write(data);
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let data = std::fs::read(path)?;
        Ok(self.bytes(&data))
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.bytes(&seed.to_le_bytes())
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

#[derive(Serialize)]
struct Section<'a, T> {
    section: &'a T,
}

/// Canonical TOML text of a config section, for hashing.
pub fn section_text<T: Serialize>(section: &T) -> String {
    toml::to_string(&Section { section }).expect("config sections serialise")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: String,
    /// Hex-encoded input hash.
    pub hash: String,
    /// Output files relative to the stage directory.
    pub outputs: Vec<PathBuf>,
}

impl StageArtifact {
    pub fn new(stage: &str, hash: u64, outputs: Vec<PathBuf>) -> Self {
        Self {
            stage: stage.to_string(),
            hash: format!("{hash:016x}"),
            outputs,
        }
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_NAME);
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        toml::from_str(&text).map(Some).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
    }

    /// Written last, once every output is on disk.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Manifest(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }

    /// True when the recorded hash matches and every output still exists.
    pub fn is_current(&self, dir: &Path, hash: u64) -> bool {
        self.hash == format!("{hash:016x}") && self.outputs.iter().all(|p| dir.join(p).is_file())
    }

    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.outputs.iter().map(|p| dir.join(p)).collect()
    }
}

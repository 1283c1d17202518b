//! Experiment manifests. The manifest hash is embedded in every artifact a
//! command writes.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    /// `None` when the built-in defaults were used.
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExperimentManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config_hash: String, seed: u64, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config_hash,
            seed,
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            out_dir: out_dir.to_path_buf(),
            warnings: Vec::new(),
        }
    }

    /// Hash of everything except the warnings, which are outputs.
    pub fn hash(&self) -> String {
        let key = Self { warnings: Vec::new(), ..self.clone() };
        sha256_hex(serde_json::to_string(&key).expect("manifest serializes").as_bytes())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&ManifestFile { hash: self.hash(), manifest: self })?;
        text.push('\n');
        crate::output::write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    hash: String,
    #[serde(flatten)]
    manifest: &'a ExperimentManifest,
}

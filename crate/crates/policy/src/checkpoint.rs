//! JSON checkpoints. Networks are stored as layer widths plus one flat
//! parameter list: for each layer, the out × in weight matrix row-major,
//! then the bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::policy::ActorCritic;
use crate::ppo::{Optimizers, PpoConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Completed training iterations.
    pub iteration: usize,
    /// Hash of the full experiment config the policy was trained under.
    pub config_hash: String,
    /// Hash of the manifest of the run that wrote the file.
    #[serde(default)]
    pub manifest: String,
    pub ppo: PpoConfig,
    pub model: ActorCritic,
    pub optimizer: Optimizers,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {} (expected {CHECKPOINT_VERSION})", ck.version)));
        }
        Ok(ck)
    }
}

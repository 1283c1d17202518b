//! Experiment configuration: environment, PPO and evaluation settings in
//! one TOML file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use crane_core::EnvConfig;
use crane_policy::PpoConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Episodes per condition, split evenly between the two sides.
    pub episodes: usize,
    pub seed: u64,
    /// Step window `[lo, hi)` for the windowed statistics.
    pub window: [u64; 2],
    /// Scale bands for the robustness sweep.
    pub bands: Vec<[f64; 2]>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 50, seed: 12345, window: [700, 1200], bands: vec![[0.1, 0.49], [0.5, 1.5], [1.51, 2.0]] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        if self.eval.episodes == 0 {
            bail!("eval.episodes must be at least 1");
        }
        if self.eval.window[0] >= self.eval.window[1] {
            bail!("eval.window must satisfy lo < hi");
        }
        for b in &self.eval.bands {
            if !(b[0] > 0.0 && b[0] <= b[1]) {
                bail!("eval.bands entries must satisfy 0 < lo <= hi");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, so formatting and comments in the
    /// TOML file do not change it.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `LO:HI`.
pub fn parse_band(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad band bound {lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad band bound {hi:?}: {e}"))?;
    if !(lo > 0.0 && lo <= hi) {
        return Err(format!("band must satisfy 0 < LO <= HI, got {lo}:{hi}"));
    }
    Ok([lo, hi])
}

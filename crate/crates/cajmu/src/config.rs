//! Run configuration: one JSON document covering all module configs, with
//! unknown-key rejection, documented defaults, a stable content hash, and
//! the `CAJMU_SEED` environment override. Also the checkpoint container
//! shared by the training and tracking commands.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::sim::SequenceConfig;
use crate::tensor::ParamSet;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdaterRunConfig {
    pub buffer_capacity: usize,
    pub confidence_ratio: f64,
}

impl Default for UpdaterRunConfig {
    fn default() -> Self {
        UpdaterRunConfig {
            buffer_capacity: crate::online::BUFFER_CAPACITY,
            confidence_ratio: crate::online::CONFIDENCE_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRunConfig {
    pub precision_pixels: f64,
    pub normalized_threshold: f64,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        EvalRunConfig {
            precision_pixels: 20.0,
            normalized_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub tracker: TrackerConfig,
    pub updater: UpdaterRunConfig,
    pub meta: MetaConfig,
    pub data: SequenceConfig,
    pub eval: EvalRunConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tracker: TrackerConfig::default(),
            updater: UpdaterRunConfig::default(),
            meta: MetaConfig::default(),
            data: SequenceConfig::default(),
            eval: EvalRunConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config document; missing keys take defaults, unknown keys
    /// are rejected. The `CAJMU_SEED` environment variable, when set,
    /// overrides the configured seed.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.apply_env_seed()?;
        cfg.meta.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Defaults plus the environment seed override.
    pub fn resolved_default() -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_env_seed()?;
        Ok(cfg)
    }

    fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("CAJMU_SEED") {
            self.seed = v
                .parse()
                .map_err(|_| Error::invalid(format!("CAJMU_SEED must be an integer, got '{v}'")))?;
        }
        Ok(())
    }

    /// Stable content hash of the fully resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Serialized training artifact: the parameter set plus enough provenance
/// to detect stage or config mismatches downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: u8,
    pub seed: u64,
    pub config_hash: String,
    pub params: ParamSet,
    /// Outer-loss step weights, present after stage 2.
    pub v: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPrerequisite(format!(
                "checkpoint {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

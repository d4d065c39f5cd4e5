//! Application configuration: one JSON file covering the slot grid, the
//! synthetic generator, training, and the bundled experiment layouts.
//!
//! Every field has a default, so a partial file (or none at all) works; the
//! defaults describe the ten-station desk setup used throughout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlearn::FqiConfig;
use crate::sessions::{GenParams, SlotConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub slot: SlotConfig,
    pub generator: GenParams,
    pub fqi: FqiConfig,
    /// Episodes produced by `generate` when no count is given.
    pub episodes: usize,
    /// Seed for synthetic session generation (independent of training).
    pub data_seed: u64,
    /// Episodes from the front of the file used for training.
    pub train_episodes: usize,
    /// Episodes right after the training block used for held-out evaluation.
    pub test_episodes: usize,
    /// Profile-window sizes (in preceding episodes) for the linear costs of
    /// the credit experiment.
    pub credit_windows: Vec<usize>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            slot: SlotConfig::desk_default(),
            generator: GenParams::desk_default(),
            fqi: FqiConfig::default(),
            episodes: 120,
            data_seed: 42,
            train_episodes: 90,
            test_episodes: 30,
            credit_windows: vec![1, 10],
        }
    }
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        self.slot.validate()?;
        self.generator.validate(&self.slot)?;
        self.fqi.validate()?;
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.train_episodes == 0 || self.test_episodes == 0 {
            return Err(Error::Config(
                "train_episodes and test_episodes must be positive".into(),
            ));
        }
        if self.credit_windows.is_empty() || self.credit_windows.contains(&0) {
            return Err(Error::Config(
                "credit_windows must be a non-empty list of positive window sizes".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(path, body)?;
        Ok(())
    }
}

//! Adapter checkpoints as JSON documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MonarchAdapter, MonarchConfig};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: MonarchConfig,
    pub factor_in: Vec<f64>,
    pub factor_out: Vec<f64>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_adapter(adapter: &MonarchAdapter, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: *adapter.config(),
            factor_in: adapter.factor_in().to_vec(),
            factor_out: adapter.factor_out().to_vec(),
            seed,
        }
    }

    /// Validates every field and rebuilds the adapter.
    pub fn to_adapter(&self) -> Result<MonarchAdapter> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "format_version: unsupported value {}",
                self.format_version
            )));
        }
        self.config
            .validate()
            .map_err(|e| Error::Parse(format!("config: {e}")))?;
        let expected = self.config.n * self.config.block_rank;
        for (name, f) in [("factor_in", &self.factor_in), ("factor_out", &self.factor_out)] {
            if f.len() != expected {
                return Err(Error::Parse(format!(
                    "{name}: length {} does not match expected {expected}",
                    f.len()
                )));
            }
        }
        MonarchAdapter::from_factors(self.config, self.factor_in.clone(), self.factor_out.clone())
            .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

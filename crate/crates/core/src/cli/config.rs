//! Resolved run configuration and the manifest every command writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SceneSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Everything numeric a command depends on. Files hold any subset of it;
/// missing keys take the built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives scene synthesis, the split and initialization alike.
    pub seed: u64,
    pub scene: SceneSpec,
    pub split: SplitSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reads a TOML or JSON configuration, or the `config` section of a
    /// previously written run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let toml = path.extension().is_some_and(|e| e == "toml");
        Self::from_text(&text, toml).map_err(|m| Error::format(path, m))
    }

    /// Same as [`RunConfig::load`] on text already in memory.
    pub fn parse(text: &str, toml: bool) -> Result<Self> {
        Self::from_text(text, toml).map_err(Error::Config)
    }

    fn from_text(text: &str, toml: bool) -> std::result::Result<Self, String> {
        let value: serde_json::Value = if toml {
            let t: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
            serde_json::to_value(t).map_err(|e| e.to_string())?
        } else {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        };
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => {
                map.remove("config").expect("checked")
            }
            v => v,
        };
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| e.to_string())?;
        cfg.sync_seed();
        Ok(cfg)
    }

    pub fn sync_seed(&mut self) {
        self.split.seed = self.seed;
        self.train.seed = self.seed;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hash = Sha256::digest(&bytes);
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<PathBuf>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

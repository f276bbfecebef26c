//! Run configuration files.

use std::path::{Path, PathBuf};

use geolatent::harness::{ProbeConfig, TrainConfig};
use geolatent::nets::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
    /// Directory the manifest's tile paths are relative to; defaults to the
    /// manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let bad = |message: String| CliError::Config { path: origin.to_path_buf(), message };
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        match table.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(bad(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(bad("missing integer key `schema_version`".into())),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.message().to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| geolatent::Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Makes data paths absolute relative to `base` and fills the corpus
    /// default.
    pub fn resolve(mut self, base: &Path) -> Self {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.data.manifest = abs(&self.data.manifest);
        let corpus = match &self.data.corpus {
            Some(c) => abs(c),
            None => self.data.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        self.data.corpus = Some(corpus);
        self
    }

    pub fn corpus_root(&self) -> PathBuf {
        self.data.corpus.clone().unwrap_or_default()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the resolved config with the
    /// seed zeroed.
    pub fn hash12(&self) -> String {
        let mut c = self.clone();
        c.train.seed = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(format!("{}-s{}", self.hash12(), self.train.seed))
    }
}

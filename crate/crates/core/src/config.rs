//! Node configuration file (TOML).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use crate::consensus::{ConsensusConfig, ConsensusError};
use crate::crypto::Address;

/// Environment variable that overrides `--config`.
pub const CONFIG_ENV: &str = "MEDLEDGER_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid consensus section: {0}")]
    Consensus(#[from] ConsensusError),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisConfig {
    #[serde(default = "default_admin_name")]
    pub admin_name: String,
    #[serde(default)]
    pub system_start_date: Option<NaiveDate>,
    /// Fixed genesis time, so that nodes sharing an admin seed derive the
    /// same genesis block.
    #[serde(default)]
    pub timestamp_ms: Option<u64>,
    /// Genesis block file to adopt instead of creating one.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

impl Default for GenesisConfig {
    fn default() -> GenesisConfig {
        GenesisConfig { admin_name: default_admin_name(), system_start_date: None, timestamp_ms: None, file: None }
    }
}

fn default_admin_name() -> String {
    "Administrator".into()
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:7700".parse().expect("valid literal")
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub data_dir: PathBuf,
    /// Peer-to-peer listen address.
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Gateway HTTP address; no gateway when absent.
    #[serde(default)]
    pub api_listen: Option<SocketAddr>,
    #[serde(default)]
    pub peers: Vec<SocketAddr>,
    /// Defaults to `<data_dir>/keys`.
    #[serde(default)]
    pub keystore: Option<PathBuf>,
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub genesis: GenesisConfig,
}

impl NodeConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<NodeConfig, ConfigError> {
        let mut cfg: NodeConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        if let Some(base) = origin.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        NodeConfig::parse(&text, path)
    }

    /// Relative paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(k) = &mut self.keystore {
            fix(k);
        }
        if let Some(f) = &mut self.genesis.file {
            fix(f);
        }
    }

    pub fn keystore_dir(&self) -> PathBuf {
        self.keystore.clone().unwrap_or_else(|| self.data_dir.join("keys"))
    }

    pub fn chain_path(&self) -> PathBuf {
        self.data_dir.join("chain.dat")
    }

    /// Consensus parameters with empty delegate and stake sets filled with
    /// the local node, then validated.
    pub fn effective_consensus(&self, local: Address) -> Result<ConsensusConfig, ConfigError> {
        let mut c = self.consensus.clone();
        if c.delegates.is_empty() {
            c.delegates.push(local);
        }
        if c.stakes.is_empty() {
            c.stakes.insert(local, 1);
        }
        c.validate()?;
        Ok(c)
    }
}

/// Picks the config path: the environment variable wins over the flag.
pub fn resolve_config_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from).or(flag)
}

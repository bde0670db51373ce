use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cloudroid::choreographer::{Choreographer, NodePool, SlaDictionary};
use cloudroid::portal::Portal;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {detail}")]
    File { path: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

/// Server settings, read from a TOML file:
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// token = "change-me"
/// dictionary = "sla.json"     # optional
/// node_pool = "nodes.json"    # optional
/// packages = ["detector.json"] # optional, deployed at startup
/// ```
///
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortalConfig {
    pub listen: SocketAddr,
    pub token: String,
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    #[serde(default)]
    pub node_pool: Option<PathBuf>,
    /// Websocket URL written into stub descriptors. Defaults to
    /// `ws://<bound address>/ws`.
    #[serde(default)]
    pub public_url: Option<String>,
    #[serde(default)]
    pub packages: Vec<PathBuf>,
}

/// Pool used when the config names none.
pub const DEFAULT_NODES: usize = 4;
pub const DEFAULT_NODE_CPU: u64 = 8000;
pub const DEFAULT_NODE_MEMORY_MB: u64 = 16384;

impl PortalConfig {
    pub fn new(listen: SocketAddr, token: impl Into<String>) -> Self {
        PortalConfig {
            listen,
            token: token.into(),
            dictionary: None,
            node_pool: None,
            public_url: None,
            packages: Vec::new(),
        }
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c: PortalConfig =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if c.token.is_empty() {
            return Err(ConfigError::Invalid("token must not be empty".into()));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        c.dictionary.iter_mut().for_each(resolve);
        c.node_pool.iter_mut().for_each(resolve);
        c.packages.iter_mut().for_each(resolve);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn choreographer(&self) -> Result<Choreographer, ConfigError> {
        let dictionary = match &self.dictionary {
            Some(p) => SlaDictionary::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => SlaDictionary::default(),
        };
        let pool = match &self.node_pool {
            Some(p) => NodePool::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => NodePool::uniform(DEFAULT_NODES, DEFAULT_NODE_CPU, DEFAULT_NODE_MEMORY_MB),
        };
        Ok(Choreographer::new(dictionary, pool))
    }

    /// A portal with the configured packages deployed.
    pub fn build_portal(&self, url: &str) -> Result<Portal, ConfigError> {
        let portal = Portal::new(self.choreographer()?, url);
        for p in &self.packages {
            let raw = std::fs::read(p).map_err(|e| ConfigError::File {
                path: p.display().to_string(),
                detail: e.to_string(),
            })?;
            portal
                .deploy(&raw, true)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?;
        }
        Ok(portal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_config_dir() {
        let c = PortalConfig::from_toml(
            "listen = \"127.0.0.1:0\"\ntoken = \"t\"\ndictionary = \"d.json\"\nnode_pool = \"/abs/n.json\"\n",
            Path::new("/etc/cloudroid"),
        )
        .unwrap();
        assert_eq!(c.dictionary.unwrap(), Path::new("/etc/cloudroid/d.json"));
        assert_eq!(c.node_pool.unwrap(), Path::new("/abs/n.json"));
    }

    #[test]
    fn empty_token_and_unknown_keys_rejected() {
        assert!(PortalConfig::from_toml(
            "listen = \"127.0.0.1:0\"\ntoken = \"\"\n",
            Path::new(".")
        )
        .is_err());
        assert!(PortalConfig::from_toml(
            "listen = \"127.0.0.1:0\"\ntoken = \"t\"\nport = 1\n",
            Path::new(".")
        )
        .is_err());
    }

    #[test]
    fn default_pool() {
        let c = PortalConfig::new("127.0.0.1:0".parse().unwrap(), "t");
        let ch = c.choreographer().unwrap();
        assert_eq!(ch.pool().nodes().len(), DEFAULT_NODES);
    }
}

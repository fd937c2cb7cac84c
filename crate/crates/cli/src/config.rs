//! Service configuration: one TOML file, every field overridable by a flag.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wifiproof_core::VerifierConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Store directory; in-memory when absent.
    #[serde(default)]
    pub store: Option<PathBuf>,
    /// Fingerprint JSON, loaded at start and rewritten when replaced.
    #[serde(default)]
    pub fingerprint: Option<PathBuf>,
    #[serde(default)]
    pub verifier: VerifierConfig,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("literal")
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            store: None,
            fingerprint: None,
            verifier: VerifierConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing service config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.verifier.validate()?;
        for p in self.store.iter().chain(&self.fingerprint) {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use wifiproof_core::LocationThreshold;

    #[test]
    fn parses_full_file() {
        let cfg = ServiceConfig::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            [verifier]
            deltas = ["PT1H", "PT30M", "PT5M", "PT0S"]
            location_threshold = { absolute = 3 }
            witness_threshold = 1
            epoch = "P14D"
            period = "PT12H"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.listen.port(), 9000);
        assert_eq!(cfg.verifier.deltas[2], Duration::minutes(5));
        assert_eq!(cfg.verifier.location_threshold, LocationThreshold::Absolute(3));
        assert_eq!(cfg.verifier.period, Duration::hours(12));
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ServiceConfig::from_toml("").unwrap(), ServiceConfig::default());
    }

    #[test]
    fn rejects_invalid_verifier() {
        let err = ServiceConfig::from_toml("[verifier]\ndeltas = [\"PT5M\", \"PT10M\"]\nlocation_threshold = { fraction = 0.5 }\nwitness_threshold = 2\nepoch = \"P7D\"\nperiod = \"P1D\"\n");
        assert!(err.is_err());
        assert!(ServiceConfig::from_toml("bogus = 1").is_err());
    }
}

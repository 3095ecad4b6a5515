use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use didchain_core::events::{ActorSpec, EngineConfig};
use serde::{Deserialize, Serialize};

use crate::GatewayError;

pub const ENV_BIND: &str = "DIDCHAIN_BIND";
pub const ENV_DATA_DIR: &str = "DIDCHAIN_DATA_DIR";

/// Gateway configuration, usually read from TOML.
///
/// ```toml
/// bind = "127.0.0.1:8080"
/// data_dir = "./data"
///
/// [tokens]
/// "farm-token" = "farm"
///
/// [[actors]]
/// alias = "farm"
/// role = "Producer"
/// balance = 1000
///
/// [engine.fees]
/// create_fee = 50
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    /// In-memory engine when absent.
    pub data_dir: Option<PathBuf>,
    /// Bearer token to account id.
    pub tokens: BTreeMap<String, String>,
    /// Registered at startup unless already present.
    pub actors: Vec<ActorSpec>,
    pub engine: EngineConfig,
    /// Deterministic one-second clock from this instant; wall clock otherwise.
    pub clock_start: Option<DateTime<Utc>>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            tokens: BTreeMap::new(),
            actors: Vec::new(),
            engine: EngineConfig::default(),
            clock_start: None,
        }
    }
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let config: Self = toml::from_str(text).map_err(|e| GatewayError::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `DIDCHAIN_BIND` and `DIDCHAIN_DATA_DIR` when set.
    pub fn apply_env(&mut self) -> Result<(), GatewayError> {
        self.apply_overrides(std::env::var(ENV_BIND).ok(), std::env::var(ENV_DATA_DIR).ok())
    }

    pub fn apply_overrides(&mut self, bind: Option<String>, data_dir: Option<String>) -> Result<(), GatewayError> {
        if let Some(bind) = bind {
            self.bind = bind
                .parse()
                .map_err(|e| GatewayError::ConfigInvalid(format!("{ENV_BIND}={bind}: {e}")))?;
        }
        if let Some(dir) = data_dir {
            self.data_dir = Some(PathBuf::from(dir));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        self.engine
            .ledger
            .validate()
            .map_err(|e| GatewayError::ConfigInvalid(e.to_string()))?;
        for (token, account) in &self.tokens {
            if token.is_empty() || account.is_empty() {
                return Err(GatewayError::ConfigInvalid("tokens and accounts must be non-empty".into()));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for actor in &self.actors {
            if !seen.insert(actor.alias.as_str()) {
                return Err(GatewayError::ConfigInvalid(format!("actor {} declared twice", actor.alias)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_toml() {
        let c = GatewayConfig::from_toml(
            r#"
            bind = "0.0.0.0:9000"
            [tokens]
            "t1" = "farm"
            [[actors]]
            alias = "farm"
            role = "Producer"
            balance = 100
            [engine]
            max_compartments_per_tx = 39
            "#,
        )
        .unwrap();
        assert_eq!(c.bind.port(), 9000);
        assert_eq!(c.tokens["t1"], "farm");
        assert_eq!(c.actors[0].balance, 100);
        assert_eq!(c.engine.max_compartments_per_tx, Some(39));
        assert_eq!(c.engine.fees.create_fee, 50);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_price() {
        assert!(GatewayConfig::from_toml("bnd = \"x\"").is_err());
        assert!(GatewayConfig::from_toml("[engine.ledger]\ntoken_price_usd = \"0\"").is_err());
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut c = GatewayConfig::default();
        c.apply_overrides(Some("127.0.0.1:1".into()), Some("/tmp/x".into())).unwrap();
        assert_eq!(c.bind.port(), 1);
        assert_eq!(c.data_dir.as_deref(), Some(Path::new("/tmp/x")));
        assert!(c.apply_overrides(Some("nope".into()), None).is_err());
    }
}

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use aeba_core::challenge::{AuthPolicy, DEFAULT_SESSION_TTL_MINUTES};
use aeba_core::enrollment::EnrollmentPolicy;
use aeba_core::image_bank::BankPolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_LISTEN_ADDR: &str = "AEBA_LISTEN_ADDR";
pub const ENV_DATA_DIR: &str = "AEBA_DATA_DIR";
pub const ENV_CONFIG: &str = "AEBA_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid {0}: {1}")]
    Invalid(&'static str, String),
}

/// Service configuration, normally read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub auth: AuthPolicy,
    pub enrollment: EnrollmentPolicy,
    pub bank: BankPolicy,
    /// Allow revising ratings. Off reproduces the original study protocol.
    pub allow_revision: bool,
    pub session_ttl_minutes: i64,
    /// Keys from this many of a user's latest sessions are avoided as keys.
    pub cooldown_sessions: usize,
    pub preview_size: usize,
    pub max_rating_batch: usize,
    /// Offset of the server's calendar day from UTC. Unset means the host's
    /// local offset at startup.
    pub utc_offset_minutes: Option<i32>,
    /// Write a state snapshot after this many events; 0 disables snapshots.
    pub snapshot_every: u64,
    /// Bearer token for `/admin` routes. Admin routes are disabled without one.
    pub admin_token: Option<String>,
    /// Seed for session layouts and rating batches. Unset draws from the OS.
    pub rng_seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            auth: AuthPolicy::study(),
            enrollment: EnrollmentPolicy::default(),
            bank: BankPolicy::default(),
            allow_revision: true,
            session_ttl_minutes: DEFAULT_SESSION_TTL_MINUTES,
            cooldown_sessions: 2,
            preview_size: 16,
            max_rating_batch: 100,
            utc_offset_minutes: None,
            snapshot_every: 1000,
            admin_token: None,
            rng_seed: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.auth
            .validate(true)
            .map_err(|e| ConfigError::Invalid("auth policy", e.to_string()))?;
        self.enrollment
            .validate()
            .map_err(|e| ConfigError::Invalid("enrollment policy", e.to_string()))?;
        self.bank
            .validate()
            .map_err(|e| ConfigError::Invalid("bank policy", e.to_string()))?;
        if self.session_ttl_minutes <= 0 {
            return Err(ConfigError::Invalid("session_ttl_minutes", "must be positive".into()));
        }
        if self.preview_size == 0 || self.max_rating_batch == 0 {
            return Err(ConfigError::Invalid("sizes", "preview_size and max_rating_batch must be positive".into()));
        }
        if let Some(m) = self.utc_offset_minutes {
            if m.abs() >= 24 * 60 {
                return Err(ConfigError::Invalid("utc_offset_minutes", m.to_string()));
            }
        }
        Ok(())
    }
}

/// Process-level settings taken from the environment.
#[derive(Debug, Clone)]
pub struct Settings {
    pub listen_addr: SocketAddr,
    pub data_dir: PathBuf,
    pub config: ServiceConfig,
}

impl Settings {
    pub fn from_env() -> Result<Self, ConfigError> {
        let listen = std::env::var(ENV_LISTEN_ADDR).unwrap_or_else(|_| "127.0.0.1:8080".into());
        let listen_addr = listen
            .parse()
            .map_err(|_| ConfigError::Invalid(ENV_LISTEN_ADDR, listen.clone()))?;
        let data_dir = std::env::var_os(ENV_DATA_DIR).map_or_else(|| PathBuf::from("data"), PathBuf::from);
        let config = match std::env::var_os(ENV_CONFIG) {
            Some(path) => ServiceConfig::load(Path::new(&path))?,
            None => ServiceConfig::default(),
        };
        Ok(Self {
            listen_addr,
            data_dir,
            config,
        })
    }
}

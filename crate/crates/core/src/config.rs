//! Versioned application configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alert::{GatewayConfig, Secret};
use crate::model::ModelConfig;
use crate::stream::StreamConfig;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const MIN_SUPPORTED_VERSION: u32 = 1;

/// Overrides `gateway.auth_token` when set and nonempty.
pub const AUTH_TOKEN_ENV: &str = "MRHA_AUTH_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("config version {found} unsupported (supported {MIN_SUPPORTED_VERSION}..={CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Corpus directory holding `manifest.csv` and the sequence files.
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Reports, training history and the delivery log go here.
    pub logs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint: "model.encl".into(),
            logs: "logs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub version: u32,
    #[serde(default = "ModelConfig::desk")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            gateway: GatewayConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl AppConfig {
    /// Parses and validates. The gateway section is only checked by
    /// [`AppConfig::validate_gateway`], since most commands never send SMS.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        // check the version first so a newer file gets a version error
        // rather than an unknown-field error
        let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        let found = raw
            .get("version")
            .ok_or_else(|| ConfigError::Invalid("missing 'version'".into()))?
            .as_u64()
            .ok_or_else(|| ConfigError::Invalid("'version' must be a positive integer".into()))?;
        let found = u32::try_from(found).unwrap_or(u32::MAX);
        if !(MIN_SUPPORTED_VERSION..=CONFIG_VERSION).contains(&found) {
            return Err(ConfigError::Version { found });
        }
        let config: Self = serde_json::from_str(text).map_err(parse_error)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, then applies the environment override for the auth token.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_json(&text)?;
        config.apply_env(|k| std::env::var(k).ok());
        Ok(config)
    }

    /// Only secrets are taken from the environment.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(token) = lookup(AUTH_TOKEN_ENV).filter(|t| !t.is_empty()) {
            self.gateway.auth_token = Secret::new(token);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &str, e: &dyn std::fmt::Display| ConfigError::Invalid(format!("{section}: {e}"));
        self.model.validate().map_err(|e| invalid("model", &e))?;
        self.train.validate().map_err(|e| invalid("train", &e))?;
        self.stream.validate().map_err(|e| invalid("stream", &e))?;
        Ok(())
    }

    pub fn validate_gateway(&self) -> Result<(), ConfigError> {
        self.gateway.validate().map_err(|e| ConfigError::Invalid(format!("gateway: {e}")))
    }

    /// Pretty JSON. The auth token is written as a placeholder.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_error(e: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

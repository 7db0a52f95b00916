//! Service configuration: a flat TOML file, overridden key by key by
//! `MEDIATOR_<KEY>` environment variables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mediator_core::llm::GatewayConfig;
use mediator_core::mediator::DEFAULT_CONTROL_MESSAGE;

pub const ENV_PREFIX: &str = "MEDIATOR_";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("missing required config key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown config key `{0}`")]
    Unknown(String),
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderConfig {
    Mock {
        script: PathBuf,
    },
    OpenAi {
        base_url: String,
        api_key: String,
        model: String,
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub auth_token: String,
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    pub gateway: GatewayConfig,
    pub snapshot_every: u64,
    pub fsync: bool,
    pub control_message: String,
    pub log_level: String,
    pub log_format: LogFormat,
}

const KEYS: &[&str] = &[
    "bind",
    "auth_token",
    "data_dir",
    "provider",
    "mock_script",
    "llm_base_url",
    "llm_api_key",
    "llm_model",
    "llm_timeout_ms",
    "llm_max_retries",
    "llm_deadline_ms",
    "llm_temperature",
    "rate_capacity",
    "rate_per_sec",
    "snapshot_every",
    "fsync",
    "control_message",
    "log_level",
    "log_format",
];

/// Raw key/value pairs after merging file and environment.
struct Raw(BTreeMap<String, toml::Value>);

impl Raw {
    fn str(&self, key: &'static str) -> Result<Option<String>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) if s.trim().is_empty() => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(invalid(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn required(&self, key: &'static str) -> Result<String, ConfigError> {
        self.str(key)?.ok_or(ConfigError::Missing(key))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &'static str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let text = match self.0.get(key) {
            None => return Ok(default),
            Some(toml::Value::String(s)) => s.trim().to_string(),
            Some(toml::Value::Integer(i)) => i.to_string(),
            Some(toml::Value::Float(f)) => f.to_string(),
            Some(toml::Value::Boolean(b)) => b.to_string(),
            Some(other) => return Err(invalid(key, format!("unexpected {}", other.type_str()))),
        };
        text.parse().map_err(|e: T::Err| invalid(key, e.to_string()))
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ServiceConfig {
    /// Loads `path` (if given) and applies overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::File {
                path: p.display().to_string(),
                message: e.to_string(),
            })?,
            None => String::new(),
        };
        Self::from_sources(&text, std::env::vars())
    }

    pub fn from_sources(
        file: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let table: toml::Table = file.parse().map_err(|e: toml::de::Error| ConfigError::File {
            path: "<config>".into(),
            message: e.to_string(),
        })?;
        let mut raw = BTreeMap::new();
        for (key, value) in table {
            if matches!(value, toml::Value::Table(_) | toml::Value::Array(_)) {
                return Err(invalid(&key, "config is flat; tables and arrays are not allowed"));
            }
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::Unknown(key));
            }
            raw.insert(key, value);
        }
        for (name, value) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            if KEYS.contains(&key.as_str()) {
                raw.insert(key, toml::Value::String(value));
            }
        }
        Self::from_raw(&Raw(raw))
    }

    fn from_raw(raw: &Raw) -> Result<Self, ConfigError> {
        let bind = raw.required("bind")?;
        let auth_token = raw.required("auth_token")?;
        let data_dir = PathBuf::from(raw.required("data_dir")?);
        let defaults = GatewayConfig::default();
        let provider = match raw.required("provider")?.as_str() {
            "mock" => ProviderConfig::Mock {
                script: PathBuf::from(raw.required("mock_script")?),
            },
            "openai" => ProviderConfig::OpenAi {
                base_url: raw.required("llm_base_url")?,
                api_key: raw.required("llm_api_key")?,
                model: raw.required("llm_model")?,
                timeout_ms: raw.parsed("llm_timeout_ms", 30_000)?,
            },
            other => return Err(invalid("provider", format!("expected `mock` or `openai`, got `{other}`"))),
        };
        let gateway = GatewayConfig {
            max_retries: raw.parsed("llm_max_retries", defaults.max_retries)?,
            deadline_ms: raw.parsed("llm_deadline_ms", defaults.deadline_ms)?,
            temperature: raw.parsed("llm_temperature", defaults.temperature)?,
            rate_capacity: raw.parsed("rate_capacity", defaults.rate_capacity)?,
            rate_per_sec: raw.parsed("rate_per_sec", defaults.rate_per_sec)?,
            ..defaults
        };
        if gateway.rate_capacity == 0 || !(gateway.rate_per_sec > 0.0) {
            return Err(invalid("rate_per_sec", "rate limit must be positive"));
        }
        let snapshot_every = raw.parsed("snapshot_every", 100u64)?;
        if snapshot_every == 0 {
            return Err(invalid("snapshot_every", "must be positive"));
        }
        let log_format = match raw.str("log_format")?.as_deref() {
            None | Some("text") => LogFormat::Text,
            Some("json") => LogFormat::Json,
            Some(other) => return Err(invalid("log_format", format!("expected `text` or `json`, got `{other}`"))),
        };
        Ok(Self {
            bind,
            auth_token,
            data_dir,
            provider,
            gateway,
            snapshot_every,
            fsync: raw.parsed("fsync", true)?,
            control_message: raw.str("control_message")?.unwrap_or_else(|| DEFAULT_CONTROL_MESSAGE.into()),
            log_level: raw.str("log_level")?.unwrap_or_else(|| "info".into()),
            log_format,
        })
    }
}

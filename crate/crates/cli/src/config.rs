use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sitehazard::gateway::{Backend, GatewayOptions, PriceTable};
use sitehazard::Execution;

use crate::exit::{usage, ExitStatus, Fatal};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_TOKEN_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_RATE_LIMIT: u32 = 60;
pub const DEFAULT_POLITENESS_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(BackendKind::Live),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend {other:?}; expected live or replay")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Live => "live",
            BackendKind::Replay => "replay",
        })
    }
}

/// Keys a config file may set. Anything else is rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    pub fixture_path: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub auth_token_env: Option<String>,
    pub model_name: Option<String>,
    pub rate_limit_rpm: Option<u32>,
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub politeness_delay_ms: Option<u64>,
    pub sequential: Option<bool>,
    pub price_input_per_mtok: Option<f64>,
    pub price_output_per_mtok: Option<f64>,
}

/// Values supplied on the command line or through the environment.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub fixture_path: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub auth_token_env: Option<String>,
    pub model_name: Option<String>,
    pub rate_limit_rpm: Option<u32>,
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub politeness_delay_ms: Option<u64>,
    pub sequential: bool,
}

/// Resolved settings. Holds the name of the token variable, never the token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub backend: BackendKind,
    pub fixture_path: Option<PathBuf>,
    pub endpoint_url: String,
    pub auth_token_env: String,
    pub model_name: String,
    pub rate_limit_rpm: u32,
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    pub politeness_delay_ms: u64,
    pub sequential: bool,
    pub price_input_per_mtok: f64,
    pub price_output_per_mtok: f64,
}

const SECRET_MARKERS: [&str; 6] = ["token", "secret", "password", "passwd", "api_key", "apikey"];
const ALLOWED_SECRET_LOOKALIKES: [&str; 1] = ["auth_token_env"];

fn secret_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    !ALLOWED_SECRET_LOOKALIKES.contains(&k.as_str()) && SECRET_MARKERS.iter().any(|m| k.contains(m))
}

fn secret_value(v: &str) -> bool {
    let v = v.trim();
    v.starts_with("sk-") || v.to_ascii_lowercase().starts_with("bearer ")
}

fn find_secret(table: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if secret_key(k) {
            return Some(path);
        }
        match v {
            toml::Value::String(s) if secret_value(s) => return Some(path),
            toml::Value::Table(t) => {
                if let Some(p) = find_secret(t, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a config file, refusing any file that appears to carry a credential.
pub fn parse_file(text: &str, path: &Path) -> Result<FileConfig, Fatal> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("config file {}: {e}", path.display())))?;
    if let Some(key) = find_secret(&table, "") {
        return Err(usage(format!(
            "config file {} contains a credential at `{key}`; remove it and export the token \
             in the environment variable named by auth_token_env (default {DEFAULT_TOKEN_ENV})",
            path.display()
        )));
    }
    FileConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| usage(format!("config file {}: {e}", path.display())))
}

pub fn load_file(path: &Path) -> Result<FileConfig, Fatal> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
    parse_file(&text, path)
}

impl Config {
    /// Flags and environment first, then the file, then built-in defaults.
    pub fn resolve(over: Overrides, file: FileConfig) -> Result<Self, Fatal> {
        let cfg = Config {
            backend: over.backend.or(file.backend).unwrap_or(BackendKind::Live),
            fixture_path: over.fixture_path.or(file.fixture_path),
            endpoint_url: over
                .endpoint_url
                .or(file.endpoint_url)
                .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
            auth_token_env: over
                .auth_token_env
                .or(file.auth_token_env)
                .unwrap_or_else(|| DEFAULT_TOKEN_ENV.to_string()),
            model_name: over
                .model_name
                .or(file.model_name)
                .unwrap_or_else(|| GatewayOptions::default().model_name),
            rate_limit_rpm: over
                .rate_limit_rpm
                .or(file.rate_limit_rpm)
                .unwrap_or(DEFAULT_RATE_LIMIT),
            corpus_dir: over
                .corpus_dir
                .or(file.corpus_dir)
                .unwrap_or_else(|| PathBuf::from("corpus")),
            output_dir: over
                .output_dir
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            politeness_delay_ms: over
                .politeness_delay_ms
                .or(file.politeness_delay_ms)
                .unwrap_or(DEFAULT_POLITENESS_MS),
            sequential: over.sequential || file.sequential.unwrap_or(false),
            price_input_per_mtok: file.price_input_per_mtok.unwrap_or(0.0),
            price_output_per_mtok: file.price_output_per_mtok.unwrap_or(0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Fatal> {
        if self.rate_limit_rpm < 1 {
            return Err(usage("rate_limit_rpm must be at least 1"));
        }
        if self.model_name.trim().is_empty() {
            return Err(usage("model_name must not be empty"));
        }
        if !(self.endpoint_url.starts_with("http://") || self.endpoint_url.starts_with("https://")) {
            return Err(usage(format!(
                "endpoint_url {:?} is not an http(s) URL",
                self.endpoint_url
            )));
        }
        if self.auth_token_env.trim().is_empty() {
            return Err(usage("auth_token_env must name an environment variable"));
        }
        if self.price_input_per_mtok < 0.0 || self.price_output_per_mtok < 0.0 {
            return Err(usage("prices must not be negative"));
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn politeness(&self) -> Duration {
        Duration::from_millis(self.politeness_delay_ms)
    }

    pub fn gateway_options(&self) -> GatewayOptions {
        GatewayOptions {
            model_name: self.model_name.clone(),
            rate_limit_rpm: self.rate_limit_rpm,
            prices: PriceTable {
                input_per_token: self.price_input_per_mtok / 1e6,
                output_per_token: self.price_output_per_mtok / 1e6,
            },
            ..Default::default()
        }
    }

    pub fn fixture(&self) -> Result<&Path, Fatal> {
        self.fixture_path
            .as_deref()
            .ok_or_else(|| usage("this backend needs a fixture file; pass --fixture or set fixture_path"))
    }

    pub fn backend(&self) -> Result<Backend, Fatal> {
        Ok(match self.backend {
            BackendKind::Live => Backend::Live {
                endpoint_url: self.endpoint_url.clone(),
                auth_token_env: self.auth_token_env.clone(),
            },
            BackendKind::Replay => Backend::Replay {
                fixture_path: self.fixture()?.to_path_buf(),
                strict: true,
            },
        })
    }

    /// Creates `dir`, reporting failure as a configuration error.
    pub fn ensure_dir(dir: &Path) -> Result<(), Fatal> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Fatal::new(ExitStatus::Usage, format!("cannot create {}: {e}", dir.display())))
    }
}

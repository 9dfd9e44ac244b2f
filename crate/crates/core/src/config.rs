//! Engine configuration: evolution thresholds, retrieval counts, backend
//! settings, ingestion knobs, and server binding.
//!
//! Precedence when resolving a final config: CLI flag > env var > config
//! file > built-in default. Resolution is a pure function over an explicit
//! env map so every field is unit-testable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When the hierarchical flow operator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rk3Mode {
    /// Only on an explicit `evolve` call.
    Manual,
    /// Automatically at the end of every ingested session.
    AfterEachSession,
}

/// Thresholds and caps governing the evolution operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    /// Evidence count that triggers an edge-theory update.
    pub theta_inf: u64,
    /// Evidence count that triggers a node-theory synthesis.
    pub theta_sum: u64,
    /// Maximum items kept by projection-selection.
    pub projection_cap_k: usize,
    pub rk3_mode: Rk3Mode,
    /// Safety cap on hierarchical flow passes.
    pub max_passes: u32,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            theta_inf: 3,
            theta_sum: 6,
            projection_cap_k: 12,
            rk3_mode: Rk3Mode::Manual,
            max_passes: 5,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_inf == 0 || self.theta_sum == 0 {
            return Err(Error::InvalidConfig("thresholds must be positive".into()));
        }
        if self.theta_sum < self.theta_inf {
            return Err(Error::InvalidConfig(format!(
                "theta_sum {} < theta_inf {}",
                self.theta_sum, self.theta_inf
            )));
        }
        Ok(())
    }
}

/// Retrieval counts and section switches for context assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub n_facts: usize,
    pub n_conclusions: usize,
    pub n_entities: usize,
    pub entity_min_cos: f64,
    pub include_l0: bool,
    pub include_l1: bool,
    pub include_l2: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_facts: 5,
            n_conclusions: 30,
            n_entities: 3,
            entity_min_cos: 0.5,
            include_l0: true,
            include_l1: true,
            include_l2: true,
        }
    }
}

/// Which backend implementation serves nonlinear transformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Mock,
    Remote,
}

/// Backend provider settings. Model identity and credentials are
/// configuration, never code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub model: String,
    pub embed_model: String,
    pub base_url: String,
    /// Read from RGMEM_API_KEY; never written to config files.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub embed_dim: usize,
    /// Maximum concurrent remote calls.
    pub max_concurrent: usize,
    /// Token-bucket refill rate for remote calls.
    pub requests_per_minute: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Mock,
            model: "gpt-4.1-mini".into(),
            embed_model: "text-embedding-3-small".into(),
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            embed_dim: 64,
            max_concurrent: 4,
            requests_per_minute: 120,
        }
    }
}

/// Dialogue segmentation and synthesis knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestionConfig {
    pub max_window_turns: usize,
    pub parallelism: usize,
}

impl Default for IngestionConfig {
    fn default() -> Self {
        Self { max_window_turns: 10, parallelism: 4 }
    }
}

/// HTTP service binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Optional bearer token required on every request when set.
    pub bearer_token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8077".into(), bearer_token: None }
    }
}

/// Top-level engine configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub evolution: EvolutionConfig,
    pub retrieval: RetrievalConfig,
    pub backend: BackendConfig,
    pub ingestion: IngestionConfig,
    pub server: ServerConfig,
    pub data_dir: PathBuf,
    /// Optional seed-taxonomy file; built-in categories when absent.
    pub taxonomy_path: Option<PathBuf>,
    /// Snapshot every N log records.
    pub snapshot_every: u64,
    pub fsync_on_append: bool,
}

/// CLI-level overrides applied with highest precedence.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub data_dir: Option<PathBuf>,
    pub backend_mode: Option<BackendMode>,
    pub theta_inf: Option<u64>,
    pub theta_sum: Option<u64>,
    pub include_l0: Option<bool>,
    pub include_l1: Option<bool>,
    pub include_l2: Option<bool>,
    pub bind: Option<String>,
}

impl EngineConfig {
    fn base() -> Self {
        Self {
            evolution: EvolutionConfig::default(),
            retrieval: RetrievalConfig::default(),
            backend: BackendConfig::default(),
            ingestion: IngestionConfig::default(),
            server: ServerConfig::default(),
            data_dir: PathBuf::from("data"),
            taxonomy_path: None,
            snapshot_every: 500,
            fsync_on_append: true,
        }
    }

    /// Parse a TOML config file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: EngineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.evolution.validate()?;
        Ok(cfg)
    }

    /// Resolve the effective config from an optional file, an env map, and
    /// CLI overrides, in ascending precedence over built-in defaults.
    pub fn resolve(
        file: Option<&str>,
        env: &BTreeMap<String, String>,
        cli: &CliOverrides,
    ) -> Result<Self> {
        let mut cfg = match file {
            Some(text) => Self::from_toml(text)?,
            None => Self::base(),
        };
        if let Some(v) = env.get("RGMEM_API_KEY") {
            cfg.backend.api_key = Some(v.clone());
        }
        if let Some(v) = env.get("RGMEM_BASE_URL") {
            cfg.backend.base_url = v.clone();
        }
        if let Some(v) = env.get("RGMEM_MODEL") {
            cfg.backend.model = v.clone();
        }
        if let Some(v) = env.get("RGMEM_EMBED_MODEL") {
            cfg.backend.embed_model = v.clone();
        }
        if let Some(v) = &cli.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = cli.backend_mode {
            cfg.backend.mode = v;
        }
        if let Some(v) = cli.theta_inf {
            cfg.evolution.theta_inf = v;
        }
        if let Some(v) = cli.theta_sum {
            cfg.evolution.theta_sum = v;
        }
        if let Some(v) = cli.include_l0 {
            cfg.retrieval.include_l0 = v;
        }
        if let Some(v) = cli.include_l1 {
            cfg.retrieval.include_l1 = v;
        }
        if let Some(v) = cli.include_l2 {
            cfg.retrieval.include_l2 = v;
        }
        if let Some(v) = &cli.bind {
            cfg.server.bind = v.clone();
        }
        cfg.evolution.validate()?;
        Ok(cfg)
    }

    /// Load from the conventional locations: explicit path, else ./rgmem.toml
    /// if present, else defaults; then env and CLI overrides.
    pub fn load(config_path: Option<&Path>, cli: &CliOverrides) -> Result<Self> {
        let file = match config_path {
            Some(p) => Some(std::fs::read_to_string(p)?),
            None => {
                let default = Path::new("rgmem.toml");
                if default.exists() {
                    Some(std::fs::read_to_string(default)?)
                } else {
                    None
                }
            }
        };
        let env: BTreeMap<String, String> = std::env::vars().collect();
        Self::resolve(file.as_deref(), &env, cli)
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "INTENTD_CONFIG";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_EVENT_LOG: &str = "events.jsonl";

/// Settings for `intentd serve`. Every field may come from the JSON file
/// named by `INTENTD_CONFIG` or `--config`; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: Option<String>,
    pub checkpoint: Option<PathBuf>,
    /// `None` selects the bundled registry.
    pub registry: Option<PathBuf>,
    /// Evaluated once at start-up for `/api/metrics`; `"bundled"` or a path.
    pub dataset: Option<String>,
    pub event_log: Option<PathBuf>,
    pub cors_allow_origin: Option<String>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: ServiceConfig) -> Self {
        Self {
            listen: over.listen.or(self.listen),
            checkpoint: over.checkpoint.or(self.checkpoint),
            registry: over.registry.or(self.registry),
            dataset: over.dataset.or(self.dataset),
            event_log: over.event_log.or(self.event_log),
            cors_allow_origin: over.cors_allow_origin.or(self.cors_allow_origin),
        }
    }

    pub fn listen_addr(&self) -> &str {
        self.listen.as_deref().unwrap_or(DEFAULT_LISTEN)
    }

    pub fn event_log_path(&self) -> PathBuf {
        self.event_log
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_EVENT_LOG))
    }
}

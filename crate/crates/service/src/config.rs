//! Service settings, read from an optional JSON file and then overridden by
//! `RELFEED_*` environment variables.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use relfeed_core::session::SessionConfig;
use relfeed_core::{Error, Hyperparameters, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Interactive,
    Simulation,
}

impl Preset {
    pub fn hyperparameters(self) -> Hyperparameters {
        match self {
            Preset::Interactive => Hyperparameters::INTERACTIVE,
            Preset::Simulation => Hyperparameters::SIMULATION,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interactive" => Ok(Preset::Interactive),
            "simulation" => Ok(Preset::Simulation),
            _ => Err(Error::Validation(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    /// Newsgroups-style directory tree to index.
    pub corpus_path: Option<PathBuf>,
    /// Idle time after which a session is evicted from memory.
    pub session_ttl_secs: u64,
    pub preset: Preset,
    /// Operation logs and snapshots; sessions are memory-only without it.
    pub store_dir: Option<PathBuf>,
    /// Snapshot after this many operations.
    pub snapshot_every: u64,
    /// Built frontend assets, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            corpus_path: None,
            session_ttl_secs: 30 * 60,
            preset: Preset::Interactive,
            store_dir: None,
            snapshot_every: 25,
            static_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse {value:?}")))
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "service config",
            detail: e.to_string(),
        })
    }

    /// Applies overrides from `lookup` (normally `std::env::var`).
    pub fn with_env<F>(mut self, lookup: F) -> Result<Self>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(v) = lookup("RELFEED_ADDR") {
            self.addr = v;
        }
        if let Some(v) = lookup("RELFEED_CORPUS") {
            self.corpus_path = Some(v.into());
        }
        if let Some(v) = lookup("RELFEED_SESSION_TTL") {
            self.session_ttl_secs = parse("RELFEED_SESSION_TTL", &v)?;
        }
        if let Some(v) = lookup("RELFEED_PRESET") {
            self.preset = v.parse()?;
        }
        if let Some(v) = lookup("RELFEED_STORE_DIR") {
            self.store_dir = Some(v.into());
        }
        if let Some(v) = lookup("RELFEED_SNAPSHOT_EVERY") {
            self.snapshot_every = parse("RELFEED_SNAPSHOT_EVERY", &v)?;
        }
        if let Some(v) = lookup("RELFEED_STATIC_DIR") {
            self.static_dir = Some(v.into());
        }
        self.validate()?;
        Ok(self)
    }

    /// Defaults, then the file if given, then the process environment.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let base = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        base.with_env(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<()> {
        if self.session_ttl_secs == 0 || self.snapshot_every == 0 {
            return Err(Error::Validation(
                "session_ttl_secs and snapshot_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn ttl(&self) -> Duration {
        Duration::from_secs(self.session_ttl_secs)
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            hyper: self.preset.hyperparameters(),
            ..SessionConfig::default()
        }
    }
}

//! Service configuration, read from TOML and validated before startup.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use redress_core::access::IdentifierPolicy;
use redress_core::auth::{KeyRing, PlatformKey};
use redress_core::engine::EngineSettings;
use redress_core::ephemeral::EphemeralWindow;
use redress_core::minimize::{Minimizer, MinimizerConfig};
use redress_core::model::AccountId;
use redress_core::scope::{shipped_presets, ScopePolicy};
use serde::Deserialize;

const DAY_MS: u64 = 24 * 3600 * 1000;

/// A configuration problem, located by field and, when known, line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}, field `{}`: {}", self.field, self.message),
            None => write!(f, "config field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloodingConfig {
    #[serde(default = "default_flood_threshold")]
    pub threshold: u32,
    #[serde(default = "default_flood_window")]
    pub window_ms: u64,
}

fn default_flood_threshold() -> u32 {
    10
}

fn default_flood_window() -> u64 {
    60_000
}

impl Default for FloodingConfig {
    fn default() -> Self {
        Self {
            threshold: default_flood_threshold(),
            window_ms: default_flood_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub token: String,
    pub account: AccountId,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Snapshot file for engine state. In-memory only when absent.
    #[serde(default)]
    pub persistence_path: Option<PathBuf>,
    /// JSON key store. Required unless fixtures are seeded.
    #[serde(default)]
    pub key_store: Option<PathBuf>,
    /// Honor the `X-Logical-Clock` header.
    #[serde(default)]
    pub harness_mode: bool,
    #[serde(default)]
    pub identifier_policy: IdentifierPolicy,
    #[serde(default = "default_appeal_days")]
    pub appeal_window_days: u64,
    #[serde(default = "default_moderators")]
    pub moderators_per_report: usize,
    #[serde(default = "default_excerpt")]
    pub excerpt_chars: usize,
    #[serde(default)]
    pub flooding: FloodingConfig,
    #[serde(default = "default_window")]
    pub ephemeral: EphemeralWindow,
    /// Extra or overriding scope presets.
    #[serde(default)]
    pub presets: BTreeMap<String, ScopePolicy>,
    #[serde(default)]
    pub minimizer: MinimizerConfig,
    #[serde(default)]
    pub sessions: Vec<SessionEntry>,
}

fn default_appeal_days() -> u64 {
    7
}

fn default_moderators() -> usize {
    1
}

fn default_excerpt() -> usize {
    140
}

fn default_window() -> EphemeralWindow {
    EphemeralWindow::seconds(30).expect("positive")
}

impl Default for ServiceConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    active: String,
    keys: Vec<KeyEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyEntry {
    key_id: String,
    secret_hex: String,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// The key named on the line of `offset`, or the table header above it.
fn field_at(text: &str, offset: usize) -> String {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) => key.trim().to_owned(),
        None => line.trim().trim_matches(|c| c == '[' || c == ']').to_owned(),
    }
}

/// Line of the first `key =` assignment, for errors found after parsing.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == key))
        .map(|i| i + 1)
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| {
            let span = e.span();
            let message = e.message().to_owned();
            let field = match &span {
                Some(s) => field_at(text, s.start),
                None => "<root>".to_owned(),
            };
            let field = match message.strip_prefix("unknown field `") {
                Some(rest) => rest.split('`').next().unwrap_or(&field).to_owned(),
                None => field,
            };
            ConfigError {
                field,
                line: span.map(|s| line_of(text, s.start)),
                message,
            }
        })?;
        config.validate(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            field: "<file>".into(),
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let fail = |field: &str, message: &str| ConfigError {
            field: field.to_owned(),
            line: line_of_key(text, field.rsplit('.').next().unwrap_or(field)),
            message: message.to_owned(),
        };
        if self.appeal_window_days == 0 {
            return Err(fail("appeal_window_days", "must be at least 1"));
        }
        if self.moderators_per_report == 0 {
            return Err(fail("moderators_per_report", "must be at least 1"));
        }
        if self.flooding.threshold == 0 {
            return Err(fail("flooding.threshold", "must be at least 1"));
        }
        if self.flooding.window_ms == 0 {
            return Err(fail("flooding.window_ms", "must be at least 1"));
        }
        if self.excerpt_chars == 0 {
            return Err(fail("excerpt_chars", "must be at least 1"));
        }
        Minimizer::new(self.minimizer.clone()).map_err(|e| ConfigError {
            field: "minimizer".into(),
            line: text.lines().position(|l| l.trim() == "[minimizer]").map(|i| i + 1),
            message: e.to_string(),
        })?;
        for s in &self.sessions {
            if s.token.trim().is_empty() {
                return Err(fail("sessions.token", "must not be empty"));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> EngineSettings {
        let mut presets: BTreeMap<String, ScopePolicy> =
            shipped_presets().into_iter().map(|p| (p.name, p.policy)).collect();
        presets.extend(self.presets.clone());
        EngineSettings {
            appeal_window_ms: self.appeal_window_days * DAY_MS,
            identifier_policy: self.identifier_policy,
            flood_threshold: self.flooding.threshold,
            flood_window_ms: self.flooding.window_ms,
            moderators_per_report: self.moderators_per_report,
            presets,
            default_ephemeral: self.ephemeral,
            excerpt_chars: self.excerpt_chars,
        }
    }

    pub fn minimizer(&self) -> Minimizer {
        Minimizer::new(self.minimizer.clone()).expect("validated at parse time")
    }

    /// Reads the key store, or falls back to the fixture key when allowed.
    pub fn key_ring(&self, allow_fixture_key: bool) -> Result<KeyRing, ConfigError> {
        let Some(path) = &self.key_store else {
            if allow_fixture_key {
                return Ok(redress_core::fixtures::key_ring());
            }
            return Err(ConfigError {
                field: "key_store".into(),
                line: None,
                message: "required unless --seed-fixtures is given".into(),
            });
        };
        let err = |message: String| ConfigError {
            field: "key_store".into(),
            line: None,
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        let file: KeyFile = serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let mut keys = Vec::new();
        for k in &file.keys {
            keys.push(PlatformKey::from_hex(k.key_id.clone(), &k.secret_hex).map_err(|e| err(format!("key {}: {e}", k.key_id)))?);
        }
        let active_pos = keys
            .iter()
            .position(|k| k.key_id() == file.active)
            .ok_or_else(|| err(format!("active key {:?} not in the store", file.active)))?;
        let active = keys.remove(active_pos);
        let mut ring = KeyRing::new(active);
        for k in keys {
            ring.insert_retired(k);
        }
        Ok(ring)
    }
}

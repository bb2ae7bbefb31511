//! Run configuration: one TOML file with sections, plus `key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::SceneSpec;
use crate::train::TrainingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override '{0}' (expected section.key=value)")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory written by `gen-scene` and read by the other commands.
    pub dataset: PathBuf,
    /// Root for training runs, renders and reports.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/scene"),
            output: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Cameras on the orbit path.
    pub orbit_views: usize,
    /// Also write linear PFM next to each PNG.
    pub write_pfm: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            orbit_views: 8,
            write_pfm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Score every `stride`-th (frame, camera) pair of a split.
    pub stride: usize,
    /// Rays in the fixed held-out set whose loss is logged after training.
    pub held_out_rays: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            held_out_rays: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub paths: PathsConfig,
    pub scene: SceneSpec,
    pub train: TrainingConfig,
    pub render: RenderConfig,
    pub eval: EvalConfig,
}

/// Sets `a.b.c = value` inside a TOML table, creating tables on the way.
fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(key.to_string()));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(key.to_string()))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a bare string.
fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, or starts from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                path: p.display().to_string(),
                message: e.to_string(),
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.paths.dataset.as_os_str().is_empty() || self.paths.output.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("paths.dataset and paths.output must be set".into()));
        }
        if self.render.orbit_views == 0 {
            return Err(ConfigError::Invalid("render.orbit_views must be positive".into()));
        }
        if self.eval.stride == 0 || self.eval.held_out_rays == 0 {
            return Err(ConfigError::Invalid("eval.stride and eval.held_out_rays must be positive".into()));
        }
        Ok(())
    }

    /// The effective configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

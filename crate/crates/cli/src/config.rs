//! Layered configuration: defaults, then a TOML file, then `--set`
//! overrides, then dedicated flags.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use drivesel::active::ActiveConfig;
use drivesel::synthworld::{ToyConfig, WorldConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out clips generated next to the pool by `gen`.
    pub heldout_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { heldout_n: 1000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub world: WorldConfig,
    pub active: ActiveConfig,
    pub toy: ToyConfig,
    pub eval: EvalConfig,
}

/// Collects the layers before they are resolved into a [`CliConfig`].
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    table: Table,
}

impl ConfigBuilder {
    pub fn from_file(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(UsageError)?;
        let table: Table = text
            .parse()
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(UsageError)?;
        Ok(ConfigBuilder { table })
    }

    /// Applies a `section.key=value` override. The value is read as a TOML
    /// value and falls back to a plain string.
    pub fn set(&mut self, assignment: &str) -> anyhow::Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| UsageError(anyhow!("override `{assignment}` is not key=value")))?;
        self.insert(key.trim(), parse_value(raw.trim()))
    }

    pub fn insert(&mut self, key: &str, value: Value) -> anyhow::Result<()> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| UsageError(anyhow!("override key `{key}` must be section.field")))?;
        let entry = self
            .table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(t) = entry else {
            bail!(UsageError(anyhow!("`{section}` is not a table")));
        };
        t.insert(field.to_string(), value);
        Ok(())
    }

    pub fn resolve(self) -> anyhow::Result<CliConfig> {
        CliConfig::deserialize(Value::Table(self.table))
            .context("invalid configuration")
            .map_err(|e| UsageError(e).into())
    }
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Prints the resolved configuration to stderr.
pub fn echo(config: &CliConfig) -> anyhow::Result<()> {
    let text = toml::to_string(config).context("serializing config")?;
    eprintln!("# resolved config\n{text}");
    Ok(())
}

//! Config-file merging: a flag left unset falls back to the config file's
//! `[subcommand]` section, then to the built-in default.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// The `[section]` table for one subcommand, or an empty table.
pub struct FileSection {
    table: toml::Table,
}

impl FileSection {
    pub fn load(config: Option<&Path>, section: &str) -> Result<FileSection> {
        let table = match config {
            None => toml::Table::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| birm_core::Error::io(path, e))?;
                let root: toml::Table = text
                    .parse()
                    .with_context(|| format!("parse config {}", path.display()))?;
                match root.get(section) {
                    Some(toml::Value::Table(t)) => t.clone(),
                    Some(other) => anyhow::bail!(
                        "config section [{section}] is a {}, expected a table",
                        other.type_str()
                    ),
                    None => toml::Table::new(),
                }
            }
        };
        Ok(FileSection { table })
    }

    /// Flag value if given, else the file's `key`, else `default`.
    pub fn resolve<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.table.get(key) {
            None => Ok(default),
            Some(value) => value
                .clone()
                .try_into()
                .with_context(|| format!("config key {key:?} has the wrong type")),
        }
    }

    /// Same, for keys with no built-in default.
    pub fn resolve_required<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.table.get(key) {
            None => anyhow::bail!("missing required option {key:?} (flag or config file)"),
            Some(value) => value
                .clone()
                .try_into()
                .with_context(|| format!("config key {key:?} has the wrong type")),
        }
    }

    /// Optional value: flag, else file, else none.
    pub fn resolve_optional<T: DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>> {
        if let Some(v) = flag {
            return Ok(Some(v));
        }
        match self.table.get(key) {
            None => Ok(None),
            Some(value) => Ok(Some(value.clone().try_into().with_context(|| {
                format!("config key {key:?} has the wrong type")
            })?)),
        }
    }
}

/// Create the run directory and echo the resolved config into it as
/// `config.toml` under `[section]`, ready to be re-fed via `--config`.
pub fn echo_config<T: Serialize>(out_dir: &Path, section: &str, config: &T) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| birm_core::Error::io(out_dir, e))?;
    let value =
        toml::Value::try_from(config).context("serialize resolved config")?;
    let mut root = toml::Table::new();
    root.insert(section.to_string(), value);
    let path = out_dir.join("config.toml");
    std::fs::write(&path, toml::to_string_pretty(&root).context("encode config")?)
        .map_err(|e| birm_core::Error::io(&path, e))?;
    Ok(())
}

pub fn out_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}

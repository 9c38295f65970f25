//! JSON config files. Every subcommand accepts `--config <file>` holding the
//! same keys as its long flags (with `_` for `-`); flags given on the
//! command line take precedence.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
}

/// Fills every unset flag of `$args` from the config file, if one is given.
macro_rules! overlay {
    ($args:ident: $ty:ty; $($field:ident),+ $(,)?) => {
        if let Some(path) = $args.config.clone() {
            let file: $ty = $crate::config::load(&path)?;
            $( if $args.$field.is_none() { $args.$field = file.$field; } )+
        }
    };
}
pub(crate) use overlay;

/// Common header of every JSON report.
#[derive(Debug, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
}

impl Header {
    pub fn new(seed: Option<u64>) -> Self {
        Self { tool: "matting", version: env!("CARGO_PKG_VERSION"), seed }
    }
}

pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().with_context(|| format!("missing required option --{flag} (flag or config key)"))
}

pub fn existing_dir(v: &Option<std::path::PathBuf>, flag: &str) -> Result<std::path::PathBuf> {
    let p = required(v, flag)?;
    anyhow::ensure!(p.is_dir(), "--{flag}: {} is not a directory", p.display());
    Ok(p)
}

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use casimir_lab::constants::CONSTANTS_VERSION;
use serde::{Deserialize, Serialize};

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub constants_version: String,
    pub tool_version: String,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            constants_version: CONSTANTS_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.display().to_string());
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| usage(format!("manifest {} is malformed: {e}", path.display())))?;
        Ok(m)
    }

    /// Writes beside `primary` as `<primary>.manifest.json`, or to stderr
    /// when the primary output is stdout.
    pub fn emit(&self, primary: Option<&Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        match primary {
            Some(p) => {
                let path = manifest_path(p);
                std::fs::write(&path, text)
                    .with_context(|| format!("writing manifest {}", path.display()))?;
            }
            None => std::io::stderr().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// A configuration or usage problem, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn require_command(m: &RunManifest, command: &str) -> Result<()> {
    if m.command != command {
        bail!(usage(format!(
            "manifest was written by '{}', not '{command}'",
            m.command
        )));
    }
    Ok(())
}

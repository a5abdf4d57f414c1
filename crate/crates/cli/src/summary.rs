use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

/// File name of the per-run summary written into each output directory.
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

/// What a subcommand did: status, files written and headline numbers. On
/// failure `partial` marks that some outputs exist but are incomplete.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub status: Status,
    pub partial: bool,
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub details: Map<String, Value>,
}

impl RunSummary {
    pub fn new(command: &str) -> Self {
        RunSummary {
            command: command.to_string(),
            status: Status::Ok,
            partial: false,
            error: None,
            outputs: Vec::new(),
            details: Map::new(),
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.details.insert(key.to_string(), v);
    }

    pub fn fail(&mut self, err: &anyhow::Error) {
        self.status = Status::Error;
        self.partial = !self.outputs.is_empty();
        self.error = Some(format!("{err:#}"));
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

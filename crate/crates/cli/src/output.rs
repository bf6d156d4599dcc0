//! Report and table writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Report envelope: schema version, resolved config, command result.
#[derive(Serialize)]
struct Report<'a, R> {
    schema_version: u32,
    config: &'a ExperimentConfig,
    result: R,
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `report.json`.
    pub fn report<R: Serialize>(&self, cfg: &ExperimentConfig, result: R) -> Result<PathBuf, CliError> {
        let path = self.path("report.json");
        let report = Report { schema_version: cfg.schema_version, config: cfg, result };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Writes a CSV table; the header is written even without rows.
    pub fn table(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip formatting of a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

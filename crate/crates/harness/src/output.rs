//! CSV and manifest writers. Column order is fixed by the row structs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::HarnessError;

/// Bumped whenever a CSV header changes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub schema_version: u32,
    pub master_seed: u64,
    pub quick: bool,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    pub config: &'a ExperimentConfig,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, quick: bool, wall: Duration, outputs: &[PathBuf]) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            schema_version: SCHEMA_VERSION,
            master_seed: config.master_seed,
            quick,
            wall_time_secs: wall.as_secs_f64(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// One line per (learner, D, noise type, regularizer) with a mean and
/// standard error column pair per training size.
pub fn write_table1_wide(path: &Path, cells: &[crate::experiments::Table1Cell]) -> Result<(), HarnessError> {
    let mut sizes: Vec<usize> = cells.iter().map(|c| c.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["learner".to_string(), "dim".into(), "noise".into(), "regularizer".into()];
    for n in &sizes {
        header.push(format!("mean_n{n}"));
        header.push(format!("stderr_n{n}"));
    }
    w.write_record(&header)?;
    let mut keys: Vec<_> = cells.iter().map(|c| (c.learner, c.dim, c.noise, c.regularizer)).collect();
    keys.dedup();
    for k in keys {
        let mut rec = vec![
            serde_json::to_value(k.0)?.as_str().unwrap_or_default().to_string(),
            k.1.to_string(),
            k.2.label().to_string(),
            serde_json::to_value(k.3)?.as_str().unwrap_or_default().to_string(),
        ];
        for &n in &sizes {
            match cells.iter().find(|c| (c.learner, c.dim, c.noise, c.regularizer) == k && c.n == n) {
                Some(c) => {
                    rec.push(format!("{:e}", c.mean_test_l2));
                    rec.push(format!("{:e}", c.stderr));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

//! Command-line front end: configuration, check runners and the output layout.

pub mod checks;
pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checks::run_check;
use crate::config::{ConfigError, Experiment};

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub pass: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub seed: u64,
    pub checks: BTreeMap<String, CheckSummary>,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    std::fs::write(path, bytes).map_err(|source| RunError::Output { path: path.to_path_buf(), source })
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

/// Run the listed checks in order, writing `<check>.json`, `<check>.csv`, any
/// artifacts and `summary.json` into `out`. A check that errors is recorded
/// as failed with its message.
pub fn run(exp: &Experiment, checks: &[String], out: &Path) -> Result<Summary, RunError> {
    std::fs::create_dir_all(out).map_err(|source| RunError::Output { path: out.to_path_buf(), source })?;
    let mut summary = Summary { schema_version: config::SCHEMA_VERSION, seed: exp.config.seed, checks: BTreeMap::new() };
    for name in checks {
        let entry = match run_check(name, exp) {
            Ok(outcome) => {
                let r = &outcome.report;
                write_file(&out.join(format!("{name}.json")), &json_bytes(r))?;
                let mut csv = Vec::new();
                r.write_csv(&mut csv).expect("writing to memory");
                write_file(&out.join(format!("{name}.csv")), &csv)?;
                for a in &outcome.artifacts {
                    write_file(&out.join(&a.name), &a.bytes)?;
                }
                CheckSummary { pass: r.pass, max_residual: r.max_residual, tolerance: r.tolerance, error: None }
            }
            Err(e) => {
                CheckSummary { pass: false, max_residual: f64::NAN, tolerance: f64::NAN, error: Some(e.to_string()) }
            }
        };
        summary.checks.insert(name.clone(), entry);
    }
    write_file(&out.join("summary.json"), &json_bytes(&summary))?;
    Ok(summary)
}

//! Output plumbing shared by the commands: CSV tables at 17 significant
//! digits, JSON sidecars with a content hash of the effective config, gate
//! bookkeeping and config loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A numeric table written as one CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_columns(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Format used for every number in every CSV.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pass/fail check with its measured value and limit.
#[derive(Debug, Clone, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    pub detail: String,
}

impl Gate {
    /// Passes when value <= limit.
    pub fn at_most(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, limit, pass: value <= limit, detail: detail.into() }
    }

    /// Passes when value > limit.
    pub fn above(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, limit, pass: value > limit, detail: detail.into() }
    }

    pub fn flag(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value: if pass { 1.0 } else { 0.0 }, limit: 1.0, pass, detail: detail.into() }
    }
}

/// Everything a command produced.
#[derive(Debug, Default)]
pub struct Report {
    pub tables: Vec<(String, Table)>,
    pub gates: Vec<Gate>,
    pub metrics: BTreeMap<String, Value>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    pub fn metric(&mut self, key: &str, v: impl Serialize) {
        self.metrics.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }
}

/// Git-style content hash (sha256 of "blob <len>\0" + bytes) of the
/// canonical JSON form of a config.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Reads a JSON config, or falls back to the defaults. Unknown keys are an error.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| fmt17(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every table as `<name>.csv` with a `<name>.csv.json` sidecar, and
/// `summary.json` with the gates and metrics. Returns the written paths.
pub fn write_report<C: Serialize>(out: &Path, command: &str, config: &C, report: &Report) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let hash = config_hash(config)?;
    let mut written = Vec::new();
    for (name, table) in &report.tables {
        let path = out.join(format!("{name}.csv"));
        write_csv(&path, table).with_context(|| format!("writing {}", path.display()))?;
        let side = serde_json::json!({
            "command": command,
            "config_hash": hash,
            "columns": table.columns,
            "rows": table.rows.len(),
            "units": "SI",
        });
        let side_path = out.join(format!("{name}.csv.json"));
        fs::write(&side_path, serde_json::to_string_pretty(&side)? + "\n")?;
        written.push(path);
        written.push(side_path);
    }
    let summary = serde_json::json!({
        "command": command,
        "config": config,
        "config_hash": hash,
        "passed": report.passed(),
        "gates": report.gates,
        "metrics": report.metrics,
    });
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    written.push(path);
    Ok(written)
}

/// `samples` evenly spaced values over [lo, hi].
pub fn linspace(lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    if samples < 2 {
        return vec![lo];
    }
    (0..samples).map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64).collect()
}

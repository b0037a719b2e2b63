//! Provenance stamps, CSV/JSON rendering and atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// What every output carries: the command, the effective configuration and the seed.
pub struct Provenance {
    pub command: &'static str,
    pub seed: Option<u64>,
    /// Effective configuration as TOML.
    pub config: String,
}

impl Provenance {
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.config.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn csv_header(&self) -> String {
        let mut s =
            format!("# moran {VERSION}\n# command: {}\n# config_sha256: {}\n", self.command, self.config_hash());
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed: {seed}");
        }
        for line in self.config.lines() {
            let _ = writeln!(s, "{CONFIG_PREFIX}{line}");
        }
        s
    }

    fn json(&self) -> Value {
        json!({
            "version": VERSION,
            "command": self.command,
            "config_sha256": self.config_hash(),
            "seed": self.seed,
            "config": self.config,
        })
    }
}

/// Rectangular output with a mandatory header row.
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// A command result: a table for CSV, a report object for JSON, and the check verdict.
pub struct Output {
    pub table: Table,
    pub report: Value,
    /// `None` for commands without an acceptance check.
    pub pass: Option<bool>,
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Non-finite floats become `null` in JSON and empty fields in CSV.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn render(out: &Output, prov: &Provenance, format: Format) -> Result<String> {
    match format {
        Format::Csv => {
            let mut s = prov.csv_header();
            let _ = writeln!(s, "{}", out.table.columns.join(","));
            for row in &out.table.rows {
                let fields: Vec<String> = row.iter().map(csv_field).collect();
                let _ = writeln!(s, "{}", fields.join(","));
            }
            Ok(s)
        }
        Format::Json => {
            let mut v = json!({ "provenance": prov.json(), "report": out.report });
            if let Some(p) = out.pass {
                v["pass"] = Value::Bool(p);
            }
            Ok(serde_json::to_string_pretty(&v)? + "\n")
        }
    }
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

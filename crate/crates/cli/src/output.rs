//! Result files and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A CSV table with a header row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>, Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Failure::Io(e.to_string()))
    }
}

/// Everything a subcommand produces.
#[derive(Debug, Default)]
pub struct Outcome {
    pub result: Value,
    pub tables: Vec<Table>,
    /// Extra files written verbatim, by name.
    pub files: Vec<(String, Vec<u8>)>,
    pub samples: BTreeMap<String, usize>,
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub params: &'a Value,
    pub seed: u64,
    pub config_digest: Option<&'a str>,
    pub threads: usize,
    pub samples: &'a BTreeMap<String, usize>,
    pub wall_clock_seconds: f64,
    pub files: BTreeMap<String, String>,
    pub results_digest: String,
}

pub struct RunInfo<'a> {
    pub command: &'a str,
    pub params: &'a Value,
    pub seed: u64,
    pub config_digest: Option<&'a str>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

/// Writes `result.json`, the tables, extra files and `manifest.json`.
pub fn write_outcome(
    dir: &Path,
    outcome: &Outcome,
    info: RunInfo<'_>,
) -> Result<Vec<PathBuf>, Failure> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut result = serde_json::to_vec_pretty(&outcome.result)?;
    result.push(b'\n');
    files.push(("result.json".into(), result));
    for t in &outcome.tables {
        files.push((format!("{}.csv", t.name), t.to_bytes()?));
    }
    files.extend(outcome.files.iter().cloned());
    let mut digests = BTreeMap::new();
    let mut combined = Sha256::new();
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        digests.insert(name.clone(), sha256_hex(bytes));
        written.push(path);
    }
    for (name, digest) in &digests {
        combined.update(name.as_bytes());
        combined.update(digest.as_bytes());
    }
    let manifest = Manifest {
        tool: "darnwalk",
        version: env!("CARGO_PKG_VERSION"),
        command: info.command,
        params: info.params,
        seed: info.seed,
        config_digest: info.config_digest,
        threads: info.threads,
        samples: &outcome.samples,
        wall_clock_seconds: info.wall_clock_seconds,
        files: digests,
        results_digest: combined
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    let path = dir.join("manifest.json");
    std::fs::write(&path, bytes)?;
    written.push(path);
    Ok(written)
}

/// Shortest round-trip decimal form of a float.
pub fn num(x: f64) -> String {
    x.to_string()
}

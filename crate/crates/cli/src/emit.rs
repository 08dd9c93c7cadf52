//! Output emission: manifest, CSV tables and per-check reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Outcome of one asserted check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub holds: bool,
    /// Worst slack or best constant, depending on the check.
    pub value: f64,
    pub report: String,
}

/// Everything a run produces, held in memory until emission.
#[derive(Debug, Clone, Default)]
pub struct Emission {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub results: BTreeMap<String, Value>,
    pub checks: BTreeMap<String, CheckOutcome>,
    files: BTreeMap<String, Vec<u8>>,
}

impl Emission {
    pub fn new(command: &str, config: Value, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            ..Self::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|c| c.holds)
    }

    pub fn add_result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.to_string(), to_value(value));
    }

    /// Records a check and its full report as `check_<name>.json`.
    pub fn add_check(&mut self, name: &str, holds: bool, value: f64, report: impl Serialize) {
        let file = format!("check_{name}.json");
        self.add_json(&file, report);
        self.checks.insert(
            name.to_string(),
            CheckOutcome {
                holds,
                value,
                report: file,
            },
        );
    }

    pub fn add_json(&mut self, name: &str, value: impl Serialize) {
        self.files.insert(name.to_string(), json_bytes(&to_value(value)));
    }

    /// Adds a CSV file with a header row, comma separators and LF endings.
    pub fn add_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Emission(e.to_string());
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Emission(e.to_string()))?;
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    pub fn add_raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn file_names(&self) -> impl Iterator<Item = &String> {
        self.files.keys()
    }

    /// The manifest, with a SHA-256 digest of every emitted file.
    pub fn manifest(&self) -> Value {
        let digests: BTreeMap<&String, String> = self
            .files
            .iter()
            .map(|(k, v)| (k, hex::encode(Sha256::digest(v))))
            .collect();
        json!({
            "checks": to_value(&self.checks),
            "command": self.command,
            "config": self.config,
            "files": digests,
            "passed": self.passed(),
            "results": to_value(&self.results),
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        json_bytes(&self.manifest())
    }

    /// Writes every file and the manifest into `out`; on failure the files
    /// written so far are removed again.
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        let created_dir = !out.exists();
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| -> std::io::Result<()> {
            fs::create_dir_all(out)?;
            for (name, bytes) in self.files.iter().chain(std::iter::once((
                &"manifest.json".to_string(),
                &self.manifest_bytes(),
            ))) {
                let path = out.join(name);
                fs::write(&path, bytes)?;
                written.push(path);
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(written),
            Err(e) => {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created_dir {
                    let _ = fs::remove_dir(out);
                }
                Err(CliError::Emission(format!("{}: {e}", out.display())))
            }
        }
    }
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn json_bytes(v: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).unwrap_or_default();
    bytes.push(b'\n');
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_lf_and_shortest_floats() {
        let mut e = Emission::new("solve", json!({}), 0);
        e.add_csv("t.csv", &["a", "b"], &[vec![0.1, 1e-20], vec![2.0, -0.5]]).unwrap();
        let text = String::from_utf8(e.files["t.csv"].clone()).unwrap();
        assert_eq!(text, "a,b\n0.1,1e-20\n2.0,-0.5\n");
    }

    #[test]
    fn manifest_keys_are_sorted() {
        let mut e = Emission::new("oracle", json!({"z": 1, "a": 2}), 3);
        e.add_check("zeta", true, 1.0, json!({}));
        e.add_check("alpha", false, -1.0, json!({}));
        let text = String::from_utf8(e.manifest_bytes()).unwrap();
        assert!(text.find("\"alpha\"").unwrap() < text.find("\"zeta\"").unwrap());
        assert!(text.find("\"checks\"").unwrap() < text.find("\"version\"").unwrap());
        assert!(!e.passed());
    }
}

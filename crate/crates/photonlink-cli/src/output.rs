//! Artifact writers. Every scenario produces a set of CSV tables plus a
//! summary.json (scenario echo, headline numbers) and a manifest.json
//! listing the files written. Output is deterministic: map keys are sorted
//! and nothing records wall-clock time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use photonlink::C64;

use crate::CliError;

/// Collects artifacts for one run and flushes them under the output dir.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunOutput {
    /// The directory is created on the first write, so a run that fails
    /// before producing anything leaves no empty directory behind.
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn ensure_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.dir.display())))
    }

    /// Write one CSV table: a header row then records of equal width.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        self.ensure_dir()?;
        let path = self.dir.join(name);
        let mut writer = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
        writer
            .write_record(header)
            .and_then(|_| {
                for row in rows {
                    writer.write_record(&row)?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Write a density matrix as (row, col, re, im) records.
    pub fn write_density_csv(&mut self, name: &str, rho: &DMatrix<C64>) -> Result<(), CliError> {
        let rows = (0..rho.nrows()).flat_map(|i| (0..rho.ncols()).map(move |j| (i, j)));
        let records: Vec<Vec<String>> = rows
            .map(|(i, j)| {
                vec![
                    i.to_string(),
                    j.to_string(),
                    format!("{:.12e}", rho[(i, j)].re),
                    format!("{:.12e}", rho[(i, j)].im),
                ]
            })
            .collect();
        self.write_csv(name, &["row", "col", "re", "im"], records)
    }

    /// Write summary.json and manifest.json, closing out the run.
    pub fn finish(
        mut self,
        scenario: &str,
        seed: u64,
        parameters: Value,
        results: BTreeMap<String, Value>,
    ) -> Result<PathBuf, CliError> {
        let summary = json!({
            "scenario": scenario,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "parameters": parameters,
            "results": Value::Object(results.into_iter().collect()),
        });
        self.write_json("summary.json", &summary)?;
        self.files.sort_unstable();
        let manifest = json!({ "files": self.files });
        let path = self.dir.join("manifest.json");
        write_json_file(&path, &manifest)?;
        Ok(self.dir)
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        self.ensure_dir()?;
        write_json_file(&self.dir.join(name), value)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn write_json_file(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Format a float for CSV with enough digits to round-trip.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_output_writes_manifest_and_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        let mut out = RunOutput::new(&dir);
        out.write_csv("table.csv", &["a", "b"], vec![vec!["1".into(), "2".into()]])
            .unwrap();
        let mut results = BTreeMap::new();
        results.insert("answer".to_string(), json!(42));
        out.finish("transfer", 7, json!({"x": 1}), results).unwrap();

        let manifest: Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        let files: Vec<&str> = manifest["files"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(files, vec!["summary.json", "table.csv"]);

        let summary: Value =
            serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["scenario"], "transfer");
        assert_eq!(summary["seed"], 7);
        assert_eq!(summary["results"]["answer"], 42);
        assert!(summary.get("timestamp").is_none());
    }
}

//! CSV and JSON files with provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Stamped on every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// A numeric CSV file with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| CliError::input(path, e))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::input(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.is_empty() || header.iter().any(String::is_empty) {
            return Err(CliError::input(path, "header row has empty column names"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
            return Err(CliError::input(path, format!("duplicate column {dup:?}")));
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| CliError::input(path, e))?;
            let row = record
                .iter()
                .enumerate()
                .map(|(c, field)| match field.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::input(
                        path,
                        format!("row {} column {:?}: not a finite number: {field:?}", i + 1, header[c]),
                    )),
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CliError::input(path, "no data rows"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// The named columns as an `n x k` matrix, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Array2<f64>> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| CliError::input(&self.path, format!("missing column {n:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(Array2::from_shape_fn((self.rows.len(), idx.len()), |(r, c)| self.rows[r][idx[c]]))
    }

    /// A 0/1 column.
    pub fn labels(&self, name: &str) -> Result<Vec<u8>> {
        let c = self
            .column_index(name)
            .ok_or_else(|| CliError::input(&self.path, format!("missing label column {name:?}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| match row[c] {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(CliError::input(&self.path, format!("row {}: label {v} is not 0 or 1", r + 1))),
            })
            .collect()
    }
}

/// Shortest text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub columns: Vec<String>,
    pub sha256: String,
}

/// Collects written CSV files for the `manifest.json` sidecar.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    csv: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| CliError::Output {
            path: dir.clone(),
            source: e,
        })?;
        Ok(Self { dir, csv: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::Output {
            path: path.clone(),
            source: e,
        })?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Pipeline(format!("writing {name}: {e}"));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Pipeline(format!("writing {name}: {e}")))?;
        self.csv.push(FileEntry {
            name: name.into(),
            rows: rows.len(),
            columns: header.to_vec(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        self.write_bytes(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Pipeline(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_lines<T: Serialize>(&self, name: &str, items: &[T]) -> Result<PathBuf> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item).map_err(|e| CliError::Pipeline(e.to_string()))?);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    /// Records the CSV files in `manifest.json`. Entries for other files
    /// already listed there, from earlier stages, are kept.
    pub fn finish(self, provenance: &Provenance) -> Result<()> {
        if self.csv.is_empty() {
            return Ok(());
        }
        let path = self.path("manifest.json");
        let mut files: BTreeMap<String, serde_json::Value> = fs::read_to_string(&path)
            .ok()
            .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
            .and_then(|v| v.get("files").cloned())
            .and_then(|f| serde_json::from_value(f).ok())
            .unwrap_or_default();
        for f in &self.csv {
            let mut entry = serde_json::to_value(f).expect("entry serializes");
            entry["provenance"] = serde_json::to_value(provenance).expect("provenance serializes");
            files.insert(f.name.clone(), entry);
        }
        self.write_json("manifest.json", &serde_json::json!({ "files": files }))?;
        Ok(())
    }
}

/// A JSON document with a `provenance` member added at the top level.
pub fn with_provenance<T: Serialize>(value: &T, provenance: &Provenance) -> serde_json::Value {
    let mut v = serde_json::to_value(value).expect("output serializes");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert(
            "provenance".into(),
            serde_json::to_value(provenance).expect("provenance serializes"),
        );
    }
    v
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_cells_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b\n1,2\n3,oops\n").unwrap();
        let err = Table::read(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("row 2 column \"b\""), "{err}");
        fs::write(&path, "a,b\n1,2,3\n").unwrap();
        assert_eq!(Table::read(&path).unwrap_err().exit_code(), 2);
        fs::write(&path, "a,a\n1,2\n").unwrap();
        assert!(Table::read(&path).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn floats_roundtrip_through_text() {
        for v in [0.1, -1e-300, 1.0 / 3.0, 2.5e17, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}

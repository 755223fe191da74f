//! CSV matrices and edge lists, run manifests and file digests.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a numeric matrix, observations as rows. A first row containing any
/// non-numeric field is taken as a header and skipped.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, 0, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(csv_err(path, line, format!("not a number: {e}"))),
        };
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(CliError::Core(sns_core::Error::NonFiniteInput(format!(
                "{}: line {line}, column {bad}",
                path.display()
            ))));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(csv_err(path, line, format!("expected {w} fields, found {}", values.len())))
            }
            Some(_) => {}
        }
        rows.push(values);
    }
    let p = width.ok_or_else(|| csv_err(path, 0, "no data rows"))?;
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))
}

/// Writes `m` with a header `x0,…,x{p−1}` and 17 significant digits.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut out = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_number(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Edge list `i,j` with `i < j`, 0-based vertex indices.
pub fn write_edges(path: &Path, edges: &BTreeSet<(usize, usize)>) -> Result<(), CliError> {
    let mut out = String::from("i,j\n");
    for (i, j) in edges {
        out.push_str(&format!("{i},{j}\n"));
    }
    write_file(path, &out)
}

#[cfg(test)]
pub fn read_edges(path: &Path) -> Result<BTreeSet<(usize, usize)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut edges = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == "i,j") {
            continue;
        }
        let parts: Vec<_> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| s.parse::<usize>().map_err(|e| csv_err(path, idx as u64 + 1, e.to_string()));
        if parts.len() != 2 {
            return Err(csv_err(path, idx as u64 + 1, "expected two fields"));
        }
        let (i, j) = (parse(parts[0])?, parse(parts[1])?);
        edges.insert((i.min(j), i.max(j)));
    }
    Ok(edges)
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    write_file(path, contents)
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Written as `manifest.json` next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub prng: String,
    pub version: String,
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileDigest>,
    /// Outputs that hold timings and are not expected to reproduce.
    #[serde(default)]
    pub volatile: Vec<PathBuf>,
    pub notes: serde_json::Value,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Manifest(e.to_string()))?;
        write_file(&path, &(text + "\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 2.5e10, f64::MIN_POSITIVE, -0.0]);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn header_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_text(&path, "1,2\n3,4\n").unwrap();
        assert_eq!(read_matrix(&path).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        write_text(&path, "a, b\n1,2\n").unwrap();
        assert_eq!(read_matrix(&path).unwrap(), DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn ragged_rows_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_text(&path, "1,2\n3,4\n5\n").unwrap();
        let err = read_matrix(&path).unwrap_err();
        assert_eq!(err.category(), "csv");
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn edges_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let e: BTreeSet<_> = [(0, 3), (1, 2)].into_iter().collect();
        write_edges(&path, &e).unwrap();
        assert_eq!(read_edges(&path).unwrap(), e);
    }
}

//! Columnar and matrix file writers with content digests.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so the
//! decimal text files reload bit-exactly and identical runs produce
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::pipeline::{sha256_hex, PipelineError, TomographyPayload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

/// Writes files under one directory and records their digests.
pub struct OutputWriter {
    dir: PathBuf,
    format: OutputFormat,
    files: BTreeMap<String, String>,
}

impl OutputWriter {
    pub fn new(dir: impl Into<PathBuf>, format: OutputFormat) -> Self {
        Self {
            dir: dir.into(),
            format,
            files: BTreeMap::new(),
        }
    }

    pub fn format(&self) -> OutputFormat {
        self.format
    }

    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.dir).map_err(|source| PipelineError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| PipelineError::Io { path, source })?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<(), PipelineError> {
        let bytes = serde_json::to_vec_pretty(value).expect("payload serializes");
        self.write_bytes(&format!("{stem}.json"), &bytes)
    }

    /// Columnar numeric file in the selected format.
    pub fn write_columns(
        &mut self,
        stem: &str,
        headers: &[&str],
        columns: &[&[f64]],
    ) -> Result<(), PipelineError> {
        assert_eq!(headers.len(), columns.len());
        let rows = columns.first().map_or(0, |c| c.len());
        match self.format {
            OutputFormat::Csv => {
                let mut text = String::new();
                let _ = writeln!(text, "{}", headers.join(","));
                for r in 0..rows {
                    let line: Vec<String> =
                        columns.iter().map(|c| format!("{}", c[r])).collect();
                    let _ = writeln!(text, "{}", line.join(","));
                }
                self.write_bytes(&format!("{stem}.csv"), text.as_bytes())
            }
            OutputFormat::Json => {
                let doc = serde_json::json!({
                    "columns": headers,
                    "data": (0..rows)
                        .map(|r| columns.iter().map(|c| c[r]).collect::<Vec<f64>>())
                        .collect::<Vec<_>>(),
                });
                self.write_json(stem, &doc)
            }
        }
    }

    /// Dense real matrix, one row per line in csv mode.
    pub fn write_matrix(&mut self, stem: &str, rows: &[Vec<f64>]) -> Result<(), PipelineError> {
        match self.format {
            OutputFormat::Csv => {
                let mut text = String::new();
                for row in rows {
                    let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                    let _ = writeln!(text, "{}", line.join(","));
                }
                self.write_bytes(&format!("{stem}.csv"), text.as_bytes())
            }
            OutputFormat::Json => {
                let doc = serde_json::json!({ "rows": rows });
                self.write_json(stem, &doc)
            }
        }
    }

    /// Tomography grid: flattened multi-index labels plus complex entries.
    pub fn write_tomography(
        &mut self,
        stem: &str,
        tomo: &TomographyPayload,
    ) -> Result<(), PipelineError> {
        let label = |occ: &Vec<usize>| -> String {
            occ.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(":")
        };
        match self.format {
            OutputFormat::Csv => {
                let mut text = String::from("row,col,re,im\n");
                for (i, li) in tomo.labels.iter().enumerate() {
                    for (j, lj) in tomo.labels.iter().enumerate() {
                        let _ = writeln!(
                            text,
                            "{},{},{},{}",
                            label(li),
                            label(lj),
                            tomo.matrix_re[i][j],
                            tomo.matrix_im[i][j]
                        );
                    }
                }
                let _ = writeln!(text, "# probability_mass,{}", tomo.probability_mass);
                self.write_bytes(&format!("{stem}.csv"), text.as_bytes())
            }
            OutputFormat::Json => self.write_json(stem, tomo),
        }
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Format;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a manifest: {e}", path.display())))
    }
}

/// Output directory whose files are written atomically and hashed.
pub struct OutputDir {
    root: PathBuf,
    format: Format,
    outputs: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(root: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Write {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            format,
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path(name);
        atomic_write(&target, bytes)?;
        self.outputs.push(OutputEntry {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Rows as `stem.csv` or `stem.json` depending on the format flag.
    pub fn write_table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let text = dlpls::io::to_csv_string(rows)?;
                self.write_bytes(&format!("{stem}.csv"), text.as_bytes())
            }
            Format::Json => self.write_json(&format!("{stem}.json"), rows),
        }
    }

    pub fn write_matrix(&mut self, stem: &str, m: &DMatrix<f64>, header: &[String]) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let text = dlpls::io::matrix_to_csv(m, header)?;
                self.write_bytes(&format!("{stem}.csv"), text.as_bytes())
            }
            Format::Json => {
                #[derive(Serialize)]
                struct Table<'a> {
                    columns: &'a [String],
                    rows: Vec<Vec<f64>>,
                }
                let rows = m.row_iter().map(|r| r.iter().copied().collect()).collect();
                self.write_json(&format!("{stem}.json"), &Table { columns: header, rows })
            }
        }
    }

    pub fn finish(self, argv: Vec<String>, config: serde_json::Value, seeds: BTreeMap<String, u64>) -> Result<(), CliError> {
        let manifest = Manifest {
            tool: "dlpls".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv,
            config,
            seeds,
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        atomic_write(&self.root.join(MANIFEST_FILE), text.as_bytes())
    }
}

fn atomic_write(target: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Write {
        path: target.to_path_buf(),
        source,
    };
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = target.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(err)?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(err)?;
    drop(file);
    fs::rename(&tmp, target).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        err(e)
    })
}

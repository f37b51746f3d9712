//! Columnar artifacts: comment-prefixed `# key=value` metadata, one header
//! row, then data rows. All floats are written as `{:.16e}` so reruns are
//! byte-identical and parsing loses nothing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::SCHEMA_VERSION;
use crate::error::{io_at, CliError, Result};

pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct Artifact {
    /// Ordered metadata; always starts with `schema` and `config_sha256`.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Artifact {
    pub fn new(config_hash: &str, columns: &[&str]) -> Self {
        Self {
            meta: vec![
                ("schema".into(), SCHEMA_VERSION.to_string()),
                ("config_sha256".into(), config_hash.to_string()),
            ],
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.push((key.to_string(), value.into()));
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn meta_get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_f64(&self, key: &str, path: &Path) -> Result<f64> {
        let v = self.meta_get(key).ok_or_else(|| {
            CliError::Config(format!("{}: missing # {key}= header", path.display()))
        })?;
        v.parse().map_err(|_| {
            CliError::Config(format!("{}: header {key}={v} is not a number", path.display()))
        })
    }

    pub fn col(&self, name: &str, path: &Path) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| {
            CliError::Config(format!("{}: missing column {name:?}", path.display()))
        })
    }

    pub fn f64_cell(&self, row: usize, col: usize, path: &Path) -> Result<f64> {
        self.rows[row][col].parse().map_err(|_| {
            CliError::Config(format!(
                "{}: line {}: column {} is not a number",
                path.display(),
                self.meta.len() + 2 + row,
                self.columns[col]
            ))
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_at(dir))?;
        }
        fs::write(path, self.render()).map_err(io_at(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let mut meta = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let at = |m: &str| {
                CliError::Config(format!("{}: line {}: {m}", path.display(), i + 1))
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| at("malformed # key=value header"))?;
                meta.push((k.trim().to_string(), v.trim().to_string()));
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            match &columns {
                None => columns = Some(cells),
                Some(cols) => {
                    if cells.len() != cols.len() {
                        return Err(at(&format!(
                            "expected {} columns, found {}",
                            cols.len(),
                            cells.len()
                        )));
                    }
                    rows.push(cells);
                }
            }
        }
        let columns = columns.ok_or_else(|| {
            CliError::Config(format!("{}: no header row", path.display()))
        })?;
        let art = Self {
            meta,
            columns,
            rows,
        };
        let schema = art.meta_get("schema").ok_or_else(|| {
            CliError::Config(format!("{}: missing # schema= header", path.display()))
        })?;
        let major: u32 = schema.parse().map_err(|_| {
            CliError::Config(format!("{}: schema {schema:?} is not a number", path.display()))
        })?;
        if major > SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: schema {major} is newer than this build reads ({SCHEMA_VERSION})",
                path.display()
            )));
        }
        Ok(art)
    }
}

/// Sorted `.csv` files directly under a directory.
pub fn sorted_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_at(dir))?;
    for e in entries {
        let e = e.map_err(io_at(dir))?;
        let p = e.path();
        if p.extension().is_some_and(|x| x == "csv") && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Filesystem-safe, lexicographically temperature-ordered stem for one
/// (qubit, temperature) artifact.
pub fn series_stem(qubit: &str, t_mk: f64) -> String {
    format!("{qubit}_{t_mk:08.3}mK")
}

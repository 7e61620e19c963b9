//! Output files: stamped CSV tables and the run metadata document.
//!
//! Every table starts with `#`-prefixed comment lines carrying the config
//! hash and seed, then a header row. Numeric cells are written with the
//! shortest round-trippable float formatting, so a rerun of the same config
//! reproduces each table byte for byte. Timings never go into tables; they
//! live in `metadata.json` alongside the same hash and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, CliResult};

/// A CSV table with provenance comments.
pub struct Table {
    buf: String,
    cols: usize,
}

impl Table {
    /// Starts a table stamped with the config hash and seed.
    pub fn new(config_hash: &str, seed: u64, header: &[&str]) -> Self {
        let mut buf = String::new();
        writeln!(buf, "# config_hash={config_hash}").expect("string write");
        writeln!(buf, "# seed={seed}").expect("string write");
        writeln!(buf, "{}", header.join(",")).expect("string write");
        Table { buf, cols: header.len() }
    }

    /// Appends one row; cells are written as given.
    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.cols, "row width must match the header");
        writeln!(self.buf, "{}", cells.join(",")).expect("string write");
    }

    pub fn write(&self, path: impl AsRef<Path>) -> CliResult<()> {
        fs::write(path.as_ref(), &self.buf)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.as_ref().display())))
    }
}

/// Shortest decimal that parses back to exactly this value.
pub fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Creates the output directory and returns it.
pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

/// Writes `metadata.json` with pretty formatting.
pub fn write_metadata<T: Serialize>(dir: &Path, metadata: &T) -> CliResult<()> {
    let path = dir.join("metadata.json");
    let body = serde_json::to_string_pretty(metadata)
        .map_err(|e| CliError::Runtime(format!("serializing metadata: {e}")))?;
    fs::write(&path, body + "\n")
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

/// Writes any serializable document as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, body + "\n")
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

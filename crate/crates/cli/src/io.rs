//! Output plumbing: atomic writes and stable JSON/CSV formatting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Writes bytes through a sibling temp file and a rename, so a crash never
/// leaves a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} into place", tmp.display()))?;
    Ok(())
}

/// Serializes pretty JSON with a trailing newline, the byte format every
/// artifact uses.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).context("serializing artifact")?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Joins an output directory with a file name.
pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Minimal CSV accumulator; fields are written with Rust's shortest
/// round-trip float formatting so reruns are byte-identical.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            buf: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

//! On-disk artifacts: content hashes, atomic JSON/JSONL/CSV writers, and
//! their readers.

use std::io::Write;
use std::path::Path;

use conceptsim::actio::{write_atomic, write_npy};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Incremental SHA-256 over length-prefixed parts, so that part boundaries
/// are part of the hash.
#[derive(Default)]
pub struct ContentHash(Sha256);

impl ContentHash {
    pub fn new(domain: &str) -> Self {
        let mut h = ContentHash::default();
        h.bytes(domain.as_bytes());
        h
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn matrix(&mut self, m: &Array2<f64>) -> &mut Self {
        self.bytes(&write_npy(m))
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> &mut Self {
        self.bytes(&serde_json::to_vec(value).expect("hash input serializes"))
    }

    pub fn finish(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn file_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    Ok(write_atomic(path, |f| Ok(f.write_all(bytes)?))?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| file_error(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// One compact JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item)?;
        bytes.push(b'\n');
    }
    write_bytes(path, &bytes)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

/// Quotes a CSV field when it contains a separator, quote, or line break.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Formats an optional number for CSV; missing values are empty fields.
pub fn csv_number(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

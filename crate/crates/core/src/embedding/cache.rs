//! Append-only embedding cache file.
//!
//! Line-JSON. The first line is a versioned header; each following line is
//! one record `{"identity", "text", "dim", "values"}` where `identity` and
//! `text` are SHA-256 digests of the provider identity and the input text.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EmbedError;

/// Stored vectors keyed by text digest.
pub type CachedVectors = Vec<(String, Vec<f64>)>;

pub const CACHE_HEADER: &str = r#"{"format":"karpa-embedding-cache","version":1}"#;

#[derive(Serialize, Deserialize)]
struct Record {
    identity: String,
    text: String,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Debug)]
pub struct CacheFile {
    path: PathBuf,
    writer: BufWriter<File>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheStats {
    pub records: usize,
    pub identities: usize,
    pub bytes: u64,
}

fn cache_err(path: &Path, msg: impl std::fmt::Display) -> EmbedError {
    EmbedError::Cache(format!("{}: {msg}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<Record>, EmbedError> {
    let file = File::open(path).map_err(|e| cache_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(line) => {
            let line = line.map_err(|e| cache_err(path, e))?;
            if line.trim() != CACHE_HEADER {
                return Err(cache_err(path, "unrecognized cache header"));
            }
        }
    }
    let lines: Vec<String> = lines.collect::<Result<_, _>>().map_err(|e| cache_err(path, e))?;
    let last = lines.len().saturating_sub(1);
    let mut records = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = match serde_json::from_str(line) {
            Ok(r) => r,
            // a torn final write is dropped; anything earlier is corruption
            Err(_) if i == last => continue,
            Err(e) => return Err(cache_err(path, format!("record {}: {e}", i + 1))),
        };
        if rec.dim != rec.values.len() {
            return Err(cache_err(path, format!("record {}: dim {} but {} values", i + 1, rec.dim, rec.values.len())));
        }
        records.push(rec);
    }
    Ok(records)
}

impl CacheFile {
    /// Opens (creating if needed) the cache at `path` and returns the
    /// records stored under `identity_digest`, keyed by text digest.
    pub fn open(path: &Path, identity_digest: &str) -> Result<(Self, CachedVectors), EmbedError> {
        let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let records = if exists { read_records(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| cache_err(path, e))?;
        let mut writer = BufWriter::new(file);
        if !exists {
            writeln!(writer, "{CACHE_HEADER}").map_err(|e| cache_err(path, e))?;
            writer.flush().map_err(|e| cache_err(path, e))?;
        }
        let mine = records.into_iter().filter(|r| r.identity == identity_digest).map(|r| (r.text, r.values)).collect();
        Ok((Self { path: path.to_owned(), writer }, mine))
    }

    pub fn append(&mut self, identity_digest: &str, text_digest: &str, values: &[f64]) -> Result<(), EmbedError> {
        let rec = Record {
            identity: identity_digest.to_owned(),
            text: text_digest.to_owned(),
            dim: values.len(),
            values: values.to_vec(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| cache_err(&self.path, e))?;
        writeln!(self.writer, "{line}").map_err(|e| cache_err(&self.path, e))?;
        self.writer.flush().map_err(|e| cache_err(&self.path, e))
    }

    pub fn stats(path: &Path) -> Result<CacheStats, EmbedError> {
        if !path.exists() {
            return Ok(CacheStats { records: 0, identities: 0, bytes: 0 });
        }
        let bytes = std::fs::metadata(path).map_err(|e| cache_err(path, e))?.len();
        let records = read_records(path)?;
        let identities: BTreeSet<&str> = records.iter().map(|r| r.identity.as_str()).collect();
        Ok(CacheStats { records: records.len(), identities: identities.len(), bytes })
    }

    /// Truncates the cache to just its header.
    pub fn clear(path: &Path) -> Result<(), EmbedError> {
        std::fs::write(path, format!("{CACHE_HEADER}\n")).map_err(|e| cache_err(path, e))
    }
}

//! Append-only JSONL run log.
//!
//! Every stage result is flushed as one self-describing line, so a run
//! killed at any point can be resumed from whatever made it to disk. On
//! read, a single unparsable final line is treated as a torn write and
//! dropped; damage anywhere else is real corruption and refuses to load.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Pipeline stage that produced this record (`meta`, `threshold`,
    /// `sample`, `sim`, `synth`, ...).
    pub stage: String,
    /// Stable identity of the work item; resume skips keys already present.
    pub key: String,
    /// Hash of the run configuration this record belongs to.
    pub config_hash: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailStatus {
    Clean,
    /// The final line did not parse and was dropped.
    TruncatedDropped,
}

#[derive(Debug)]
pub struct ReadOutcome<T> {
    pub records: Vec<T>,
    pub tail: TailStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: line {line}: corrupt record: {detail}")]
    Corrupt { path: PathBuf, line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Writer half. Each append is serialized to one line and flushed before
/// returning, which bounds resume loss to a single record.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
}

impl RecordLog {
    /// Starts a fresh log, truncating anything already there.
    pub fn create(path: &Path) -> std::io::Result<RecordLog> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = File::create(path)?;
        Ok(RecordLog { path: path.to_path_buf(), file })
    }

    /// Opens an existing log for appending (creates it when absent).
    pub fn append_to(path: &Path) -> std::io::Result<RecordLog> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordLog { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &Record) -> std::io::Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        debug_assert!(!line.contains('\n'), "serde_json emits single-line JSON");
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()
    }
}

/// Reads a JSONL file, tolerating exactly one torn line at the tail.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<ReadOutcome<T>, RecordError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RecordError::Io { path: path.to_path_buf(), source: e })?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut records = Vec::with_capacity(lines.len());
    let mut tail = TailStatus::Clean;
    for (pos, (line_no, line)) in lines.iter().enumerate() {
        match serde_json::from_str::<T>(line) {
            Ok(r) => records.push(r),
            Err(e) if pos + 1 == lines.len() => {
                let _ = e;
                tail = TailStatus::TruncatedDropped;
            }
            Err(e) => {
                return Err(RecordError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    detail: e.to_string(),
                });
            }
        }
    }
    Ok(ReadOutcome { records, tail })
}

/// Reads a run log.
pub fn read_records(path: &Path) -> Result<ReadOutcome<Record>, RecordError> {
    read_jsonl(path)
}

/// Prepares a log for appending: when the final line is torn, rewrites the
/// file without it so new records never land on the same line as the torn
/// bytes. Mid-file damage still refuses to load.
pub fn repair_log(path: &Path) -> Result<TailStatus, RecordError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RecordError::Io { path: path.to_path_buf(), source: e })?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut good: Vec<&str> = Vec::with_capacity(lines.len());
    let mut tail = TailStatus::Clean;
    for (pos, (line_no, line)) in lines.iter().enumerate() {
        match serde_json::from_str::<Record>(line) {
            Ok(_) => good.push(line),
            Err(_) if pos + 1 == lines.len() => tail = TailStatus::TruncatedDropped,
            Err(e) => {
                return Err(RecordError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    detail: e.to_string(),
                });
            }
        }
    }
    if tail == TailStatus::TruncatedDropped {
        let mut repaired = good.join("\n");
        if !repaired.is_empty() {
            repaired.push('\n');
        }
        let tmp = path.with_extension("jsonl.repair");
        std::fs::write(&tmp, &repaired)
            .map_err(|e| RecordError::Io { path: tmp.clone(), source: e })?;
        std::fs::rename(&tmp, path)
            .map_err(|e| RecordError::Io { path: path.to_path_buf(), source: e })?;
    }
    Ok(tail)
}

//! JSON-lines fixture file: one `{digest, response_text, input_tokens, output_tokens}`
//! record per line. Recording only ever appends.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot open fixture {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixture {path} line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Digest-keyed responses. Read-only after load unless opened for recording.
#[derive(Debug, Default)]
pub struct FixtureStore {
    entries: RwLock<HashMap<String, FixtureRecord>>,
    sink: Option<Mutex<(PathBuf, File)>>,
}

impl FixtureStore {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let mut entries = HashMap::new();
        for r in records {
            entries.entry(r.digest.clone()).or_insert(r);
        }
        Self {
            entries: RwLock::new(entries),
            sink: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let file = File::open(path).map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| FixtureError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| FixtureError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    /// Loads what exists at `path` (if anything) and appends new records to it.
    pub fn open_for_recording(path: &Path) -> Result<Self, FixtureError> {
        let mut store = if path.exists() {
            Self::load(path)?
        } else {
            Self::default()
        };
        let io = |source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        store.sink = Some(Mutex::new((path.to_path_buf(), file)));
        Ok(store)
    }

    pub fn get(&self, digest: &str) -> Option<FixtureRecord> {
        self.entries.read().get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn is_recording(&self) -> bool {
        self.sink.is_some()
    }

    /// Appends a record to the backing file. Digests already on file are kept
    /// as recorded; the first response for a digest wins.
    pub fn append(&self, record: &FixtureRecord) -> Result<(), FixtureError> {
        let Some(sink) = &self.sink else {
            return Ok(());
        };
        let mut guard = sink.lock();
        if self.entries.read().contains_key(&record.digest) {
            return Ok(());
        }
        let (path, file) = &mut *guard;
        let line = serde_json::to_string(record).expect("fixture record serializes");
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|source| FixtureError::Io {
                path: path.clone(),
                source,
            })?;
        self.entries
            .write()
            .insert(record.digest.clone(), record.clone());
        Ok(())
    }
}

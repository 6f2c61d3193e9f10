//! On-disk corpus: `reports/<inspection_id>.json` per report plus `index.json`.
//! Single writer; every file write goes to a temp file that is renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AccidentReport, IngestError, REPORT_CHAR_LIMIT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: String,
    pub fetched_at: DateTime<Utc>,
    pub truncated: bool,
}

#[derive(Debug)]
pub struct CorpusStore {
    root: PathBuf,
    index: BTreeMap<String, IndexEntry>,
}

impl CorpusStore {
    pub const INDEX_FILE: &'static str = "index.json";
    const REPORTS_DIR: &'static str = "reports";

    /// Opens (creating if needed) a corpus rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, IngestError> {
        std::fs::create_dir_all(root.join(Self::REPORTS_DIR)).map_err(|e| io(root, e))?;
        let index_path = root.join(Self::INDEX_FILE);
        let index = if index_path.exists() {
            let text = std::fs::read_to_string(&index_path).map_err(|e| io(&index_path, e))?;
            serde_json::from_str(&text).map_err(|e| IngestError::CorruptCorpus {
                path: index_path.clone(),
                reason: e.to_string(),
            })?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    /// Opens an existing corpus; a missing index is an error.
    pub fn open_existing(root: &Path) -> Result<Self, IngestError> {
        if !root.join(Self::INDEX_FILE).exists() {
            return Err(IngestError::NoCorpus(root.to_path_buf()));
        }
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn put(&mut self, report: &AccidentReport) -> Result<(), IngestError> {
        validate_id(&report.inspection_id)?;
        if report.raw_text.is_empty() {
            return Err(IngestError::EmptyReport(report.inspection_id.clone()));
        }
        if report.raw_text.chars().count() > REPORT_CHAR_LIMIT {
            return Err(IngestError::OverLimit(report.inspection_id.clone()));
        }
        let rel = format!("{}/{}.json", Self::REPORTS_DIR, report.inspection_id);
        let json = serde_json::to_string_pretty(report).expect("report serializes");
        write_atomic(&self.root.join(&rel), json.as_bytes())?;
        let mut next = self.index.clone();
        next.insert(
            report.inspection_id.clone(),
            IndexEntry {
                path: rel,
                fetched_at: report.fetched_at,
                truncated: report.truncated,
            },
        );
        let index_json = serde_json::to_string_pretty(&next).expect("index serializes");
        write_atomic(&self.root.join(Self::INDEX_FILE), index_json.as_bytes())?;
        self.index = next;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<AccidentReport, IngestError> {
        let entry = self
            .index
            .get(id)
            .ok_or_else(|| IngestError::NotFound(id.to_string()))?;
        let path = self.root.join(&entry.path);
        let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| IngestError::CorruptCorpus {
            path,
            reason: e.to_string(),
        })
    }

    /// Ids in lexicographic order.
    pub fn list(&self) -> Vec<String> {
        self.index.keys().cloned().collect()
    }

    pub fn entry(&self, id: &str) -> Option<&IndexEntry> {
        self.index.get(id)
    }
}

fn validate_id(id: &str) -> Result<(), IngestError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(IngestError::InvalidId(id.to_string()))
    }
}

fn io(path: &Path, e: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io(path, e))?;
    tmp.persist(path).map_err(|e| io(path, e.error))?;
    Ok(())
}

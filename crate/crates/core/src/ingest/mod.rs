//! Accident-report ingestion: crawl the inspection search, fetch detail pages,
//! keep their visible text (capped at [`REPORT_CHAR_LIMIT`] characters) and
//! store the result as a corpus on disk.

mod corpus;
mod crawl;
mod fetch;
mod text;

use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

pub use corpus::{CorpusStore, IndexEntry};
pub use crawl::{crawl_index, parse_index_page, CrawlWindow, IndexPage, IndexQuery, ReportRef};
pub use fetch::{DirPageFetcher, FetchError, HttpPageFetcher, PageFetcher};
pub use text::{truncate_text, visible_text, REPORT_CHAR_LIMIT};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot parse page {url}: {reason}")]
    PageParse { url: String, reason: String },
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("report {0} has no visible text")]
    EmptyReport(String),
    #[error("report {0} exceeds the character limit")]
    OverLimit(String),
    #[error("crawl window start {start} is after end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("inspection id {0:?} is not usable as a corpus key")]
    InvalidId(String),
    #[error("no report {0} in corpus")]
    NotFound(String),
    #[error("no corpus at {0}")]
    NoCorpus(PathBuf),
    #[error("corrupt corpus file {path}: {reason}")]
    CorruptCorpus { path: PathBuf, reason: String },
    #[error("I/O error at {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// One fetched inspection record. Serialized field names are part of the
/// corpus format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccidentReport {
    pub inspection_id: String,
    pub detail_url: String,
    pub raw_text: String,
    pub fetched_at: DateTime<Utc>,
    pub truncated: bool,
}

impl AccidentReport {
    /// Builds a report from already-extracted text, applying truncation.
    pub fn from_text(
        inspection_id: impl Into<String>,
        detail_url: impl Into<String>,
        text: &str,
        fetched_at: DateTime<Utc>,
    ) -> Result<Self, IngestError> {
        let inspection_id = inspection_id.into();
        if text.trim().is_empty() {
            return Err(IngestError::EmptyReport(inspection_id));
        }
        let (raw_text, truncated) = truncate_text(text, REPORT_CHAR_LIMIT);
        Ok(Self {
            inspection_id,
            detail_url: detail_url.into(),
            raw_text,
            fetched_at: fetched_at.trunc_subsecs(0),
            truncated,
        })
    }
}

pub fn fetch_report(r: &ReportRef, fetcher: &dyn PageFetcher) -> Result<AccidentReport, IngestError> {
    fetch_report_at(r, fetcher, Utc::now())
}

/// [`fetch_report`] with an explicit fetch timestamp.
pub fn fetch_report_at(
    r: &ReportRef,
    fetcher: &dyn PageFetcher,
    fetched_at: DateTime<Utc>,
) -> Result<AccidentReport, IngestError> {
    let html = fetcher.fetch(&r.detail_url)?;
    let text = visible_text(&html);
    AccidentReport::from_text(&r.inspection_id, &r.detail_url, &text, fetched_at)
}

#[derive(Debug, Default)]
pub struct CrawlSummary {
    pub found: usize,
    pub stored: Vec<String>,
    pub failed: Vec<(String, IngestError)>,
}

impl CrawlSummary {
    /// Every failure was a network-level fetch error.
    pub fn all_network_failures(&self) -> bool {
        !self.failed.is_empty()
            && self.stored.is_empty()
            && self
                .failed
                .iter()
                .all(|(_, e)| matches!(e, IngestError::Fetch(f) if f.is_network()))
    }
}

/// Crawls the index, fetches detail pages with at most `concurrency`
/// parallel fetches, and stores every report that succeeded.
pub fn crawl_into_corpus(
    window: &CrawlWindow,
    query: &IndexQuery,
    fetcher: &dyn PageFetcher,
    store: &mut CorpusStore,
    concurrency: usize,
    exec: Execution,
) -> Result<CrawlSummary, IngestError> {
    let refs = crawl_index(window, query, fetcher)?;
    let fetched = exec.map_bounded(concurrency, &refs, |r| fetch_report(r, fetcher));
    let mut summary = CrawlSummary {
        found: refs.len(),
        ..Default::default()
    };
    for (r, res) in refs.iter().zip(fetched) {
        match res.and_then(|report| store.put(&report)) {
            Ok(()) => summary.stored.push(r.inspection_id.clone()),
            Err(e) => {
                log::warn!("report {} failed: {e}", r.inspection_id);
                summary.failed.push((r.inspection_id.clone(), e));
            }
        }
    }
    Ok(summary)
}

//! Paging through the accident search results and collecting inspection links.

use std::collections::HashSet;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use url::Url;

use super::fetch::PageFetcher;
use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRef {
    pub inspection_id: String,
    pub detail_url: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrawlWindow {
    start: NaiveDate,
    end: NaiveDate,
}

impl CrawlWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, IngestError> {
        if start > end {
            return Err(IngestError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    fn params(&self) -> [(&'static str, String); 6] {
        [
            ("startmonth", format!("{:02}", self.start.month())),
            ("startday", format!("{:02}", self.start.day())),
            ("startyear", self.start.year().to_string()),
            ("endmonth", format!("{:02}", self.end.month())),
            ("endday", format!("{:02}", self.end.day())),
            ("endyear", self.end.year().to_string()),
        ]
    }
}

/// Search endpoint plus caller-supplied filter parameters, passed through
/// unchanged. The window and paging parameters are appended per page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexQuery {
    pub base_url: String,
    pub params: Vec<(String, String)>,
    pub page_size: u32,
    pub max_pages: u32,
}

impl IndexQuery {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            params: Vec::new(),
            page_size: 100,
            max_pages: 10_000,
        }
    }

    pub fn page_url(&self, window: &CrawlWindow, offset: u64) -> Result<String, IngestError> {
        let mut url = Url::parse(&self.base_url).map_err(|e| IngestError::PageParse {
            url: self.base_url.clone(),
            reason: format!("bad search URL: {e}"),
        })?;
        {
            let mut q = url.query_pairs_mut();
            for (k, v) in &self.params {
                q.append_pair(k, v);
            }
            for (k, v) in window.params() {
                q.append_pair(k, &v);
            }
            q.append_pair("p_start", &offset.to_string());
            q.append_pair("p_show", &self.page_size.to_string());
        }
        Ok(url.into())
    }
}

/// One parsed results page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPage {
    pub refs: Vec<ReportRef>,
    pub next_url: Option<String>,
}

fn inspection_id_pattern() -> Regex {
    Regex::new(r"^[0-9]+(\.[0-9]+)?$").expect("valid pattern")
}

/// Extracts inspection-detail links (document order) and a "next" link.
pub fn parse_index_page(html: &str, page_url: &str) -> Result<IndexPage, IngestError> {
    let parse_err = |reason: String| IngestError::PageParse {
        url: page_url.to_string(),
        reason,
    };
    if !html.contains('<') {
        return Err(parse_err("not an HTML document".into()));
    }
    let base = Url::parse(page_url).map_err(|e| parse_err(format!("bad page URL: {e}")))?;
    let doc = Html::parse_document(html);
    let anchors = Selector::parse("a[href]").expect("valid selector");
    let id_re = inspection_id_pattern();
    let mut refs = Vec::new();
    let mut next_url = None;
    for a in doc.select(&anchors) {
        let href = a.value().attr("href").unwrap_or_default();
        let text = a.text().collect::<String>();
        let label = text.trim().to_ascii_lowercase();
        if href.to_ascii_lowercase().contains("inspection_detail") {
            let url = base
                .join(href)
                .map_err(|e| parse_err(format!("bad detail link {href:?}: {e}")))?;
            let id = url
                .query_pairs()
                .find(|(k, _)| k == "id")
                .map(|(_, v)| v.into_owned())
                .ok_or_else(|| parse_err(format!("detail link without id: {href:?}")))?;
            if !id_re.is_match(&id) {
                return Err(parse_err(format!("malformed inspection id {id:?}")));
            }
            refs.push(ReportRef {
                inspection_id: id,
                detail_url: url.into(),
            });
        } else if next_url.is_none()
            && (a.value().attr("rel") == Some("next") || label == "next" || label.starts_with("next "))
        {
            let url = base
                .join(href)
                .map_err(|e| parse_err(format!("bad next link {href:?}: {e}")))?;
            next_url = Some(url.into());
        }
    }
    Ok(IndexPage { refs, next_url })
}

/// Pages through results until an empty page, following the page's "next"
/// link when it has one and the computed offset URL otherwise. Output is
/// de-duplicated by inspection id in first-seen order.
pub fn crawl_index(
    window: &CrawlWindow,
    query: &IndexQuery,
    fetcher: &dyn PageFetcher,
) -> Result<Vec<ReportRef>, IngestError> {
    let mut seen_ids = HashSet::new();
    let mut seen_urls = HashSet::new();
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut url = query.page_url(window, offset)?;
    for _ in 0..query.max_pages {
        if !seen_urls.insert(url.clone()) {
            break;
        }
        let html = fetcher.fetch(&url)?;
        let page = parse_index_page(&html, &url)?;
        if page.refs.is_empty() {
            break;
        }
        offset += page.refs.len() as u64;
        for r in page.refs {
            if seen_ids.insert(r.inspection_id.clone()) {
                out.push(r);
            }
        }
        url = match page.next_url {
            Some(next) => next,
            None => query.page_url(window, offset)?,
        };
    }
    Ok(out)
}

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

use crate::gateway::RetryPolicy;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FetchError {
    #[error("HTTP {status} for {url}")]
    Http { url: String, status: u16 },
    #[error("network failure for {url}: {reason}")]
    Network { url: String, reason: String },
}

impl FetchError {
    pub fn is_network(&self) -> bool {
        matches!(self, FetchError::Network { .. })
    }
}

/// Source of HTML pages by URL.
pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<String, FetchError>;
}

impl<F> PageFetcher for F
where
    F: Fn(&str) -> Result<String, FetchError> + Send + Sync,
{
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        self(url)
    }
}

/// Live fetcher: a minimum delay between request starts (shared across
/// threads) and the gateway's retry schedule for 429, 5xx and network errors.
pub struct HttpPageFetcher {
    client: reqwest::blocking::Client,
    politeness: Duration,
    retry: RetryPolicy,
    last_start: Mutex<Option<Instant>>,
}

impl HttpPageFetcher {
    pub const DEFAULT_POLITENESS: Duration = Duration::from_secs(1);

    pub fn new(politeness: Duration) -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("sitehazard/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| FetchError::Network {
                url: String::new(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            client,
            politeness,
            retry: RetryPolicy::default(),
            last_start: Mutex::new(None),
        })
    }

    fn wait_turn(&self) {
        loop {
            let mut last = self.last_start.lock();
            let now = Instant::now();
            match *last {
                Some(t) if now.duration_since(t) < self.politeness => {
                    let wait = self.politeness - now.duration_since(t);
                    drop(last);
                    std::thread::sleep(wait);
                }
                _ => {
                    *last = Some(now);
                    return;
                }
            }
        }
    }

    fn fetch_once(&self, url: &str) -> Result<String, FetchError> {
        self.wait_turn();
        let resp = self.client.get(url).send().map_err(|e| FetchError::Network {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(FetchError::Http {
                url: url.to_string(),
                status,
            });
        }
        resp.text().map_err(|e| FetchError::Network {
            url: url.to_string(),
            reason: e.to_string(),
        })
    }
}

impl PageFetcher for HttpPageFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        let mut attempt = 1;
        loop {
            match self.fetch_once(url) {
                Ok(body) => return Ok(body),
                Err(e) => {
                    let retryable = match &e {
                        FetchError::Network { .. } => true,
                        FetchError::Http { status, .. } => *status == 429 || *status >= 500,
                    };
                    if !retryable || attempt >= self.retry.max_attempts {
                        return Err(e);
                    }
                    std::thread::sleep(self.retry.delay_after(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Offline fetcher over a directory of saved pages. `pages.json` in the
/// directory maps each URL to a file name relative to it; unmapped URLs
/// answer HTTP 404.
#[derive(Debug, Clone)]
pub struct DirPageFetcher {
    root: PathBuf,
    pages: HashMap<String, String>,
}

impl DirPageFetcher {
    pub const MAP_FILE: &'static str = "pages.json";

    pub fn open(root: &Path) -> Result<Self, FetchError> {
        let map = root.join(Self::MAP_FILE);
        let text = std::fs::read_to_string(&map).map_err(|e| FetchError::Network {
            url: map.display().to_string(),
            reason: e.to_string(),
        })?;
        let pages = serde_json::from_str(&text).map_err(|e| FetchError::Network {
            url: map.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            pages,
        })
    }
}

impl PageFetcher for DirPageFetcher {
    fn fetch(&self, url: &str) -> Result<String, FetchError> {
        let file = self.pages.get(url).ok_or_else(|| FetchError::Http {
            url: url.to_string(),
            status: 404,
        })?;
        std::fs::read_to_string(self.root.join(file)).map_err(|_| FetchError::Http {
            url: url.to_string(),
            status: 404,
        })
    }
}

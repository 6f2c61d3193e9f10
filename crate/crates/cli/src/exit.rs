use serde::Serialize;

/// Process exit codes. The numeric values are part of the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success = 0,
    Partial = 1,
    Usage = 2,
    Unavailable = 3,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// `Partial` when anything failed, otherwise `Success`.
    pub fn from_failures(failed: usize) -> Self {
        if failed == 0 {
            ExitStatus::Success
        } else {
            ExitStatus::Partial
        }
    }
}

/// An error that ends the run with a specific status.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Fatal {
    pub status: ExitStatus,
    pub message: String,
}

impl Fatal {
    pub fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

pub fn usage(message: impl Into<String>) -> Fatal {
    Fatal::new(ExitStatus::Usage, message)
}

pub fn unavailable(message: impl Into<String>) -> Fatal {
    Fatal::new(ExitStatus::Unavailable, message)
}

/// Status for an error chain; unclassified errors count as a failed run.
pub fn status_of(err: &anyhow::Error) -> ExitStatus {
    err.chain()
        .find_map(|e| e.downcast_ref::<Fatal>())
        .map(|f| f.status)
        .unwrap_or(ExitStatus::Partial)
}

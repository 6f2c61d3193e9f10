//! Construction-safety hazard pipelines over chat-completion model endpoints.
//!
//! * [`gateway`]: chat client with retry, rate limiting, record/replay and usage accounting
//! * [`ingest`]: accident-report crawling, text extraction, truncation and corpus storage
//! * [`taxonomy`]: the nine-family incident taxonomy
//! * [`extraction`]: structured field extraction, classification, statistics and accuracy
//! * [`vision`]: staged visual hazard localization with crop-and-refine review
//! * [`rulevqa`]: yes/no rule-compliance benchmarking with prompt ensembles

pub mod exec;
pub mod extraction;
pub mod gateway;
pub mod ingest;
pub mod rulevqa;
pub mod taxonomy;
pub mod vision;

pub use exec::Execution;
pub use taxonomy::Taxonomy;

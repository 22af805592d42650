//! Human-in-the-loop review service.
//!
//! Documents live as `documents/<id>.json` under a data directory; every
//! prediction, re-code and current-revision change is an event appended to
//! `events.jsonl`. Restarting replays the log into identical sessions.
//!
//! | method | path                       | body                  |
//! |--------|----------------------------|-----------------------|
//! | GET    | `/documents`               |                       |
//! | GET    | `/documents/{id}`          |                       |
//! | POST   | `/documents/{id}/predict`  |                       |
//! | POST   | `/documents/{id}/recode`   | `{"evidence": [..]}`  |
//! | PUT    | `/documents/{id}/current`  | `{"revision": n}`     |
//! | GET    | `/report`                  |                       |
//!
//! Errors are `{"error": ".."}` with 404 for unknown documents, 422 for bad
//! input and 502 when the model endpoint fails.

use std::path::PathBuf;

use thiserror::Error;

mod http;
mod service;
pub mod store;

pub use http::{router, serve};
pub use service::{Clock, DocumentSummary, DocumentView, Gold, ReviewService, RevisionView, ServiceOptions};
pub use store::{import_documents, Event, ReviewSession, Revision, RevisionMode};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown document {0}")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error("model endpoint failed: {0}")]
    Gateway(String),
    #[error("event log line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error("{}: {reason}", path.display())]
    Document { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

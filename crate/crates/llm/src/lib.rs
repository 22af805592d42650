//! Chat-completion gateway used by the mining, synthesis, judging and
//! inference pipelines.
//!
//! Every call goes through [`Gateway::complete`], which validates the
//! request, consults a content-addressed cache, and falls through to a
//! [`Transport`] with exponential-backoff retries. Two transports ship with
//! the crate: an OpenAI-compatible HTTP client and a [`MockTranscript`]
//! replaying recorded completions keyed by request hash.

mod cache;
mod error;
mod gateway;
mod mock;
mod request;
mod transport;

pub use cache::ResponseCache;
pub use error::{GatewayError, TransportError};
pub use gateway::{Gateway, GatewayConfig};
pub use mock::{MockTranscript, TranscriptEntry, TranscriptError};
pub use request::{ChatRequest, ChatResponse};
pub use transport::{HttpTransport, HttpTransportConfig, Transport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },

    #[error("mock transcript has no completion for prompt hash {hash}")]
    MockMiss { hash: String },

    #[error("malformed endpoint response: {0}")]
    Malformed(String),

    #[error("cache I/O failed: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    /// True for errors where the endpoint itself was unreachable or refused
    /// the call, as opposed to a caller mistake.
    pub fn is_upstream(&self) -> bool {
        !matches!(self, GatewayError::InvalidRequest(_))
    }
}

/// Outcome of a single transport attempt.
#[derive(Debug, Error)]
pub enum TransportError {
    /// Connection failures, timeouts, 429 and 5xx: worth another attempt.
    #[error("{0}")]
    Retryable(String),
    /// Anything that will fail the same way again.
    #[error(transparent)]
    Fatal(GatewayError),
}

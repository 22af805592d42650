use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

/// One chat-completion call: optional system message plus a user message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Greedy-equivalent request (temperature 0) with the default token budget.
    pub fn new(model: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// Lowercase hex SHA-256 over the canonical JSON encoding of
    /// `(model, system, user, temperature, max_tokens)`.
    ///
    /// This is the cache key and the key mock transcripts are indexed by.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            model: &'a str,
            system: Option<&'a str>,
            user: &'a str,
            temperature: f64,
            max_tokens: u32,
        }
        let key = Key {
            model: &self.model,
            system: self.system.as_deref(),
            user: &self.user,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let bytes = serde_json::to_vec(&key).expect("request key serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Served from the cache without touching the transport.
    pub cached: bool,
    /// Transport attempts spent on this response (1 for cache hits).
    pub attempts: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_covers_every_field() {
        let base = ChatRequest::new("m", "hello");
        let variants = [
            ChatRequest::new("m2", "hello"),
            ChatRequest::new("m", "hello!"),
            base.clone().with_system("sys"),
            base.clone().with_temperature(0.5),
            base.clone().with_max_tokens(7),
        ];
        for v in &variants {
            assert_ne!(v.fingerprint(), base.fingerprint(), "{v:?}");
        }
        assert_eq!(base.fingerprint(), ChatRequest::new("m", "hello").fingerprint());
        assert_eq!(base.fingerprint().len(), 64);
    }

    #[test]
    fn empty_system_differs_from_absent_system() {
        let a = ChatRequest::new("m", "u");
        let b = a.clone().with_system("");
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}

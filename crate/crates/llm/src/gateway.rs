use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::ResponseCache;
use crate::error::{GatewayError, TransportError};
use crate::mock::MockTranscript;
use crate::request::{ChatRequest, ChatResponse};
use crate::transport::Transport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Extra attempts after the first failed one.
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    #[serde(with = "millis")]
    pub backoff_max: Duration,
    /// Upper bound on transport calls in flight across all callers.
    pub max_in_flight: usize,
    pub max_temperature: f64,
    pub max_tokens_limit: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
            max_in_flight: 8,
            max_temperature: 2.0,
            max_tokens_limit: 32_768,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().expect("permit lock");
        while *available == 0 {
            available = self.freed.wait(available).expect("permit lock");
        }
        *available -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock") += 1;
        self.0.freed.notify_one();
    }
}

/// Cached, retrying front door to a [`Transport`].
pub struct Gateway {
    transport: Box<dyn Transport>,
    config: GatewayConfig,
    cache: Mutex<ResponseCache>,
    permits: Permits,
    transport_calls: AtomicU64,
    network_calls: AtomicU64,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl Gateway {
    pub fn new(
        transport: impl Transport + 'static,
        config: GatewayConfig,
        cache: ResponseCache,
    ) -> Self {
        Self {
            transport: Box::new(transport),
            permits: Permits::new(config.max_in_flight),
            config,
            cache: Mutex::new(cache),
            transport_calls: AtomicU64::new(0),
            network_calls: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Hermetic gateway over a transcript with an in-memory cache.
    pub fn mock(transcript: MockTranscript) -> Self {
        Self::new(transcript, GatewayConfig::default(), ResponseCache::in_memory())
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Transport invocations, mock or real, including retries.
    pub fn transport_calls(&self) -> u64 {
        self.transport_calls.load(Ordering::SeqCst)
    }

    /// Transport invocations that reached the network.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous transport calls observed so far.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Snapshot of every cached completion as a transcript.
    pub fn cache_transcript(&self) -> MockTranscript {
        self.cache.lock().expect("cache lock").to_transcript()
    }

    pub fn validate(&self, request: &ChatRequest) -> Result<(), GatewayError> {
        if request.user.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user message is empty".into()));
        }
        if request.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model name is empty".into()));
        }
        if !(0.0..=self.config.max_temperature).contains(&request.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, {}]",
                request.temperature, self.config.max_temperature
            )));
        }
        if request.max_tokens == 0 || request.max_tokens > self.config.max_tokens_limit {
            return Err(GatewayError::InvalidRequest(format!(
                "max_tokens {} outside [1, {}]",
                request.max_tokens, self.config.max_tokens_limit
            )));
        }
        Ok(())
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.validate(request)?;
        let hash = request.fingerprint();
        if let Some(text) = self.cache.lock().expect("cache lock").get(&hash) {
            return Ok(ChatResponse {
                text: text.to_string(),
                cached: true,
                attempts: 1,
            });
        }
        self.call_and_store(request, &hash)
    }

    /// Like [`Gateway::complete`] but skips the cache lookup. Used for the
    /// single retry after an unusable completion; the cache keeps whichever
    /// text was stored first.
    pub fn complete_uncached(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.validate(request)?;
        let hash = request.fingerprint();
        self.call_and_store(request, &hash)
    }

    fn call_and_store(&self, request: &ChatRequest, hash: &str) -> Result<ChatResponse, GatewayError> {
        let (text, attempts) = self.call_with_retry(request)?;
        self.cache.lock().expect("cache lock").put(hash, &text)?;
        Ok(ChatResponse {
            text,
            cached: false,
            attempts,
        })
    }

    fn call_with_retry(&self, request: &ChatRequest) -> Result<(String, u32), GatewayError> {
        let limit = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=limit {
            if attempt > 1 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.send_once(request) {
                Ok(text) => return Ok((text, attempt)),
                Err(TransportError::Fatal(err)) => return Err(err),
                Err(TransportError::Retryable(msg)) => {
                    tracing::warn!(attempt, limit, error = %msg, "chat completion failed");
                    last = msg;
                }
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts: limit,
            last,
        })
    }

    fn send_once(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let _permit = self.permits.acquire();
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.transport_calls.fetch_add(1, Ordering::SeqCst);
        if self.transport.is_network() {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
        }
        let result = self.transport.send(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1), capped.
    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.config
            .backoff_base
            .checked_mul(factor)
            .unwrap_or(self.config.backoff_max)
            .min(self.config.backoff_max)
    }

    /// Completes every request with at most `parallelism` running at once.
    ///
    /// The output is positionally aligned with `requests`; a failure only
    /// affects its own slot. A `parallelism` of 0 is treated as 1.
    pub fn complete_many(
        &self,
        requests: &[ChatRequest],
        parallelism: usize,
    ) -> Vec<Result<ChatResponse, GatewayError>> {
        let workers = parallelism.max(1).min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ChatResponse, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    let Some(request) = requests.get(idx) else {
                        break;
                    };
                    let result = self.complete(request);
                    *slots[idx].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}

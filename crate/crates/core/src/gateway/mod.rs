//! Chat-completion gateway shared by classification and summarization.
//!
//! Responsibilities: content-addressed response caching, a bound on the
//! number of provider calls in flight, and retries with exponential backoff.

mod cache;
mod provider;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, ContentCache};
pub(crate) use provider::classify_status;
pub use provider::{
    ChatProvider, HttpChatProvider, MockProvider, MockRule, MockScript, Pattern, ProviderError,
    API_KEY_ENV, DEFAULT_TIMEOUT,
};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const CHAT_DOMAIN: &str = "chat/v1";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: usize, last: ProviderError },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("no mock rule matches prompt: {0:?}")]
    UnscriptedPrompt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
    #[error("cache write failed: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    #[serde(default)]
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    /// Request with temperature 0 and a 256-token output cap.
    pub fn new(model: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_output_tokens: 256,
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.user.is_empty() {
            return Err(GatewayError::InvalidRequest("user prompt is empty"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be finite and >= 0"));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub provider: String,
    pub cached: bool,
}

/// Digest of everything that determines a provider's answer.
pub fn cache_key(req: &ChatRequest, provider_id: &str) -> CacheKey {
    let temperature = req.temperature.to_bits().to_le_bytes();
    let (has_system, system) = match &req.system {
        Some(s) => (&[1u8][..], s.as_bytes()),
        None => (&[0u8][..], &b""[..]),
    };
    CacheKey::from_fields(
        CHAT_DOMAIN,
        &[
            provider_id.as_bytes(),
            req.model.as_bytes(),
            &temperature,
            has_system,
            system,
            req.user.as_bytes(),
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    /// Delay before the first retry; doubles on each subsequent one.
    pub base_delay: Duration,
    /// Upper bound applied to a provider's retry-after hint.
    pub max_retry_after: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            max_retry_after: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self {
            base_delay: Duration::ZERO,
            max_retry_after: Duration::ZERO,
            ..Self::default()
        }
    }

    /// Backoff before retry number `retry` (0-based).
    pub fn delay_for(&self, retry: usize) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }

    fn wait_for(&self, retry: usize, err: &ProviderError) -> Duration {
        match err {
            ProviderError::RateLimited {
                retry_after: Some(d),
            } => (*d).min(self.max_retry_after),
            _ => self.delay_for(retry),
        }
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, (usize, ProviderError)> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    let wait = self.wait_for(attempts - 1, &e);
                    log::warn!("provider call failed ({e}); retry {attempts} in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(e) => return Err((attempts, e)),
            }
        }
    }
}

/// Counting semaphore bounding concurrent provider calls.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
}

#[derive(Serialize, Deserialize)]
struct CachedChat {
    provider: String,
    request: ChatRequest,
    response: String,
}

pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    disk: Option<ContentCache>,
    memory: Mutex<HashMap<CacheKey, String>>,
    retry: RetryPolicy,
    limiter: Semaphore,
    key_locks: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
    provider_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl Gateway {
    /// Gateway with an in-memory cache only.
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            disk: None,
            memory: Mutex::new(HashMap::new()),
            retry: RetryPolicy::default(),
            limiter: Semaphore::new(DEFAULT_MAX_IN_FLIGHT),
            key_locks: Mutex::new(HashMap::new()),
            provider_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_disk_cache(mut self, cache: ContentCache) -> Self {
        self.disk = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Semaphore::new(n);
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            provider_calls: self.provider_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    fn lookup(&self, key: &CacheKey) -> Option<String> {
        if let Some(text) = self.memory.lock().unwrap().get(key) {
            return Some(text.clone());
        }
        let disk = self.disk.as_ref()?;
        let entry: CachedChat = disk.get(key)?;
        // the stored request must hash back to the key it is filed under
        if cache_key(&entry.request, &entry.provider) != *key || entry.response.is_empty() {
            log::warn!("cache entry {key} does not match its request; ignoring");
            return None;
        }
        Some(entry.response)
    }

    fn store(&self, key: CacheKey, req: &ChatRequest, text: &str) -> Result<(), GatewayError> {
        if let Some(disk) = &self.disk {
            disk.put(
                &key,
                &CachedChat {
                    provider: self.provider.id().to_string(),
                    request: req.clone(),
                    response: text.to_string(),
                },
            )?;
        }
        self.memory.lock().unwrap().insert(key, text.to_string());
        Ok(())
    }

    fn key_lock(&self, key: CacheKey) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key)
            .or_default()
            .clone()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let provider = self.provider.id().to_string();
        let key = cache_key(req, &provider);
        // one caller per key talks to the provider; the others wait and hit the cache
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();

        if let Some(text) = self.lookup(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(ChatResponse {
                text,
                provider,
                cached: true,
            });
        }

        let text = self
            .retry
            .run(|| {
                let _permit = self.limiter.acquire();
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                self.provider.complete(req)
            })
            .map_err(|(attempts, err)| match err {
                ProviderError::Rejected(m) => GatewayError::Rejected(m),
                ProviderError::UnscriptedPrompt(p) => GatewayError::UnscriptedPrompt(p),
                last => GatewayError::ProviderUnavailable { attempts, last },
            })?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        self.store(key, req, &text)?;
        Ok(ChatResponse {
            text,
            provider,
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rayon::prelude::*;

    fn gateway(mock: MockProvider) -> (Arc<MockProvider>, Gateway) {
        let mock = Arc::new(mock);
        let gw = Gateway::new(mock.clone()).with_retry(RetryPolicy::immediate());
        (mock, gw)
    }

    #[test]
    fn second_identical_request_is_cached() {
        let (mock, gw) = gateway(MockProvider::from_rules([("hi", "hello")], None));
        let req = ChatRequest::new("m", "hi");
        let a = gw.complete(&req).unwrap();
        let b = gw.complete(&req).unwrap();
        assert!(!a.cached);
        assert!(b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(mock.call_count(), 1);
        assert_eq!(gw.stats(), GatewayStats { provider_calls: 1, cache_hits: 1 });
    }

    #[test]
    fn retries_transport_failures() {
        let (mock, gw) = gateway(MockProvider::from_rules([("hi", "hello")], None).failing_first(2));
        let resp = gw.complete(&ChatRequest::new("m", "hi")).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let (mock, gw) = gateway(MockProvider::from_rules([("hi", "hello")], None).failing_first(10));
        let err = gw.complete(&ChatRequest::new("m", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::ProviderUnavailable { attempts: 4, .. }));
        assert_eq!(mock.call_count(), 4);
    }

    #[test]
    fn backoff_schedule_is_1_2_4_seconds() {
        let p = RetryPolicy::default();
        let delays: Vec<_> = (0..3).map(|i| p.delay_for(i)).collect();
        assert_eq!(delays, [1, 2, 4].map(Duration::from_secs));
    }

    #[test]
    fn rate_limit_honours_retry_after() {
        let p = RetryPolicy::default();
        let hint = ProviderError::RateLimited {
            retry_after: Some(Duration::from_millis(5)),
        };
        assert_eq!(p.wait_for(0, &hint), Duration::from_millis(5));
        let no_hint = ProviderError::RateLimited { retry_after: None };
        assert_eq!(p.wait_for(1, &no_hint), Duration::from_secs(2));

        let mut calls = 0;
        let out = RetryPolicy::immediate().run(|| {
            calls += 1;
            if calls == 1 {
                Err(hint.clone())
            } else {
                Ok(calls)
            }
        });
        assert_eq!(out.unwrap(), 2);
    }

    #[test]
    fn empty_text_is_an_error() {
        let (_, gw) = gateway(MockProvider::from_rules([("hi", "")], None));
        assert!(matches!(
            gw.complete(&ChatRequest::new("m", "hi")),
            Err(GatewayError::EmptyResponse)
        ));
    }

    #[test]
    fn unscripted_prompt_is_not_retried() {
        let (mock, gw) = gateway(MockProvider::from_rules([("x", "y")], None));
        assert!(matches!(
            gw.complete(&ChatRequest::new("m", "hi")),
            Err(GatewayError::UnscriptedPrompt(_))
        ));
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn cache_key_sensitivity() {
        let base = ChatRequest::new("gpt", "Classify this");
        assert_eq!(cache_key(&base, "p"), cache_key(&base.clone(), "p"));
        let mut t = base.clone();
        t.temperature = 0.5;
        assert_ne!(cache_key(&base, "p"), cache_key(&t, "p"));
        let mut u = base.clone();
        u.user = "Classify thiS".into();
        assert_ne!(cache_key(&base, "p"), cache_key(&u, "p"));
        let mut s = base.clone();
        s.system = Some(String::new());
        assert_ne!(cache_key(&base, "p"), cache_key(&s, "p"));
        let mut m = base.clone();
        m.model = "gpt2".into();
        assert_ne!(cache_key(&base, "p"), cache_key(&m, "p"));
        assert_ne!(cache_key(&base, "p"), cache_key(&base, "q"));
    }

    #[test]
    fn disk_cache_survives_new_gateway_and_tolerates_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockProvider::from_rules([("", "answer")], None));
        let make = || {
            Gateway::new(mock.clone())
                .with_disk_cache(ContentCache::new(dir.path()))
                .with_retry(RetryPolicy::immediate())
        };
        let a = ChatRequest::new("m", "first");
        let b = ChatRequest::new("m", "second");
        make().complete(&a).unwrap();
        make().complete(&b).unwrap();
        assert_eq!(mock.call_count(), 2);

        let warm = make();
        assert!(warm.complete(&a).unwrap().cached);
        assert!(warm.complete(&b).unwrap().cached);
        assert_eq!(warm.stats().provider_calls, 0);

        let path = ContentCache::new(dir.path()).path_for(&cache_key(&a, "mock"));
        let tampered = std::fs::read_to_string(&path).unwrap().replace("first", "frst");
        std::fs::write(&path, tampered).unwrap();
        let after = make();
        assert!(!after.complete(&a).unwrap().cached);
        assert!(after.complete(&b).unwrap().cached);
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn in_flight_calls_are_bounded() {
        let mock = Arc::new(
            MockProvider::from_rules([("", "ok")], None).with_latency(Duration::from_millis(5)),
        );
        let gw = Gateway::new(mock.clone()).with_max_in_flight(3);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(12).build().unwrap();
        pool.install(|| {
            (0..48).into_par_iter().for_each(|i| {
                gw.complete(&ChatRequest::new("m", format!("p{i}"))).unwrap();
            })
        });
        assert_eq!(mock.call_count(), 48);
        assert!(mock.peak_in_flight() <= 3, "peak {}", mock.peak_in_flight());
        assert!(mock.peak_in_flight() >= 2);
    }

    #[test]
    fn concurrent_identical_requests_call_once() {
        let mock = Arc::new(
            MockProvider::from_rules([("", "ok")], None).with_latency(Duration::from_millis(5)),
        );
        let gw = Gateway::new(mock.clone());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        pool.install(|| {
            (0..16).into_par_iter().for_each(|_| {
                gw.complete(&ChatRequest::new("m", "same")).unwrap();
            })
        });
        assert_eq!(mock.call_count(), 1);
        assert_eq!(gw.stats().cache_hits, 15);
    }
}

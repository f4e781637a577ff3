use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::ChatRequest;

/// Environment variable holding the bearer token for remote providers.
pub const API_KEY_ENV: &str = "MINIBAR_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    /// Network failure, timeout or server-side error; retryable.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    /// The provider refused the request (4xx other than 429); not retryable.
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("no mock rule matches prompt: {0:?}")]
    UnscriptedPrompt(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::RateLimited { .. })
    }
}

/// Anything that can turn a chat request into response text.
pub trait ChatProvider: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pattern {
    One(String),
    All(Vec<String>),
}

impl Pattern {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Pattern::One(p) => prompt.contains(p.as_str()),
            Pattern::All(ps) => ps.iter().all(|p| prompt.contains(p.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: Pattern,
    pub response: String,
}

/// Scripted responses, as stored in a mock script file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Answer for prompts matching no rule; `None` means strict mode.
    #[serde(default)]
    pub default: Option<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Test double answering by the first rule whose substring occurs in the prompt.
#[derive(Debug, Default)]
pub struct MockProvider {
    id: String,
    script: MockScript,
    fail_remaining: AtomicUsize,
    latency: Duration,
    calls: Mutex<Vec<String>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            id: "mock".to_string(),
            script,
            ..Default::default()
        }
    }

    pub fn from_rules<I, K, V>(rules: I, default: Option<&str>) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self::new(MockScript {
            rules: rules
                .into_iter()
                .map(|(k, v)| MockRule {
                    pattern: Pattern::One(k.into()),
                    response: v.into(),
                })
                .collect(),
            default: default.map(str::to_string),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// The next `n` calls fail with a transport error.
    pub fn failing_first(self, n: usize) -> Self {
        self.fail_remaining.store(n, Ordering::SeqCst);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Prompts received, in call order (failed attempts included).
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn answer(&self, prompt: &str) -> Result<String, ProviderError> {
        self.script
            .rules
            .iter()
            .find(|r| r.pattern.matches(prompt))
            .map(|r| r.response.clone())
            .or_else(|| self.script.default.clone())
            .ok_or_else(|| ProviderError::UnscriptedPrompt(prompt.chars().take(80).collect()))
    }
}

impl ChatProvider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.calls.lock().unwrap().push(req.user.clone());
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let failing = self
            .fail_remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        let result = if failing {
            Err(ProviderError::Transport("scripted failure".to_string()))
        } else {
            self.answer(&req.user)
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Client for any endpoint speaking the chat-completions wire format.
pub struct HttpChatProvider {
    id: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            id: format!("remote:{endpoint}"),
            endpoint: endpoint.to_string(),
            api_key,
            client,
        })
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| ProviderError::Rejected(format!("{API_KEY_ENV} is not set")))?;
        Self::new(endpoint, key, timeout)
    }
}

pub(crate) fn request_body(req: &ChatRequest) -> serde_json::Value {
    let mut messages = Vec::new();
    if let Some(system) = &req.system {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": req.user}));
    json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

pub(crate) fn response_text(body: &serde_json::Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Transport("response has no choices[0].message.content".into()))
}

pub(crate) fn classify_status(
    status: reqwest::StatusCode,
    retry_after: Option<&reqwest::header::HeaderValue>,
    body: &str,
) -> ProviderError {
    if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
        let retry_after = retry_after
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        ProviderError::RateLimited { retry_after }
    } else if status.is_server_error() {
        ProviderError::Transport(format!("{status}: {body}"))
    } else {
        ProviderError::Rejected(format!("{status}: {body}"))
    }
}

impl ChatProvider for HttpChatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&request_body(req))
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry_after = resp.headers().get(reqwest::header::RETRY_AFTER).cloned();
            let body = resp.text().unwrap_or_default();
            return Err(classify_status(status, retry_after.as_ref(), &body));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        response_text(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new("m", user)
    }

    #[test]
    fn first_matching_rule_wins() {
        let mock = MockProvider::from_rules(
            [("Best app ever", "Irrelevant"), ("Best", "Feature request")],
            None,
        );
        assert_eq!(mock.complete(&req("... Best app ever! ...")).unwrap(), "Irrelevant");
        assert_eq!(mock.complete(&req("Best")).unwrap(), "Feature request");
    }

    #[test]
    fn default_and_strict_modes() {
        let lenient = MockProvider::from_rules([("x", "y")], Some("Irrelevant"));
        assert_eq!(lenient.complete(&req("nothing")).unwrap(), "Irrelevant");
        let strict = MockProvider::from_rules([("x", "y")], None);
        assert!(matches!(
            strict.complete(&req("nothing")),
            Err(ProviderError::UnscriptedPrompt(_))
        ));
    }

    #[test]
    fn conjunctive_patterns_from_json() {
        let script: MockScript = serde_json::from_str(
            r#"{"rules":[{"match":["summarize","offline"],"response":"S"},{"match":"offline","response":"F"}],"default":null}"#,
        )
        .unwrap();
        let mock = MockProvider::new(script);
        assert_eq!(mock.complete(&req("please summarize: offline")).unwrap(), "S");
        assert_eq!(mock.complete(&req("classify: offline")).unwrap(), "F");
    }

    #[test]
    fn scripted_failures_then_success() {
        let mock = MockProvider::from_rules([("a", "ok")], None).failing_first(2);
        assert!(mock.complete(&req("a")).is_err());
        assert!(mock.complete(&req("a")).is_err());
        assert_eq!(mock.complete(&req("a")).unwrap(), "ok");
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn wire_format() {
        let mut r = req("hello");
        r.system = Some("sys".into());
        let body = request_body(&r);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        let resp = json!({"choices":[{"message":{"role":"assistant","content":"Problem report"}}]});
        assert_eq!(response_text(&resp).unwrap(), "Problem report");
        assert!(response_text(&json!({"choices": []})).is_err());
    }

    #[test]
    fn status_mapping() {
        use reqwest::header::HeaderValue;
        use reqwest::StatusCode;
        let hv = HeaderValue::from_static("7");
        assert_eq!(
            classify_status(StatusCode::TOO_MANY_REQUESTS, Some(&hv), ""),
            ProviderError::RateLimited {
                retry_after: Some(Duration::from_secs(7))
            }
        );
        assert!(classify_status(StatusCode::BAD_GATEWAY, None, "").is_retryable());
        assert!(!classify_status(StatusCode::UNAUTHORIZED, None, "").is_retryable());
    }
}

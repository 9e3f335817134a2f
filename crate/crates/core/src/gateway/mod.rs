//! Chat-completion gateway: requests, transports, retries, the
//! content-addressed response store, and JSON recovery from model output.
//!
//! A [`Gateway`] consults its response cache before calling the transport.
//! Live transports write every fresh response to the cache, so a cache
//! directory recorded during a live run can later be served back by
//! [`ReplayTransport`] with no network access.

mod http;
mod json;
mod prompts;
mod scripted;
mod store;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpTransport, HttpTransportConfig};
pub use json::{extract_json_block, JsonRecoveryError};
pub use prompts::{DomainProfile, PromptError, PromptLibrary, TemplateId};
pub use scripted::{ScriptRule, ScriptedTransport};
pub use store::{ResponseStore, StoredExchange};

/// Context window of the models the prompts were written for.
pub const DEFAULT_CONTEXT_TOKENS: usize = 128_000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request needs about {estimated} tokens, over the {limit}-token context")]
    ContextOverflow { estimated: usize, limit: usize },
    #[error("response store error: {0}")]
    Store(String),
}

impl GatewayError {
    pub fn transport(message: impl Into<String>, retryable: bool) -> Self {
        GatewayError::Transport {
            message: message.into(),
            retryable,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        match self.messages.iter().find(|m| m.role != Role::System) {
            Some(m) if m.role == Role::User => {}
            Some(_) => {
                return Err(GatewayError::InvalidRequest(
                    "first non-system message must come from the user".into(),
                ))
            }
            None => return Err(GatewayError::InvalidRequest("no user message".into())),
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Rough token count (four characters per token) of prompt plus output budget.
    pub fn estimated_tokens(&self) -> usize {
        let chars: usize = self.messages.iter().map(|m| m.content.chars().count()).sum();
        chars.div_ceil(4) + self.max_output_tokens as usize
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_usage: TokenUsage,
}

/// SHA-256 over model id, temperature, and messages, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of(req: &ChatRequest) -> Self {
        // The digest input is built by hand so it never depends on struct
        // field order or serializer settings.
        let messages: Vec<serde_json::Value> = req
            .messages
            .iter()
            .map(|m| serde_json::json!([m.role, m.content]))
            .collect();
        let canonical = serde_json::json!([req.model_id, format!("{:?}", req.temperature), messages]);
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        CacheKey(hex::encode(digest))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Something that turns a request into a response.
pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Serves responses from a recorded store; a miss is a configuration error.
pub struct ReplayTransport {
    store: ResponseStore,
}

impl ReplayTransport {
    pub fn new(store: ResponseStore) -> Self {
        Self { store }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = req.cache_key();
        self.store
            .get(&key)?
            .ok_or_else(|| GatewayError::ReplayMiss { key: key.to_string() })
    }
}

/// Waits before each retry. The default is 1s, 4s, 16s.
#[derive(Clone)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
    sleep: fn(Duration),
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: vec![Duration::from_secs(1), Duration::from_secs(4), Duration::from_secs(16)],
            sleep: thread::sleep,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new(), sleep: thread::sleep }
    }

    /// Same number of retries, without waiting.
    pub fn immediate(retries: usize) -> Self {
        Self { delays: vec![Duration::ZERO; retries], sleep: |_| {} }
    }

    pub fn run<T>(&self, mut attempt: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut delays = self.delays.iter();
        loop {
            match attempt() {
                Err(err) if err.is_retryable() => match delays.next() {
                    Some(delay) => {
                        log::warn!("retrying after {delay:?}: {err}");
                        (self.sleep)(*delay);
                    }
                    None => return Err(err),
                },
                other => return other,
            }
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap_or_else(|e| e.into_inner());
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    transport: Box<dyn Transport>,
    cache: Option<ResponseStore>,
    retry: RetryPolicy,
    in_flight: Semaphore,
    concurrency: usize,
    context_tokens: usize,
}

impl Gateway {
    pub const DEFAULT_CONCURRENCY: usize = 4;

    /// A gateway over any transport, optionally persisting fresh responses to `cache`.
    pub fn new(transport: impl Transport + 'static, cache: Option<ResponseStore>) -> Self {
        Self {
            transport: Box::new(transport),
            cache,
            retry: RetryPolicy::default(),
            in_flight: Semaphore::new(Self::DEFAULT_CONCURRENCY),
            concurrency: Self::DEFAULT_CONCURRENCY,
            context_tokens: DEFAULT_CONTEXT_TOKENS,
        }
    }

    /// Serves only what `store` already holds.
    pub fn replay(store: ResponseStore) -> Self {
        Self::new(ReplayTransport::new(store), None).with_retry(RetryPolicy::none())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.concurrency = limit.max(1);
        self.in_flight = Semaphore::new(self.concurrency);
        self
    }

    pub fn with_context_tokens(mut self, limit: usize) -> Self {
        self.context_tokens = limit;
        self
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let estimated = req.estimated_tokens();
        if estimated > self.context_tokens {
            return Err(GatewayError::ContextOverflow { estimated, limit: self.context_tokens });
        }
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        let response = {
            let _permit = self.in_flight.acquire();
            self.retry.run(|| self.transport.send(req))?
        };
        match &self.cache {
            // Write-once: a concurrent writer may have stored first; serve its value.
            Some(cache) => cache.put(&key, req, &response),
            None => Ok(response),
        }
    }
}

/// Sampling settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

/// A multi-turn exchange: each reply is appended before the next question.
#[derive(Debug, Clone)]
pub struct Conversation {
    settings: ChatSettings,
    messages: Vec<Message>,
}

impl Conversation {
    pub fn new(settings: ChatSettings) -> Self {
        Self { settings, messages: Vec::new() }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Sends `prompt` as the next user turn and records the reply.
    pub fn ask(&mut self, gateway: &Gateway, prompt: impl Into<String>) -> Result<String, GatewayError> {
        self.messages.push(Message::user(prompt));
        let req = ChatRequest {
            model_id: self.settings.model_id.clone(),
            messages: self.messages.clone(),
            temperature: self.settings.temperature,
            max_output_tokens: self.settings.max_output_tokens,
        };
        match gateway.complete(&req) {
            Ok(resp) => {
                self.messages.push(Message::assistant(resp.text.clone()));
                Ok(resp.text)
            }
            Err(err) => {
                self.messages.pop();
                Err(err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(text: &str) -> ChatRequest {
        ChatRequest {
            model_id: "m".into(),
            messages: vec![Message::system("be brief"), Message::user(text)],
            temperature: 0.0,
            max_output_tokens: 16,
        }
    }

    struct Counting {
        calls: Arc<AtomicUsize>,
        failures_before_success: usize,
        retryable: bool,
    }

    impl Transport for Counting {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                return Err(GatewayError::transport("boom", self.retryable));
            }
            Ok(ChatResponse {
                text: format!("echo {}", req.messages.last().unwrap().content),
                token_usage: TokenUsage { input: 3, output: (n + 1) as u64 },
            })
        }
    }

    fn counting(failures: usize, retryable: bool) -> (Counting, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        (Counting { calls: calls.clone(), failures_before_success: failures, retryable }, calls)
    }

    #[test]
    fn cache_key_is_stable_and_sensitive() {
        let a = request("hello");
        assert_eq!(a.cache_key(), request("hello").cache_key());
        assert_ne!(a.cache_key(), request("hello!").cache_key());
        let mut warm = request("hello");
        warm.temperature = 0.7;
        assert_ne!(a.cache_key(), warm.cache_key());
        // Output budget is not part of the key.
        let mut longer = request("hello");
        longer.max_output_tokens = 999;
        assert_eq!(a.cache_key(), longer.cache_key());
        assert_eq!(a.cache_key().as_str().len(), 64);
    }

    #[test]
    fn cache_key_is_platform_independent() {
        // Frozen digest; changes here invalidate every committed replay store.
        let key = request("hello").cache_key();
        assert_eq!(
            key.as_str(),
            hex::encode(Sha256::digest(
                r#"["m","0.0",[["system","be brief"],["user","hello"]]]"#.as_bytes()
            ))
        );
    }

    #[test]
    fn request_validation() {
        let mut r = request("x");
        assert!(r.validate().is_ok());
        r.messages = vec![Message::assistant("hi"), Message::user("x")];
        assert!(matches!(r.validate(), Err(GatewayError::InvalidRequest(_))));
        r.messages.clear();
        assert!(r.validate().is_err());
        let mut r = request("x");
        r.temperature = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let (transport, calls) = counting(0, false);
        let gw = Gateway::new(transport, Some(ResponseStore::open(dir.path()).unwrap()));
        let first = gw.complete(&request("hi")).unwrap();
        let second = gw.complete(&request("hi")).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(first, second);
    }

    #[test]
    fn precached_request_makes_no_call() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResponseStore::open(dir.path()).unwrap();
        let req = request("cached");
        let stored = ChatResponse { text: "from disk".into(), token_usage: TokenUsage::default() };
        store.put(&req.cache_key(), &req, &stored).unwrap();
        let (transport, calls) = counting(0, false);
        let gw = Gateway::new(transport, Some(store));
        assert_eq!(gw.complete(&req).unwrap().text, "from disk");
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn replay_miss() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::replay(ResponseStore::open(dir.path()).unwrap());
        assert!(matches!(gw.complete(&request("nope")), Err(GatewayError::ReplayMiss { .. })));
    }

    #[test]
    fn retries_only_retryable_failures() {
        let (transport, calls) = counting(2, true);
        let gw = Gateway::new(transport, None).with_retry(RetryPolicy::immediate(3));
        assert!(gw.complete(&request("x")).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let (transport, calls) = counting(10, true);
        let gw = Gateway::new(transport, None).with_retry(RetryPolicy::immediate(3));
        assert!(gw.complete(&request("x")).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 4);

        let (transport, calls) = counting(1, false);
        let gw = Gateway::new(transport, None).with_retry(RetryPolicy::immediate(3));
        assert!(gw.complete(&request("x")).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn default_backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delays, vec![Duration::from_secs(1), Duration::from_secs(4), Duration::from_secs(16)]);
    }

    #[test]
    fn overflow_is_a_hard_error() {
        let (transport, calls) = counting(0, false);
        let gw = Gateway::new(transport, None).with_context_tokens(10);
        let err = gw.complete(&request(&"word ".repeat(100))).unwrap_err();
        assert!(matches!(err, GatewayError::ContextOverflow { .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn conversation_appends_replies() {
        let (transport, _) = counting(0, false);
        let gw = Gateway::new(transport, None);
        let mut conv = Conversation::new(ChatSettings::default());
        conv.ask(&gw, "one").unwrap();
        conv.ask(&gw, "two").unwrap();
        let roles: Vec<Role> = conv.messages().iter().map(|m| m.role).collect();
        assert_eq!(roles, vec![Role::User, Role::Assistant, Role::User, Role::Assistant]);
        assert_eq!(conv.messages()[3].content, "echo two");
    }

    #[test]
    fn concurrency_limit_bounds_in_flight_calls() {
        struct Slow {
            current: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Transport for Slow {
            fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(20));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatResponse { text: "ok".into(), token_usage: TokenUsage::default() })
            }
        }
        let slow = Arc::new(Slow { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let gw = Gateway::new(slow.clone(), None).with_concurrency(2);
        thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&request(&format!("q{i}"))).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}

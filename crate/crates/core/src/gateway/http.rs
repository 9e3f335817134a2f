use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, GatewayError, TokenUsage, Transport};

#[derive(Debug, Clone)]
pub struct HttpTransportConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Bearer token; usually read from an environment variable.
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpTransportConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(600),
        }
    }

    /// Reads the token from `var` if it is set and non-empty.
    pub fn with_api_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

/// Speaks the common chat-completions JSON body:
/// `{model, messages: [{role, content}], temperature, max_tokens}`.
pub struct HttpTransport {
    config: HttpTransportConfig,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: HttpTransportConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::transport(e.to_string(), false))?;
        Ok(Self { config, client })
    }
}

pub(crate) fn request_body(req: &ChatRequest) -> Value {
    json!({
        "model": req.model_id,
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

pub(crate) fn parse_response_body(body: &Value) -> Result<ChatResponse, GatewayError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::transport("response has no choices[0].message.content", false))?;
    let usage = TokenUsage {
        input: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        output: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(ChatResponse { text: text.to_string(), token_usage: usage })
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut builder = self.client.post(&self.config.endpoint).json(&request_body(req));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| GatewayError::transport(e.to_string(), true))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let detail = resp.text().unwrap_or_default();
            return Err(GatewayError::transport(format!("HTTP {status}: {detail}"), retryable));
        }
        let body: Value = resp
            .json()
            .map_err(|e| GatewayError::transport(format!("undecodable response: {e}"), false))?;
        parse_response_body(&body)
    }
}

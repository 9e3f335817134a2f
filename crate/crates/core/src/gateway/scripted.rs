use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, GatewayError, Role, TokenUsage, Transport};

/// Chooses a canned response by matching text in the conversation.
///
/// A rule applies when `first_user_contains` (if set) occurs in the first
/// user message and `last_user_contains` occurs in the latest one. Rules are
/// tried in order. Useful for tests and for recording replay stores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub first_user_contains: Option<String>,
    pub last_user_contains: String,
    pub response: String,
}

impl ScriptRule {
    pub fn new(first: Option<&str>, last: &str, response: impl Into<String>) -> Self {
        Self {
            first_user_contains: first.map(str::to_string),
            last_user_contains: last.to_string(),
            response: response.into(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ScriptedTransport {
    rules: Vec<ScriptRule>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut users = req.messages.iter().filter(|m| m.role == Role::User);
        let first = users.next().map(|m| m.content.as_str()).unwrap_or_default();
        let last = users.next_back().map(|m| m.content.as_str()).unwrap_or(first);
        let rule = self.rules.iter().find(|r| {
            r.first_user_contains.as_deref().is_none_or(|needle| first.contains(needle))
                && last.contains(&r.last_user_contains)
        });
        match rule {
            Some(rule) => Ok(ChatResponse {
                text: rule.response.clone(),
                token_usage: TokenUsage {
                    input: req.messages.iter().map(|m| m.content.len() as u64 / 4).sum(),
                    output: rule.response.len() as u64 / 4,
                },
            }),
            None => Err(GatewayError::transport(
                format!("no scripted response for {:?}", last.chars().take(60).collect::<String>()),
                false,
            )),
        }
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).send(req)
    }
}

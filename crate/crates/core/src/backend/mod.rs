//! Chat backends: the wire-level interface to responder and judge models.
//!
//! Everything above this module talks to models through the [`ChatBackend`]
//! trait, so the judge, the predictors, and the router are oblivious to
//! whether a model is a real HTTP service ([`http::HttpBackend`]) or a
//! deterministic stand-in for tests ([`scripted::ScriptedBackend`]).

pub mod http;
pub mod scripted;

use crate::registry::Registry;
use crate::types::{ModelRef, Query};
use async_trait::async_trait;
use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;
use thiserror::Error;

/// Who authored a chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One turn of a chat conversation, in the shape the wire protocol uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Checks the message-sequence contract shared by all backends: at least
/// one message, and the conversation opens with a system or user turn.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    match messages.first() {
        None => Err(BackendError::InvalidRequest {
            detail: "empty message list".into(),
        }),
        Some(first) if first.role == Role::Assistant => Err(BackendError::InvalidRequest {
            detail: "conversation must open with a system or user message".into(),
        }),
        Some(_) => Ok(()),
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {model:?} timed out after {waited:?}")]
    Timeout { model: String, waited: Duration },
    #[error("transport error talking to backend {model:?}: {detail}")]
    Transport { model: String, detail: String },
    /// The backend answered with a non-success status. The body is kept
    /// verbatim for debugging.
    #[error("backend {model:?} refused the request with status {status}: {body}")]
    Refusal {
        model: String,
        status: u16,
        body: String,
    },
    #[error("invalid chat request: {detail}")]
    InvalidRequest { detail: String },
}

/// A chat-completions backend for a single model.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// The model identifier this backend serves.
    fn model_id(&self) -> &str;

    /// Sends one conversation and returns the assistant text of the first
    /// choice.
    async fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

/// Connection and sampling settings for one backend.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub model: ModelRef,
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    /// Environment variable holding the bearer token, if the service
    /// needs one.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    /// How many times a transient failure is retried (on top of the first
    /// attempt).
    pub max_retries: u32,
    pub temperature: f64,
    /// Output-token budget sent with each request. Never exceeds the
    /// model's own cap.
    pub max_tokens: u32,
}

impl BackendConfig {
    pub fn new(model: ModelRef, base_url: impl Into<String>) -> Self {
        BackendConfig {
            max_tokens: model.max_output_tokens,
            model,
            base_url: base_url.into(),
            api_key_env: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 || self.max_tokens > self.model.max_output_tokens {
            return Err(BackendError::InvalidRequest {
                detail: format!(
                    "max_tokens {} outside (0, {}] for model {}",
                    self.max_tokens, self.model.max_output_tokens, self.model.id
                ),
            });
        }
        if self.base_url.trim().is_empty() {
            return Err(BackendError::InvalidRequest {
                detail: format!("empty base_url for model {}", self.model.id),
            });
        }
        Ok(())
    }
}

/// The responses gathered for one query, keyed by model id, along with the
/// failure message for every model that produced no response.
#[derive(Debug, Clone, Default)]
pub struct CollectedResponses {
    pub responses: BTreeMap<String, String>,
    pub failures: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum CollectError {
    /// Not a single model produced a response for the query.
    #[error("all backends failed for query {query_id:?}: {failures:?}")]
    AllBackendsFailed {
        query_id: String,
        failures: BTreeMap<String, String>,
    },
}

/// Asks every listed model to answer `query`, with at most `parallelism`
/// requests in flight at once.
///
/// Each model sees the same two-message conversation: `system_prompt`
/// followed by the query text. Individual failures are tolerated and
/// reported in [`CollectedResponses::failures`]; only a clean sweep of
/// failures (including an empty model list) is an error.
pub async fn collect_responses(
    query: &Query,
    models: &[ModelRef],
    backends: &Registry<dyn ChatBackend>,
    system_prompt: &str,
    parallelism: usize,
) -> Result<CollectedResponses, CollectError> {
    let limit = parallelism.max(1);
    let mut collected = CollectedResponses::default();
    let mut in_flight = FuturesUnordered::new();
    let mut pending = models.iter();
    loop {
        while in_flight.len() < limit {
            let Some(model) = pending.next() else { break };
            match backends.get(&model.id) {
                Some(backend) => {
                    let messages = vec![
                        ChatMessage::system(system_prompt),
                        ChatMessage::user(&query.text),
                    ];
                    let id = model.id.clone();
                    in_flight.push(async move {
                        let outcome = backend.chat(&messages).await;
                        (id, outcome)
                    });
                }
                None => {
                    collected
                        .failures
                        .insert(model.id.clone(), "no backend registered".into());
                }
            }
        }
        match in_flight.next().await {
            Some((model_id, Ok(text))) => {
                collected.responses.insert(model_id, text);
            }
            Some((model_id, Err(err))) => {
                collected.failures.insert(model_id, err.to_string());
            }
            None => break,
        }
    }
    if collected.responses.is_empty() {
        return Err(CollectError::AllBackendsFailed {
            query_id: query.id.clone(),
            failures: collected.failures,
        });
    }
    Ok(collected)
}

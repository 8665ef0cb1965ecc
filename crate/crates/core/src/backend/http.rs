//! HTTP chat backend speaking the ubiquitous chat-completions protocol.

use super::{validate_messages, BackendConfig, BackendError, ChatBackend, ChatMessage};
use async_trait::async_trait;
use serde::Deserialize;
use std::time::Duration;

/// Base delay for exponential backoff between retries.
const BACKOFF_BASE: Duration = Duration::from_millis(200);
/// Ceiling on any single backoff sleep.
const BACKOFF_CAP: Duration = Duration::from_secs(5);

/// A backend that POSTs to `{base_url}/chat/completions` and reads the
/// first choice of the reply. Transient failures — timeouts, transport
/// errors, and 429/5xx statuses — are retried with exponential backoff up
/// to the configured budget; other non-success statuses are surfaced
/// immediately as [`BackendError::Refusal`] with the body preserved.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
}

#[derive(Debug, Deserialize)]
struct ChatCompletionReply {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                model: config.model.id.clone(),
                detail: format!("failed to build HTTP client: {e}"),
            })?;
        Ok(HttpBackend { config, client })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    /// Reads the bearer token from the configured environment variable, if
    /// any. Resolved per call so rotated credentials are picked up.
    fn bearer_token(&self) -> Option<String> {
        self.config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|token| !token.is_empty())
    }

    async fn attempt(&self, messages: &[ChatMessage]) -> Result<String, (BackendError, bool)> {
        let model = &self.config.model.id;
        let body = serde_json::json!({
            "model": model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut request = self.client.post(self.endpoint()).json(&body);
        if let Some(token) = self.bearer_token() {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.map_err(|e| {
            if e.is_timeout() {
                (
                    BackendError::Timeout {
                        model: model.clone(),
                        waited: self.config.timeout,
                    },
                    true,
                )
            } else {
                (
                    BackendError::Transport {
                        model: model.clone(),
                        detail: e.to_string(),
                    },
                    true,
                )
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let body = response.text().await.unwrap_or_default();
            return Err((
                BackendError::Refusal {
                    model: model.clone(),
                    status: status.as_u16(),
                    body,
                },
                retryable,
            ));
        }
        let reply: ChatCompletionReply = response.json().await.map_err(|e| {
            (
                BackendError::Transport {
                    model: model.clone(),
                    detail: format!("malformed completion payload: {e}"),
                },
                false,
            )
        })?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                (
                    BackendError::Transport {
                        model: model.clone(),
                        detail: "completion payload has no message content".into(),
                    },
                    false,
                )
            })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model.id
    }

    async fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        validate_messages(messages)?;
        let mut attempt = 0;
        loop {
            match self.attempt(messages).await {
                Ok(text) => return Ok(text),
                Err((err, retryable)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(err);
                    }
                    let delay = BACKOFF_BASE
                        .saturating_mul(1u32 << attempt.min(16))
                        .min(BACKOFF_CAP);
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ModelRef;

    fn config() -> BackendConfig {
        let mut cfg = BackendConfig::new(ModelRef::new("m", 1, false), "http://127.0.0.1:9");
        cfg.timeout = Duration::from_millis(200);
        cfg.max_retries = 1;
        cfg
    }

    #[tokio::test]
    async fn connection_failures_surface_as_transport_errors() {
        // Port 9 (discard) is not listening; the connect fails fast.
        let backend = HttpBackend::new(config()).unwrap();
        let err = backend.chat(&[ChatMessage::user("hi")]).await.unwrap_err();
        match err {
            BackendError::Transport { model, .. } | BackendError::Timeout { model, .. } => {
                assert_eq!(model, "m");
            }
            other => panic!("expected transport-level failure, got {other}"),
        }
    }

    #[tokio::test]
    async fn invalid_messages_fail_before_any_request() {
        let backend = HttpBackend::new(config()).unwrap();
        let err = backend.chat(&[]).await.unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest { .. }));
    }

    #[test]
    fn endpoint_joins_base_url_cleanly() {
        let mut cfg = config();
        cfg.base_url = "http://host:8000/v1/".into();
        let backend = HttpBackend::new(cfg).unwrap();
        assert_eq!(backend.endpoint(), "http://host:8000/v1/chat/completions");
    }
}

//! HTTP transport speaking the common chat-completions wire format.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::gateway::{
    ChatRequest, ChatResponse, FinishReason, Transport, TransportError, Usage,
};

/// Blocking HTTP client for a chat-completions endpoint.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// `url` is the full completions URL; `model` goes into the request body.
    /// The API key, if any, is read from the named environment variable at
    /// construction so worker threads never touch the environment.
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key_env: Option<&str>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client builds");
        HttpTransport {
            client,
            url: url.into(),
            model: model.into(),
            api_key: api_key_env.and_then(|var| std::env::var(var).ok()),
        }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| TransportError::retryable(format!("request failed: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportError::retryable(format!("body read failed: {e}")))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(TransportError::retryable(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(TransportError::fatal(format!("status {status}: {text}")));
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| TransportError::fatal(format!("unparseable response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::fatal("response has no choices"))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        let usage = wire.usage.unwrap_or_default();
        Ok(ChatResponse {
            text: choice.message.content,
            finish_reason,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        })
    }
}

//! Chat-completions HTTP backend.
//!
//! Speaks the common OpenAI-style wire format: POST a JSON body of model,
//! messages, and optional sampling parameters; read the reply text from
//! `choices[0].message.content` and usage counts from `usage`.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, BackendResponse, ChatBackend, ChatMessage, ModelProfile};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new() -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        HttpBackend::new()
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
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for HttpBackend {
    fn send(
        &mut self,
        profile: &ModelProfile,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, BackendError> {
        let key = std::env::var(&profile.api_key_ref).map_err(|_| {
            BackendError::Auth(format!(
                "api key environment variable {} is not set",
                profile.api_key_ref
            ))
        })?;
        let mut body = json!({
            "model": profile.name,
            "messages": messages,
        });
        if let Some(t) = profile.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(p) = profile.top_p {
            body["top_p"] = json!(p);
        }
        let resp = self
            .client
            .post(&profile.endpoint_url)
            .bearer_auth(key)
            .timeout(Duration::from_secs(profile.request_timeout_secs))
            .json(&body)
            .send()
            .map_err(|e| BackendError::Retryable(format!("request failed: {e}")))?;

        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::Auth(format!("endpoint returned {status}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Retryable(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("endpoint returned {status}")));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| BackendError::Retryable(format!("bad response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Retryable("response carried no choices".into()))?;
        let usage = wire.usage.unwrap_or_default();
        Ok(BackendResponse {
            text: choice.message.content,
            tokens_in: usage.prompt_tokens,
            tokens_out: usage.completion_tokens,
        })
    }
}

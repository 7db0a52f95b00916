//! OpenAI-compatible `/chat/completions` provider.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatProvider, ChatRequest, ChatRole, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub request_timeout_ms: u64,
}

pub struct OpenAiCompatible {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
    key: String,
}

impl OpenAiCompatible {
    pub fn new(config: OpenAiConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| ProviderError::Fatal {
                code: "client".into(),
                message: e.to_string(),
            })?;
        let key = format!("{}#{}", config.base_url, config.model);
        Ok(Self { config, client, key })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for turn in &request.transcript {
            let role = match turn.role {
                ChatRole::System => "system",
                ChatRole::Agent => "assistant",
                ChatRole::User => "user",
            };
            messages.push(json!({"role": role, "content": turn.text}));
        }
        json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "messages": messages,
        })
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl ChatProvider for OpenAiCompatible {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(url)
            .bearer_auth(&self.config.api_key)
            .json(&self.body(request))
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let message = response.text().unwrap_or_default();
            return Err(ProviderError::Fatal {
                code: status.as_u16().to_string(),
                message,
            });
        }
        let parsed: CompletionResponse = response.json().map_err(|e| ProviderError::Fatal {
            code: "decode".into(),
            message: e.to_string(),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Fatal {
                code: "empty".into(),
                message: "response has no message content".into(),
            })
    }

    fn key(&self) -> &str {
        &self.key
    }
}

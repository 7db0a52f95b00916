//! Provider-agnostic chat completion with a structured-directive contract.

mod directive;
mod gateway;
#[cfg(feature = "http")]
mod http;
mod mock;
pub mod template;

use serde::{Deserialize, Serialize};

pub use directive::{format_reply, parse_reply, AgentDirective, Directive};
pub use gateway::{
    Completion, Gateway, GatewayConfig, Pacer, SystemPacer, TokenBucket, VirtualPacer,
};
#[cfg(feature = "http")]
pub use http::{OpenAiCompatible, OpenAiConfig};
pub use mock::{MockEntry, MockScript, ScriptedMock};
pub use template::{render_prompt, Bindings, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChatRole {
    System,
    Agent,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
}

impl ChatTurn {
    pub fn new(role: ChatRole, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }
}

/// What a provider receives for one completion attempt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub template_id: String,
    /// Number of user turns in the transcript so far.
    pub turn_index: usize,
    pub system_prompt: String,
    pub transcript: Vec<ChatTurn>,
    pub temperature: f32,
}

impl ChatRequest {
    pub fn last_user_message(&self) -> Option<&str> {
        self.transcript
            .iter()
            .rev()
            .find(|t| t.role == ChatRole::User)
            .map(|t| t.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, connection resets, 429/5xx.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider error {code}: {message}")]
    Fatal { code: String, message: String },
}

/// A chat backend. Returns the raw reply text; parsing happens in the gateway.
pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    /// Key used for rate limiting; providers sharing a key share a bucket.
    fn key(&self) -> &str {
        "default"
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(request)
    }

    fn key(&self) -> &str {
        (**self).key()
    }
}

//! Provider-agnostic chat access with temperature control, a
//! record/replay cache, a scripted mock, and the chained-session
//! controller used by the generation phase.

mod cache;
mod live;
mod mock;
mod session;

pub use cache::{CacheEntry, CacheMode, CachingProvider, ReplayCache};
pub use live::LiveProvider;
pub use mock::MockProvider;
pub use session::{
    run_chained_session, ControllerAction, SessionError, SessionPlan,
};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no cached response for request {0}")]
    CacheMiss(String),
    #[error("scripted provider ran out of responses")]
    ScriptExhausted,
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("provider returned HTTP {status}: {message}")]
    Http { status: u16, message: String, retry_after: Option<Duration> },
    #[error("network error: {0}")]
    Network(String),
    #[error("cache I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
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

/// Which framework-injected instruction a transcript entry carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionKind {
    BranchPolish,
    BranchRewrite,
    CorrectionSuccess,
    CorrectionNone,
    CorrectionEmpty,
    CorrectionFailure,
    ToolResult,
    Reprompt,
}

/// Append-only message log of one chained model session.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChatTranscript {
    messages: Vec<ChatMessage>,
    injections: Vec<(usize, InjectionKind)>,
    total_output_tokens: u64,
}

impl ChatTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    /// (message index, kind) pairs for framework-injected instructions,
    /// in injection order.
    pub fn injections(&self) -> &[(usize, InjectionKind)] {
        &self.injections
    }

    pub fn total_output_tokens(&self) -> u64 {
        self.total_output_tokens
    }

    pub fn push_system(&mut self, content: impl Into<String>) {
        self.messages.push(ChatMessage::system(content));
    }

    pub fn push_user(&mut self, content: impl Into<String>) {
        self.messages.push(ChatMessage::user(content));
    }

    pub fn push_assistant(&mut self, content: impl Into<String>) {
        self.messages.push(ChatMessage::assistant(content));
    }

    /// Append a framework-injected user instruction, recording its kind.
    pub fn push_injection(&mut self, kind: InjectionKind, content: impl Into<String>) {
        self.messages.push(ChatMessage::user(content));
        self.injections.push((self.messages.len() - 1, kind));
    }

    pub fn add_output_tokens(&mut self, n: u64) {
        self.total_output_tokens += n;
    }

    pub fn last_assistant(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Assistant)
            .map(|m| m.content.as_str())
    }

    /// Count of assistant turns (provider calls made so far).
    pub fn assistant_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub output_tokens: Option<u64>,
}

/// One chat backend. Implementations: [`LiveProvider`], [`MockProvider`],
/// and [`CachingProvider`] for record/replay.
pub trait ChatProvider: Send + Sync {
    /// Identity used in cache keys; stable across record and replay runs.
    fn provider_id(&self) -> &str;

    fn model_id(&self) -> &str;

    fn complete_raw(
        &self,
        messages: &[ChatMessage],
        temperature: f64,
        stop_markers: &[String],
    ) -> Result<Completion, GatewayError>;
}

/// Complete a chat turn, halting at the first stop marker.
///
/// Providers without native stop-sequence support are covered by
/// client-side truncation at the first marker occurrence.
pub fn complete(
    provider: &dyn ChatProvider,
    messages: &[ChatMessage],
    temperature: f64,
    stop_markers: &[String],
) -> Result<Completion, GatewayError> {
    let mut completion = provider.complete_raw(messages, temperature, stop_markers)?;
    if let Some(cut) = stop_markers
        .iter()
        .filter_map(|m| completion.text.find(m.as_str()))
        .min()
    {
        completion.text.truncate(cut);
    }
    if completion.text.trim().is_empty() {
        return Err(GatewayError::EmptyCompletion);
    }
    if completion.output_tokens.is_none() {
        completion.output_tokens = Some(estimate_tokens(&completion.text));
    }
    Ok(completion)
}

/// Whitespace-token estimate, used when the provider reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Stable digest over the canonical request serialization. Insensitive
/// to message-object identity, sensitive to content, order, role, and
/// temperature.
pub fn cache_key(
    provider_id: &str,
    model_id: &str,
    messages: &[ChatMessage],
    temperature: f64,
) -> String {
    #[derive(Serialize)]
    struct KeyInput<'a> {
        provider: &'a str,
        model: &'a str,
        temperature: f64,
        messages: &'a [ChatMessage],
    }
    let canonical = serde_json::to_string(&KeyInput {
        provider: provider_id,
        model: model_id,
        temperature,
        messages,
    })
    .expect("key serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

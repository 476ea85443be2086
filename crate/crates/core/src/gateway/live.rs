//! HTTP provider speaking the de-facto chat-completions wire format.
//!
//! Kept deliberately thin: retries, caching and transcript bookkeeping all
//! live elsewhere, so this module only shapes a request, sends it and maps
//! transport failures onto [`GatewayError`].

use serde::Deserialize;
use serde_json::json;

use super::{ChatMessage, ChatProvider, Completion, GatewayError};

pub const DEFAULT_API_KEY_VAR: &str = "MCI_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveProvider {
    endpoint: String,
    model: String,
    api_key: String,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl LiveProvider {
    /// Reads the API key from the environment (`MCI_API_KEY` by default,
    /// override with `api_key_var`).
    pub fn from_env(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key_var: Option<&str>,
    ) -> Result<Self, GatewayError> {
        let var = api_key_var.unwrap_or(DEFAULT_API_KEY_VAR);
        let api_key = std::env::var(var)
            .map_err(|_| GatewayError::MissingApiKey(var.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            max_tokens: 2048,
        })
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

impl ChatProvider for LiveProvider {
    fn provider_id(&self) -> &str {
        "live"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete_raw(
        &self,
        messages: &[ChatMessage],
        temperature: f64,
        stop_markers: &[String],
    ) -> Result<Completion, GatewayError> {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": self.max_tokens,
        });
        if !stop_markers.is_empty() {
            // Servers usually honour at most four stop sequences.
            let stops: Vec<&String> = stop_markers.iter().take(4).collect();
            body["stop"] = json!(stops);
        }

        let url = format!("{}/chat/completions", self.endpoint);
        let response = ureq::post(&url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string());

        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let retry_after = r
                    .header("Retry-After")
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(std::time::Duration::from_secs);
                let message = r
                    .into_string()
                    .unwrap_or_else(|_| "unreadable error body".to_string());
                return Err(GatewayError::Http {
                    status,
                    message,
                    retry_after,
                });
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(GatewayError::Network(t.to_string()));
            }
        };

        let parsed: WireResponse = serde_json::from_reader(response.into_reader())
            .map_err(|e| GatewayError::Network(format!("malformed response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or(GatewayError::EmptyCompletion)?;
        Ok(Completion {
            text: choice.message.content,
            output_tokens: parsed.usage.and_then(|u| u.completion_tokens),
        })
    }
}

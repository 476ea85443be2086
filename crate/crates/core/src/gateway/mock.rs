//! Scripted provider for tests: responses are consumed strictly in
//! order, and exhaustion is an error so under-specified fixtures fail
//! loudly.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{ChatMessage, ChatProvider, Completion, GatewayError};

pub struct MockProvider {
    script: Mutex<VecDeque<String>>,
    model: String,
}

impl MockProvider {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: Mutex::new(script.into_iter().map(Into::into).collect()),
            model: "scripted".to_string(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl ChatProvider for MockProvider {
    fn provider_id(&self) -> &str {
        "mock"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete_raw(
        &self,
        _messages: &[ChatMessage],
        _temperature: f64,
        _stop_markers: &[String],
    ) -> Result<Completion, GatewayError> {
        let mut script = self.script.lock().unwrap();
        match script.pop_front() {
            Some(text) => Ok(Completion { text, output_tokens: None }),
            None => Err(GatewayError::ScriptExhausted),
        }
    }
}

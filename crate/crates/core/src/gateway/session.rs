//! Adaptive prompt chaining: one session alternates model turns with
//! framework-injected instructions until a controller decides to stop or
//! the round budget runs out.

use thiserror::Error;

use super::{
    complete, ChatProvider, ChatTranscript, GatewayError, InjectionKind,
};

/// Upper bound on model turns in one chained session.
pub const DEFAULT_MAX_ROUNDS: usize = 6;

#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub initial_prompt: String,
    pub stop_markers: Vec<String>,
    pub max_rounds: usize,
    pub temperature: f64,
}

impl SessionPlan {
    pub fn new(initial_prompt: impl Into<String>) -> Self {
        Self {
            initial_prompt: initial_prompt.into(),
            stop_markers: Vec::new(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            temperature: 0.1,
        }
    }

    pub fn with_stop_markers<I, S>(mut self, markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop_markers = markers.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds.max(1);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

/// What the controller wants after inspecting the latest model turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerAction {
    /// Append an instruction and ask the model for another turn.
    Inject { kind: InjectionKind, instruction: String },
    /// The session reached its goal; stop and return the transcript.
    Terminate,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session did not terminate within {rounds} rounds")]
    RoundBudgetExhausted { transcript: Box<ChatTranscript>, rounds: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Drive one chained session to completion.
///
/// The controller sees the transcript after every model turn and either
/// terminates or injects the next instruction. Requesting an injection on
/// the final round fails the session rather than silently truncating it:
/// the injected instruction would never be answered.
pub fn run_chained_session<C>(
    provider: &dyn ChatProvider,
    plan: &SessionPlan,
    mut controller: C,
) -> Result<ChatTranscript, SessionError>
where
    C: FnMut(&ChatTranscript) -> ControllerAction,
{
    let mut transcript = ChatTranscript::new();
    transcript.push_user(plan.initial_prompt.clone());
    for round in 1..=plan.max_rounds {
        let completion = complete(
            provider,
            transcript.messages(),
            plan.temperature,
            &plan.stop_markers,
        )?;
        transcript.add_output_tokens(completion.output_tokens.unwrap_or(0));
        transcript.push_assistant(completion.text);
        match controller(&transcript) {
            ControllerAction::Terminate => return Ok(transcript),
            ControllerAction::Inject { kind, instruction } => {
                if round == plan.max_rounds {
                    return Err(SessionError::RoundBudgetExhausted {
                        transcript: Box::new(transcript),
                        rounds: plan.max_rounds,
                    });
                }
                transcript.push_injection(kind, instruction);
            }
        }
    }
    unreachable!("final round either terminates or exhausts the budget");
}

//! Chat-completion client with per-phase usage accounting.

mod http;
mod scripted;

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use http::HttpChatProvider;
pub use scripted::{messages_digest, FixtureRecord, RecordingChatProvider, ScriptedChatProvider};

use crate::retry::{ProviderError, RetryPolicy};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid messages: {0}")]
    Contract(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("fixture line {line}: {reason}")]
    Fixture { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model: String,
    pub temperature: f64,
    /// Sent as `max_tokens` when set.
    pub max_output: Option<u32>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self { model: String::new(), temperature: 0.0, max_output: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Token counts came from [`estimate_tokens`], not the provider.
    pub estimated: bool,
}

/// What a provider hands back before accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Option<(u64, u64)>,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<ProviderReply, ProviderError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        (**self).complete(messages, params)
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InitialPlanning,
    Replanning,
    Reasoning,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::InitialPlanning, Phase::Replanning, Phase::Reasoning];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::InitialPlanning => "initial_planning",
            Phase::Replanning => "replanning",
            Phase::Reasoning => "reasoning",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl PhaseUsage {
    fn add(&mut self, other: &PhaseUsage) {
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// Call and token counters. Totals always equal the sum of the phases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Calls whose token counts were estimated.
    pub estimated_calls: u64,
    pub initial_planning: PhaseUsage,
    pub replanning: PhaseUsage,
    pub reasoning: PhaseUsage,
}

impl UsageLedger {
    pub fn record(&mut self, phase: Phase, result: &CompletionResult) {
        let usage =
            PhaseUsage { calls: 1, prompt_tokens: result.prompt_tokens, completion_tokens: result.completion_tokens };
        self.phase_mut(phase).add(&usage);
        self.calls += 1;
        self.prompt_tokens += result.prompt_tokens;
        self.completion_tokens += result.completion_tokens;
        self.estimated_calls += u64::from(result.estimated);
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for phase in Phase::ALL {
            self.phase_mut(phase).add(other.phase(phase));
        }
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.estimated_calls += other.estimated_calls;
    }

    pub fn phase(&self, phase: Phase) -> &PhaseUsage {
        [&self.initial_planning, &self.replanning, &self.reasoning][phase.index()]
    }

    fn phase_mut(&mut self, phase: Phase) -> &mut PhaseUsage {
        match phase {
            Phase::InitialPlanning => &mut self.initial_planning,
            Phase::Replanning => &mut self.replanning,
            Phase::Reasoning => &mut self.reasoning,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// One completion as seen by a single query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub phase: Phase,
    pub prompt_digest: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
}

/// Per-query record of completions with its own ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
    pub usage: UsageLedger,
}

/// Validates requests, retries transport failures and keeps a global ledger.
pub struct LlmGateway {
    provider: Box<dyn ChatProvider>,
    params: CompletionParams,
    retry: RetryPolicy,
    ledger: Mutex<UsageLedger>,
}

impl LlmGateway {
    pub fn new(provider: Box<dyn ChatProvider>, params: CompletionParams) -> Self {
        Self { provider, params, retry: RetryPolicy::default(), ledger: Mutex::new(UsageLedger::default()) }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn params(&self) -> &CompletionParams {
        &self.params
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn complete(&self, phase: Phase, messages: &[ChatMessage]) -> Result<CompletionResult, LlmError> {
        self.complete_with(phase, messages, &self.params)
    }

    pub fn complete_with(
        &self,
        phase: Phase,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        validate(messages)?;
        let reply = self.retry.run(|| self.provider.complete(messages, params))?;
        if reply.text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        let result = match reply.usage {
            Some((prompt_tokens, completion_tokens)) => {
                CompletionResult { text: reply.text, prompt_tokens, completion_tokens, estimated: false }
            }
            None => {
                let prompt: u64 = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
                let completion = estimate_tokens(&reply.text);
                CompletionResult {
                    text: reply.text,
                    prompt_tokens: prompt,
                    completion_tokens: completion,
                    estimated: true,
                }
            }
        };
        self.ledger.lock().expect("ledger lock").record(phase, &result);
        Ok(result)
    }
}

impl LlmGateway {
    /// [`LlmGateway::complete`], also recorded in `transcript`.
    pub fn exchange(
        &self,
        phase: Phase,
        messages: &[ChatMessage],
        transcript: &mut Transcript,
    ) -> Result<String, LlmError> {
        let result = self.complete(phase, messages)?;
        transcript.usage.record(phase, &result);
        transcript.exchanges.push(Exchange {
            phase,
            prompt_digest: messages_digest(messages),
            response: result.text.clone(),
            prompt_tokens: result.prompt_tokens,
            completion_tokens: result.completion_tokens,
            estimated: result.estimated,
        });
        Ok(result.text)
    }
}

fn validate(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.last() {
        None => return Err(LlmError::Contract("no messages".into())),
        Some(m) if m.role != Role::User => return Err(LlmError::Contract("last message must be from the user".into())),
        _ => {}
    }
    if let Some(i) = messages.iter().position(|m| m.role != Role::System && m.content.is_empty()) {
        return Err(LlmError::Contract(format!("message {i} has empty content")));
    }
    Ok(())
}

// SPDX-License-Identifier: Apache-2.0

//! LLM gateway: the completion contract, pluggable backends and the two
//! LLM-driven tasks (match verification and indirect inference).

mod mock;
pub mod prompts;
mod remote;
mod tasks;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use mock::MockBackend;
pub use remote::{RemoteBackend, RetryPolicy};
pub use tasks::{
    fit_indirect_prompt, heuristic_verify, infer_indirect, parse_suspects, parse_verification, verify,
    EntryScore, IndirectOutcome, VerificationVerdict,
    HEURISTIC_EXPLANATION,
};

pub const DEFAULT_MODEL: &str = "gpt-4-0613";
pub const DEFAULT_VERIFY_THRESHOLD: u8 = 50;
pub const DEFAULT_MAX_SUSPECTS: usize = 3;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
/// Hard cap on the indirect-inference user prompt, in bytes.
pub const DEFAULT_PROMPT_CAP: usize = 96 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Verify,
    Indirect,
}

impl TaskKind {
    pub fn key(self) -> &'static str {
        match self {
            TaskKind::Verify => "verify",
            TaskKind::Indirect => "indirect",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub task: TaskKind,
    /// Lookup key for scripted backends, e.g. `case1-verify`.
    pub fixture_key: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub model_id: String,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("network failure after {attempts} attempt(s): {message}")]
    NetworkFailure { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("no scripted fixture for key {0:?}")]
    MissingFixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
    Heuristic,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Mock => "mock",
            BackendKind::Remote => "remote",
            BackendKind::Heuristic => "heuristic",
        })
    }
}

pub trait LlmBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Sends an already validated request.
    fn send(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Local rule-based stand-in: it never calls a model. Verification is done
/// by [`heuristic_verify`] and indirect inference is disabled.
#[derive(Debug, Default, Clone, Copy)]
pub struct HeuristicBackend;

impl LlmBackend for HeuristicBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Heuristic
    }

    fn send(&self, _request: &CompletionRequest) -> Result<String, LlmError> {
        Ok(String::new())
    }
}

/// Validates the reproducibility contract, then dispatches.
pub fn complete(backend: &dyn LlmBackend, request: &CompletionRequest) -> Result<String, LlmError> {
    if request.temperature != 0.0 {
        return Err(LlmError::InvalidRequest(format!(
            "temperature must be 0, got {}",
            request.temperature
        )));
    }
    if request.model_id.trim().is_empty() {
        return Err(LlmError::InvalidRequest("empty model id".into()));
    }
    backend.send(request)
}

/// Knobs shared by both LLM tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    pub model_id: String,
    pub max_retries: u32,
    /// Prefix for scripted fixture keys (`<case>-verify`).
    pub fixture_case: Option<String>,
    pub verify_threshold: u8,
    pub max_suspects: usize,
    pub prompt_cap: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL.to_string(),
            max_retries: DEFAULT_MAX_RETRIES,
            fixture_case: None,
            verify_threshold: DEFAULT_VERIFY_THRESHOLD,
            max_suspects: DEFAULT_MAX_SUSPECTS,
            prompt_cap: DEFAULT_PROMPT_CAP,
        }
    }
}

impl LlmSettings {
    pub fn request(&self, task: TaskKind, system_prompt: String, user_prompt: String) -> CompletionRequest {
        let fixture_key = match &self.fixture_case {
            Some(case) => format!("{case}-{}", task.key()),
            None => task.key().to_string(),
        };
        CompletionRequest {
            task,
            fixture_key,
            system_prompt,
            user_prompt,
            temperature: 0.0,
            model_id: self.model_id.clone(),
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginPhase {
    /// Direct matches accepted without verification.
    DirectInference,
    Verification,
    IndirectInference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suspect {
    pub property: String,
    pub value: Option<String>,
    pub explanation: String,
    /// 1-based, dense.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectSet {
    pub suspects: Vec<Suspect>,
    pub origin_phase: OriginPhase,
}

impl SuspectSet {
    pub fn empty(origin_phase: OriginPhase) -> Self {
        Self { suspects: Vec::new(), origin_phase }
    }

    pub fn len(&self) -> usize {
        self.suspects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suspects.is_empty()
    }

    pub fn properties(&self) -> impl Iterator<Item = &str> {
        self.suspects.iter().map(|s| s.property.as_str())
    }
}

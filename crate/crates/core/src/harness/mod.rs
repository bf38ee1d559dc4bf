//! Everything needed to let an agent play trials: the chat protocol and
//! texts, model transports, scripted policies and the trial loop.

pub mod agents;
pub mod chat;
pub mod fewshot;
pub mod llm;
pub mod protocol;
pub mod transport;

use thiserror::Error;

use crate::game::GameError;
use crate::record::RecordError;
use crate::rr::RrError;

pub use agents::{
    Agent, FullRevealPolicy, PlayResult, Policy, PolicyAgent, RandomPolicy, ReplayAgent, RrPolicy, SessionStart,
    TakeDefaultPolicy, TrialContext,
};
pub use llm::{AgentTranscript, LlmAgent, LlmConfig, QuizResult};
pub use transport::{ChatTransport, TransportError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Rr(#[from] RrError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("few-shot quota \"{quota}\" needs {needed} qualifying trials, found {found}")]
    FewShotQuota { quota: String, needed: usize, found: usize },
    #[error("few-shot examples must be given exactly when the condition is few-shot")]
    FewShotMismatch,
    #[error("no recorded trial matches game {0}")]
    NoReplay(String),
    #[error("{0}")]
    Agent(String),
}

//! HTTP play service: the same trials, texts and records as agent runs,
//! for human participants in a browser.

pub mod http;
pub mod session;

use thiserror::Error;

use crate::game::GameError;
use crate::record::RecordError;
use crate::runner::RunnerError;

pub use http::{router, serve};
pub use session::{
    ActionRequest, ActionResponse, ClientAction, CreateSession, Created, ServiceConfig, SessionManager, SessionSummary,
    Stage, StateView,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    UnknownExperiment(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("expected action counter {expected}, got {got}")]
    StaleCounter { expected: u64, got: u64 },
    #[error("the quiz must be passed before playing")]
    QuizRequired,
    #[error("the quiz has already been passed")]
    QuizAlreadyPassed,
    #[error("all trials of this session are finished")]
    SessionFinished,
    #[error("illegal action: {0}")]
    IllegalAction(GameError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

impl ServiceError {
    /// HTTP status for the error.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::UnknownExperiment(_) | ServiceError::InvalidRequest(_) => 400,
            ServiceError::UnknownSession(_) => 404,
            ServiceError::StaleCounter { .. }
            | ServiceError::QuizRequired
            | ServiceError::QuizAlreadyPassed
            | ServiceError::SessionFinished => 409,
            ServiceError::IllegalAction(_) => 422,
            ServiceError::Game(_) | ServiceError::Record(_) | ServiceError::Runner(_) => 500,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownExperiment(_) => "unknown_experiment",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::StaleCounter { .. } => "stale_counter",
            ServiceError::QuizRequired => "quiz_required",
            ServiceError::QuizAlreadyPassed => "quiz_already_passed",
            ServiceError::SessionFinished => "session_finished",
            ServiceError::IllegalAction(_) => "illegal_action",
            ServiceError::Game(_) | ServiceError::Record(_) | ServiceError::Runner(_) => "internal",
        }
    }
}

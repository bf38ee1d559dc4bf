//! Schedules, the record store, experiment runs, ingestion and matching.

pub mod ingest;
pub mod matching;
pub mod run;
pub mod schedule;
pub mod store;

use std::path::PathBuf;

use thiserror::Error;

use crate::experiment::Experiment;
use crate::game::GameError;
use crate::harness::HarnessError;
use crate::record::RecordError;

pub use ingest::{ingest_human_data, IngestReport, Mapping};
pub use matching::{match_trials, Matching};
pub use run::{participant_id, play_trial, run_experiment, RunSpec, RunSummary};
pub use schedule::{build_schedule, run_schedule, PRACTICE_TRIALS};
pub use store::{read_records, Manifest};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{n_trials} trials is not a whole number of {experiment} blocks of {block_size}")]
    Indivisible { experiment: Experiment, n_trials: usize, block_size: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("mapping: {0}")]
    Mapping(String),
    #[error("{} holds a different run ({reason})", dir.display())]
    ManifestMismatch { dir: PathBuf, reason: String },
}

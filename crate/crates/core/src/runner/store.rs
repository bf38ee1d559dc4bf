//! Append-only JSON Lines files and the per-run manifest.
//!
//! A run directory holds `manifest.json`, `records.jsonl` and, for model
//! runs, `transcripts.jsonl`. Lines are flushed one at a time; a line cut
//! short by a crash is dropped when the file is next opened for appending.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::experiment::Experiment;
use crate::harness::QuizResult;
use crate::record::{AgentSummary, RecordError, TrialRecord, SCHEMA_VERSION};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

pub struct JsonlWriter {
    path: PathBuf,
    file: File,
}

impl JsonlWriter {
    /// Opens `path` for appending, creating it if needed and dropping an
    /// unterminated last line.
    pub fn open(path: &Path) -> Result<Self, RunnerError> {
        let mut file =
            OpenOptions::new().create(true).read(true).append(true).open(path).map_err(io_err(path))?;
        let len = file.metadata().map_err(io_err(path))?.len();
        if len > 0 {
            let mut bytes = Vec::with_capacity(len as usize);
            file.seek(SeekFrom::Start(0)).map_err(io_err(path))?;
            file.read_to_end(&mut bytes).map_err(io_err(path))?;
            if bytes.last() != Some(&b'\n') {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                log::warn!("{}: dropping unterminated last line", path.display());
                file.set_len(keep as u64).map_err(io_err(path))?;
            }
        }
        Ok(JsonlWriter { path: path.to_path_buf(), file })
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<(), RunnerError> {
        let mut line = serde_json::to_vec(value).map_err(|e| RunnerError::Parse {
            path: self.path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

/// Reads every line of a JSON Lines file. A missing file reads as empty.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunnerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RunnerError::Io { path: path.to_path_buf(), source: e }),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| RunnerError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Reads trial records, checking each schema version before decoding.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, RunnerError> {
    let path = if path.is_dir() { path.join(RECORDS_FILE) } else { path.to_path_buf() };
    let values: Vec<serde_json::Value> = read_jsonl(&path)?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let found = v.get("schema_version").and_then(|s| s.as_u64()).unwrap_or(0) as u32;
            if found != SCHEMA_VERSION {
                return Err(RunnerError::Record(RecordError::SchemaVersion { found }));
            }
            serde_json::from_value(v).map_err(|e| RunnerError::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<(), RunnerError> {
    let mut w = JsonlWriter::open(path)?;
    records.iter().try_for_each(|r| w.append(r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub participant_id: String,
    pub experiment: Experiment,
    pub agent: AgentSummary,
    pub n_trials: usize,
    pub master_seed: u64,
    pub created_unix: u64,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quiz: Option<QuizResult>,
    #[serde(default)]
    pub complete: usize,
    #[serde(default)]
    pub aborted: usize,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Manifest>, RunnerError> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| RunnerError::Parse { path, line: 0, message: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RunnerError::Io { path, source: e }),
        }
    }

    /// Writes through a temporary file so the manifest is never half-written.
    pub fn save(&self, dir: &Path) -> Result<(), RunnerError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(".manifest.json.tmp");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text + "\n").map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

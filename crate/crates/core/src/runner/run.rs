//! Executes a schedule with one agent: quiz, practice, then test trials on
//! a pool of workers, with a single writer appending records.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use super::schedule::{run_schedule, PRACTICE_TRIALS};
use super::store::{read_records, JsonlWriter, Manifest, RECORDS_FILE, TRANSCRIPTS_FILE};
use super::RunnerError;
use crate::experiment::Experiment;
use crate::harness::{Agent, AgentTranscript, TrialContext};
use crate::nudge::RevealOptimizer;
use crate::record::{AgentSummary, RecordStatus, TrialRecord, TrialSpec, SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub experiment: Experiment,
    /// Test trials; two practice trials come on top.
    pub n_trials: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Defaults to `<experiment>-s<seed>`.
    pub run_id: Option<String>,
    pub workers: usize,
}

impl RunSpec {
    pub fn new(experiment: Experiment, n_trials: usize, master_seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        RunSpec { experiment, n_trials, master_seed, out_dir: out_dir.into(), run_id: None, workers: 1 }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}-s{}", self.experiment, self.master_seed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub participant_id: String,
    /// Trials played by this invocation.
    pub complete: usize,
    pub aborted: usize,
    /// Trials found already recorded and skipped.
    pub resumed: usize,
}

/// Participant identity of an agent run: model and condition, plus run id.
pub fn participant_id(agent: &AgentSummary, run_id: &str) -> String {
    format!("{}@{run_id}", agent.label())
}

/// Materializes and plays one trial. Agent failures become aborted records;
/// only an unmaterializable spec is an error.
pub fn play_trial(
    spec: &TrialSpec,
    agent: &mut dyn Agent,
    optimizer: Option<&dyn RevealOptimizer>,
    run_id: &str,
    participant_id: &str,
) -> Result<(TrialRecord, Option<AgentTranscript>), RunnerError> {
    let materialized = spec.materialize(optimizer)?;
    let initial = materialized.initial_state()?;
    let ctx = TrialContext { spec, first_in_phase: spec.trial_index == 0 || spec.trial_index == PRACTICE_TRIALS };
    let (state, mut transcript, flags) = match agent.play(&ctx, initial.clone()) {
        Ok(r) => (r.state, r.transcript, r.flags),
        Err(e) => (initial, None, vec![format!("error: {e}")]),
    };
    let mut record = TrialRecord::from_state(spec.clone(), &materialized, &state, agent.summary(), run_id, participant_id);
    record.flags = flags;
    if let Some(t) = transcript.as_mut() {
        t.id = format!("{participant_id}/{}", spec.trial_index);
        record.transcript_id = Some(t.id.clone());
    }
    if record.status == RecordStatus::Aborted {
        log::warn!("trial {} aborted: {}", spec.trial_index, record.flags.join("; "));
    }
    Ok((record, transcript))
}

/// Runs (or resumes) an experiment. Trials already recorded for this
/// participant are skipped, so re-running after an interruption completes
/// the run without duplicates.
pub fn run_experiment(
    spec: &RunSpec,
    mut agent: Box<dyn Agent>,
    optimizer: Option<&dyn RevealOptimizer>,
) -> Result<RunSummary, RunnerError> {
    let dir = &spec.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| RunnerError::Io { path: dir.clone(), source })?;
    let summary = agent.summary();
    let run_id = spec.run_id();
    let pid = participant_id(&summary, &run_id);

    let previous = Manifest::load(dir)?;
    if let Some(m) = &previous {
        if m.experiment != spec.experiment || m.master_seed != spec.master_seed || m.participant_id != pid {
            return Err(RunnerError::ManifestMismatch {
                dir: dir.clone(),
                reason: format!("found {} / seed {} / {}", m.experiment, m.master_seed, m.participant_id),
            });
        }
    }
    // Opening the writer first drops a line left half-written by a crash.
    let mut records = JsonlWriter::open(&dir.join(RECORDS_FILE))?;
    let existing = read_records(&dir.join(RECORDS_FILE))?;
    let done: HashSet<usize> =
        existing.iter().filter(|r| r.participant_id == pid).map(|r| r.spec.trial_index).collect();
    let todo: Vec<TrialSpec> = run_schedule(spec.experiment, spec.n_trials, spec.master_seed)
        .into_iter()
        .filter(|s| !done.contains(&s.trial_index))
        .collect();

    let mut manifest = previous.unwrap_or_else(|| Manifest {
        schema_version: SCHEMA_VERSION,
        run_id: run_id.clone(),
        participant_id: pid.clone(),
        experiment: spec.experiment,
        agent: summary.clone(),
        n_trials: spec.n_trials,
        master_seed: spec.master_seed,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        quiz: None,
        complete: 0,
        aborted: 0,
    });
    manifest.n_trials = manifest.n_trials.max(spec.n_trials);
    let mut result = RunSummary { dir: dir.clone(), participant_id: pid.clone(), complete: 0, aborted: 0, resumed: done.len() };
    if todo.is_empty() {
        manifest.save(dir)?;
        return Ok(result);
    }

    let mut transcripts: Option<JsonlWriter> = None;
    let start = agent.begin_session(spec.experiment)?;
    if let Some(mut t) = start.transcript {
        t.id = format!("{pid}/session");
        transcripts.get_or_insert(JsonlWriter::open(&dir.join(TRANSCRIPTS_FILE))?).append(&t)?;
    }
    if start.quiz.is_some() {
        manifest.quiz = start.quiz;
    }
    manifest.save(dir)?;

    let workers: Vec<Box<dyn Agent>> = (0..spec.workers.clamp(1, todo.len())).map(|_| agent.fork()).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    let outcome = std::thread::scope(|scope| -> Result<(), RunnerError> {
        for mut worker in workers {
            let tx = tx.clone();
            let (todo, next, stop, run_id, pid) = (&todo, &next, &stop, &run_id, &pid);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= todo.len() || stop.load(Ordering::Relaxed) {
                    break;
                }
                let played = play_trial(&todo[i], worker.as_mut(), optimizer, run_id, pid);
                if tx.send(played).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for played in rx {
            let (record, transcript) = match played {
                Ok(p) => p,
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    return Err(e);
                }
            };
            if let Some(t) = transcript {
                let path = dir.join(TRANSCRIPTS_FILE);
                if transcripts.is_none() {
                    transcripts = Some(JsonlWriter::open(&path)?);
                }
                transcripts.as_mut().expect("opened above").append(&t)?;
            }
            records.append(&record)?;
            match record.status {
                RecordStatus::Complete => result.complete += 1,
                RecordStatus::Aborted => result.aborted += 1,
            }
        }
        Ok(())
    });
    manifest.complete += result.complete;
    manifest.aborted += result.aborted;
    manifest.save(dir)?;
    outcome.map(|()| result)
}

//! Server-side sessions for human players.
//!
//! Every accepted action is first written to a JSON Lines journal and only
//! then applied, so a restarted server rebuilds every session by replaying
//! the journal. Trial records go to `records.jsonl` in the same format as
//! agent runs.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::experiment::Experiment;
use crate::game::{render_final, render_table, Action, Observation, Outcome, Phase, TrialState};
use crate::harness::protocol::{grade, Protocol};
use crate::nudge::NudgeVariant;
use crate::record::{AgentKind, AgentSummary, Materialized, TrialRecord, TrialSpec};
use crate::rr::{OptimalNudger, OptimizerConfig};
use crate::runner::store::{read_jsonl, JsonlWriter, RECORDS_FILE};
use crate::runner::{run_schedule, PRACTICE_TRIALS};

pub const JOURNAL_FILE: &str = "journal.jsonl";
/// Upper bound on test trials per session.
pub const MAX_TRIALS: usize = 1000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub out_dir: PathBuf,
    /// Test trials when the request does not say; `None` means one
    /// schedule block of the experiment.
    pub default_trials: Option<usize>,
    pub optimizer: OptimizerConfig,
}

impl ServiceConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig { out_dir: out_dir.into(), default_trials: None, optimizer: OptimizerConfig::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    pub experiment: String,
    #[serde(default)]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub question: String,
    pub options: Vec<String>,
}

/// The quiz without its answer key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizPayload {
    pub intro: String,
    pub questions: Vec<QuizQuestion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub participant_id: String,
    pub experiment: Experiment,
    pub practice_trials: usize,
    pub test_trials: usize,
    pub instructions: String,
    pub quiz: QuizPayload,
    pub state: StateView,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientAction {
    QuizAnswers { answers: Vec<String> },
    Reveal { prize: usize, basket: usize },
    Select { basket: usize },
    DefaultDecision { accept: bool },
}

/// `counter` must be one more than the number of actions accepted so far;
/// a replayed or out-of-order request is rejected without effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRequest {
    pub counter: u64,
    pub action: ClientAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Quiz,
    Trial,
    Finished,
}

/// The current trial as the player sees it. Hidden cells are `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_index: usize,
    pub practice: bool,
    /// Practice or test announcement, when one applies to this trial.
    pub banner: Option<String>,
    pub phase: Phase,
    pub observation: Observation,
    /// The same table text language-model agents receive.
    pub table: String,
    pub default_offer_text: Option<String>,
    pub suggestion_text: Option<String>,
    pub cost_banner: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub participant_id: String,
    pub experiment: Experiment,
    pub stage: Stage,
    /// Actions accepted so far; the next request must carry `counter + 1`.
    pub counter: u64,
    pub quiz_attempts: u32,
    pub trial: Option<TrialView>,
    pub completed_trials: usize,
    pub total_trials: usize,
    /// Net points over finished test trials (practice is unpaid).
    pub test_net: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizFeedback {
    pub passed: bool,
    pub attempts: u32,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub practice: bool,
    pub selection: usize,
    pub outcome: Outcome,
    /// Final table and the prizes won.
    pub final_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub participant_id: String,
    pub experiment: Experiment,
    pub finished: bool,
    pub trials: Vec<TrialResult>,
    pub test_net: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionResponse {
    pub state: StateView,
    pub quiz: Option<QuizFeedback>,
    pub trial_result: Option<TrialResult>,
    /// Present once the last trial is finished.
    pub summary: Option<SessionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum JournalEntry {
    Create {
        session_id: String,
        participant_id: String,
        experiment: Experiment,
        seed: u64,
        n_trials: usize,
        at_ms: u64,
    },
    Action {
        session_id: String,
        counter: u64,
        action: ClientAction,
        at_ms: u64,
    },
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone)]
struct Active {
    spec: TrialSpec,
    materialized: Materialized,
    state: TrialState,
}

#[derive(Debug, Clone)]
struct Session {
    id: String,
    participant_id: String,
    experiment: Experiment,
    schedule: Vec<TrialSpec>,
    cursor: usize,
    current: Option<Active>,
    quiz_attempts: u32,
    quiz_passed: bool,
    counter: u64,
    created_ms: u64,
    updated_ms: u64,
    results: Vec<TrialResult>,
}

/// What one accepted action produced.
struct Step {
    quiz: Option<QuizFeedback>,
    finished: Option<(TrialRecord, TrialResult)>,
}

impl Session {
    fn run_id(&self) -> String {
        format!("play-{}", self.id)
    }

    fn stage(&self) -> Stage {
        if !self.quiz_passed {
            Stage::Quiz
        } else if self.current.is_some() {
            Stage::Trial
        } else {
            Stage::Finished
        }
    }

    fn load(&mut self, optimizer: &OptimalNudger) -> Result<(), ServiceError> {
        self.current = match self.schedule.get(self.cursor) {
            Some(spec) => {
                let materialized = spec.materialize(Some(optimizer))?;
                let state = materialized.initial_state()?;
                Some(Active { spec: spec.clone(), materialized, state })
            }
            None => None,
        };
        Ok(())
    }

    fn test_net(&self) -> i64 {
        self.results.iter().filter(|r| !r.practice).map(|r| r.outcome.net).sum()
    }

    fn view(&self, protocol: &Protocol) -> StateView {
        let texts = protocol.experiment(self.experiment);
        let trial = self.current.as_ref().filter(|_| self.quiz_passed).map(|a| {
            let i = a.spec.trial_index;
            let banner = if a.spec.practice {
                Some(texts.practice.clone())
            } else if i == PRACTICE_TRIALS {
                Some(texts.test.clone())
            } else {
                None
            };
            let suggestion = a.state.visible_suggestion().filter(|_| {
                a.spec.variant == NudgeVariant::SuggestionEarly || a.state.phase() == Phase::LateSuggestion
            });
            TrialView {
                trial_index: i,
                practice: a.spec.practice,
                banner,
                phase: a.state.phase(),
                observation: a.state.observation(),
                table: render_table(&a.state),
                default_offer_text: a.state.default_offer().map(|b| protocol.default_offer_text(b)),
                suggestion_text: suggestion.map(|s| protocol.suggestion_text(s)),
                cost_banner: a.state.cost_banner(),
            }
        });
        StateView {
            session_id: self.id.clone(),
            participant_id: self.participant_id.clone(),
            experiment: self.experiment,
            stage: self.stage(),
            counter: self.counter,
            quiz_attempts: self.quiz_attempts,
            trial,
            completed_trials: self.results.len(),
            total_trials: self.schedule.len(),
            test_net: self.test_net(),
        }
    }

    fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            participant_id: self.participant_id.clone(),
            experiment: self.experiment,
            finished: self.quiz_passed && self.current.is_none(),
            trials: self.results.clone(),
            test_net: self.test_net(),
        }
    }

    /// Applies one action. On error `self` is left unchanged.
    fn step(&mut self, action: &ClientAction, protocol: &Protocol, optimizer: &OptimalNudger) -> Result<Step, ServiceError> {
        let game_action = match *action {
            ClientAction::QuizAnswers { ref answers } => {
                if self.quiz_passed {
                    return Err(ServiceError::QuizAlreadyPassed);
                }
                let items = &protocol.experiment(self.experiment).quiz;
                if answers.len() != items.len() {
                    return Err(ServiceError::InvalidRequest(format!(
                        "expected {} quiz answers, got {}",
                        items.len(),
                        answers.len()
                    )));
                }
                let given: Vec<Option<String>> = answers.iter().map(|a| Some(a.clone())).collect();
                let passed = grade(items, &given).iter().all(|&ok| ok);
                self.quiz_attempts += 1;
                self.quiz_passed = passed;
                self.counter += 1;
                self.updated_ms = now_ms();
                let message = (!passed).then(|| protocol.experiment(self.experiment).quiz_failure.clone());
                return Ok(Step { quiz: Some(QuizFeedback { passed, attempts: self.quiz_attempts, message }), finished: None });
            }
            ClientAction::Reveal { prize, basket } => Action::reveal(prize, basket),
            ClientAction::Select { basket } => Action::Select { basket },
            ClientAction::DefaultDecision { accept } => Action::DefaultDecision { accept },
        };
        if !self.quiz_passed {
            return Err(ServiceError::QuizRequired);
        }
        let active = self.current.as_mut().ok_or(ServiceError::SessionFinished)?;
        active.state.apply(game_action).map_err(ServiceError::IllegalAction)?;
        self.counter += 1;
        self.updated_ms = now_ms();
        if !active.state.is_done() {
            return Ok(Step { quiz: None, finished: None });
        }
        let active = self.current.take().expect("active trial");
        let outcome = active.state.finalize()?;
        let result = TrialResult {
            trial_index: active.spec.trial_index,
            practice: active.spec.practice,
            selection: active.state.selection().expect("finished trial has a selection"),
            outcome,
            final_text: render_final(&active.state)?,
        };
        let record = TrialRecord::from_state(
            active.spec,
            &active.materialized,
            &active.state,
            AgentSummary::new(AgentKind::Human),
            &self.run_id(),
            &self.participant_id,
        );
        self.results.push(result.clone());
        self.cursor += 1;
        self.load(optimizer)?;
        Ok(Step { quiz: None, finished: Some((record, result)) })
    }
}

/// All sessions of one server, with their journal and record files.
pub struct SessionManager {
    config: ServiceConfig,
    protocol: &'static Protocol,
    optimizer: OptimalNudger,
    sessions: HashMap<String, Session>,
    journal: JsonlWriter,
    records: JsonlWriter,
    /// (run id, trial index) of every record on disk.
    recorded: HashSet<(String, usize)>,
}

impl SessionManager {
    /// Opens `out_dir`, replaying any existing journal so earlier sessions
    /// continue where they stopped. Records lost to a crash between the
    /// journal write and the record write are written again.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let dir = &config.out_dir;
        std::fs::create_dir_all(dir).map_err(|source| crate::runner::RunnerError::Io { path: dir.clone(), source })?;
        let journal_path = dir.join(JOURNAL_FILE);
        let records_path = dir.join(RECORDS_FILE);
        // Opening first drops a torn last line before anything is read.
        let journal = JsonlWriter::open(&journal_path)?;
        let records = JsonlWriter::open(&records_path)?;
        let recorded = read_jsonl::<TrialRecord>(&records_path)?
            .into_iter()
            .map(|r| (r.run_id, r.spec.trial_index))
            .collect();
        let mut manager = SessionManager {
            optimizer: OptimalNudger { config: config.optimizer },
            config,
            protocol: Protocol::builtin(),
            sessions: HashMap::new(),
            journal,
            records,
            recorded,
        };
        for entry in read_jsonl::<JournalEntry>(&journal_path)? {
            manager.replay(entry)?;
        }
        Ok(manager)
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn replay(&mut self, entry: JournalEntry) -> Result<(), ServiceError> {
        match entry {
            JournalEntry::Create { session_id, participant_id, experiment, seed, n_trials, at_ms } => {
                let session = self.new_session(session_id, participant_id, experiment, seed, n_trials, at_ms)?;
                self.sessions.insert(session.id.clone(), session);
            }
            JournalEntry::Action { session_id, counter, action, .. } => {
                let session = self.sessions.get_mut(&session_id).ok_or(ServiceError::UnknownSession(session_id))?;
                if counter != session.counter + 1 {
                    return Err(ServiceError::StaleCounter { expected: session.counter + 1, got: counter });
                }
                let step = session.step(&action, self.protocol, &self.optimizer)?;
                if let Some((record, _)) = step.finished {
                    self.write_record(&record)?;
                }
            }
        }
        Ok(())
    }

    fn new_session(
        &self,
        id: String,
        participant_id: String,
        experiment: Experiment,
        seed: u64,
        n_trials: usize,
        at_ms: u64,
    ) -> Result<Session, ServiceError> {
        let mut session = Session {
            id,
            participant_id,
            experiment,
            schedule: run_schedule(experiment, n_trials, seed),
            cursor: 0,
            current: None,
            quiz_attempts: 0,
            quiz_passed: false,
            counter: 0,
            created_ms: at_ms,
            updated_ms: at_ms,
            results: Vec::new(),
        };
        session.load(&self.optimizer)?;
        Ok(session)
    }

    fn write_record(&mut self, record: &TrialRecord) -> Result<(), ServiceError> {
        let key = (record.run_id.clone(), record.spec.trial_index);
        if self.recorded.contains(&key) {
            return Ok(());
        }
        record.validate()?;
        self.records.append(record)?;
        self.recorded.insert(key);
        Ok(())
    }

    pub fn create(&mut self, request: CreateSession) -> Result<Created, ServiceError> {
        let experiment: Experiment = request.experiment.parse().map_err(ServiceError::UnknownExperiment)?;
        let n_trials = request.n_trials.or(self.config.default_trials).unwrap_or(experiment.block_size());
        if n_trials == 0 || n_trials > MAX_TRIALS {
            return Err(ServiceError::InvalidRequest(format!("n_trials must be between 1 and {MAX_TRIALS}")));
        }
        let mut id = format!("{:016x}", rand::random::<u64>());
        while self.sessions.contains_key(&id) {
            id = format!("{:016x}", rand::random::<u64>());
        }
        let participant_id = match request.participant_id {
            Some(p) if p.trim().is_empty() => {
                return Err(ServiceError::InvalidRequest("participant_id must not be blank".into()))
            }
            Some(p) => p,
            None => format!("human-{id}"),
        };
        let seed = request.seed.unwrap_or_else(rand::random);
        let at_ms = now_ms();
        let session = self.new_session(id.clone(), participant_id.clone(), experiment, seed, n_trials, at_ms)?;
        self.journal.append(&JournalEntry::Create {
            session_id: id.clone(),
            participant_id: participant_id.clone(),
            experiment,
            seed,
            n_trials,
            at_ms,
        })?;
        let texts = self.protocol.experiment(experiment);
        let created = Created {
            session_id: id.clone(),
            participant_id,
            experiment,
            practice_trials: PRACTICE_TRIALS,
            test_trials: n_trials,
            instructions: texts.instructions.clone(),
            quiz: QuizPayload {
                intro: texts.quiz_intro.clone(),
                questions: texts
                    .quiz
                    .iter()
                    .map(|q| QuizQuestion { question: q.question.clone(), options: q.options.clone() })
                    .collect(),
            },
            state: session.view(self.protocol),
        };
        self.sessions.insert(id, session);
        Ok(created)
    }

    fn session(&self, id: &str) -> Result<&Session, ServiceError> {
        self.sessions.get(id).ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn state(&self, id: &str) -> Result<StateView, ServiceError> {
        Ok(self.session(id)?.view(self.protocol))
    }

    pub fn result(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        Ok(self.session(id)?.summary())
    }

    /// Checks the counter, applies the action to a copy of the session,
    /// journals it, then commits. Rejected actions change nothing.
    pub fn act(&mut self, id: &str, request: ActionRequest) -> Result<ActionResponse, ServiceError> {
        let session = self.session(id)?;
        if request.counter != session.counter + 1 {
            return Err(ServiceError::StaleCounter { expected: session.counter + 1, got: request.counter });
        }
        let mut next = session.clone();
        let step = next.step(&request.action, self.protocol, &self.optimizer)?;
        self.journal.append(&JournalEntry::Action {
            session_id: id.to_string(),
            counter: request.counter,
            action: request.action,
            at_ms: next.updated_ms,
        })?;
        let trial_result = match step.finished {
            Some((record, result)) => {
                self.write_record(&record)?;
                Some(result)
            }
            None => None,
        };
        let response = ActionResponse {
            state: next.view(self.protocol),
            quiz: step.quiz,
            summary: (next.quiz_passed && next.current.is_none()).then(|| next.summary()),
            trial_result,
        };
        self.sessions.insert(id.to_string(), next);
        Ok(response)
    }

    /// Creation and last-activity times (Unix milliseconds) of a session.
    pub fn timestamps(&self, id: &str) -> Result<(u64, u64), ServiceError> {
        let s = self.session(id)?;
        Ok((s.created_ms, s.updated_ms))
    }
}

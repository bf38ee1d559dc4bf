//! Trial specifications and the canonical persisted trial record.
//!
//! Every producer (agent runs, the play service, ingested human data) emits
//! [`TrialRecord`]s, and every consumer (analysis, few-shot sampling,
//! matching) reads only them. A record carries the full game, so its
//! outcome can always be recomputed from its events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{Condition, Experiment};
use crate::game::{self, CostSchedule, Event, Game, GameConfig, GameError, Outcome, TrialState};
use crate::nudge::{self, NudgeError, NudgeSpec, NudgeVariant, RevealMode, RevealOptimizer};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Nudge(#[from] NudgeError),
    #[error("event log does not replay: {0}")]
    Replay(String),
    #[error("record is marked complete but the trial is unfinished")]
    Unfinished,
    #[error("recorded outcome {recorded:?} differs from recomputed {recomputed:?}")]
    OutcomeMismatch { recorded: Option<Outcome>, recomputed: Option<Outcome> },
    #[error("optimal reveals need an optimizer")]
    MissingOptimizer,
}

/// One scheduled game: everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub experiment: Experiment,
    pub trial_index: usize,
    pub seed: u64,
    pub config: GameConfig,
    pub variant: NudgeVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_mode: Option<RevealMode>,
    pub practice: bool,
}

/// Nudge-related quantities that are defined for control trials too.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    /// Basket the default rule picks (offered only on default trials).
    pub default_basket: usize,
    /// Prize a highlighting trial has (or would have) on sale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlighted_prize: Option<usize>,
}

/// A spec turned into a concrete game and intervention.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub game: Game,
    pub nudge: NudgeSpec,
    pub cost_schedule: CostSchedule,
    pub cost_banner: bool,
    pub reference: Reference,
}

impl Materialized {
    pub fn initial_state(&self) -> Result<TrialState, GameError> {
        TrialState::new(self.game.clone(), self.cost_schedule.clone(), self.nudge.clone(), self.cost_banner)
    }
}

impl TrialSpec {
    /// Samples the game and builds the nudge. Pure in the spec (and the
    /// optimizer's own seed handling).
    pub fn materialize(&self, optimizer: Option<&dyn RevealOptimizer>) -> Result<Materialized, RecordError> {
        let game = game::sample_game(self.config, self.seed)?;
        let default_basket = nudge::default_basket(&game, self.seed);
        let highlighted_prize = match self.experiment {
            Experiment::Highlight => Some(nudge::highlight_prize(&game, self.seed)?),
            _ => None,
        };
        let uniform = CostSchedule::uniform(game.n_prizes(), self.config.reveal_cost_default);
        let (nudge, cost_schedule) = match self.variant {
            NudgeVariant::None => (NudgeSpec::none(), uniform),
            NudgeVariant::Default => (NudgeSpec::default_option(default_basket), uniform),
            NudgeVariant::SuggestionEarly => {
                (nudge::make_suggestion(&game, nudge::SuggestionTiming::Early, self.seed)?, uniform)
            }
            NudgeVariant::SuggestionLate => {
                (nudge::make_suggestion(&game, nudge::SuggestionTiming::Late, self.seed)?, uniform)
            }
            NudgeVariant::Highlight => nudge::highlight_schedule(&game, self.seed)?,
            NudgeVariant::InitialReveals => {
                let mode = self.reveal_mode.unwrap_or(RevealMode::Random);
                if mode == RevealMode::Optimal && optimizer.is_none() {
                    return Err(RecordError::MissingOptimizer);
                }
                (nudge::initial_reveals(&game, mode, self.seed, optimizer)?, uniform)
            }
        };
        Ok(Materialized {
            game,
            nudge,
            cost_schedule,
            cost_banner: self.experiment.cost_banner(),
            reference: Reference { default_basket, highlighted_prize },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Llm,
    Random,
    TakeDefault,
    FullReveal,
    Rr,
    Replay,
    Human,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Llm => "llm",
            AgentKind::Random => "random",
            AgentKind::TakeDefault => "take_default",
            AgentKind::FullReveal => "full_reveal",
            AgentKind::Rr => "rr",
            AgentKind::Replay => "replay",
            AgentKind::Human => "human",
        }
    }
}

/// Who played a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default)]
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl AgentSummary {
    pub fn new(kind: AgentKind) -> Self {
        AgentSummary { kind, model_name: None, condition: Condition::Base, temperature: None }
    }

    /// Label used to group records: the model name for language models,
    /// the agent kind otherwise.
    pub fn label(&self) -> String {
        match &self.model_name {
            Some(m) => m.clone(),
            None => self.kind.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub participant_id: String,
    pub spec: TrialSpec,
    pub game: Game,
    pub nudge: NudgeSpec,
    pub cost_schedule: CostSchedule,
    #[serde(default)]
    pub cost_banner: bool,
    pub reference: Reference,
    pub events: Vec<Event>,
    pub outcome: Option<Outcome>,
    pub agent: AgentSummary,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_id: Option<String>,
    /// Free-form markers such as "quiz_failed" or "malformed_tool_calls".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl TrialRecord {
    /// Record of a finished or abandoned trial.
    pub fn from_state(
        spec: TrialSpec,
        materialized: &Materialized,
        state: &TrialState,
        agent: AgentSummary,
        run_id: &str,
        participant_id: &str,
    ) -> Self {
        let outcome = state.finalize().ok();
        TrialRecord {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_string(),
            participant_id: participant_id.to_string(),
            spec,
            game: materialized.game.clone(),
            nudge: materialized.nudge.clone(),
            cost_schedule: materialized.cost_schedule.clone(),
            cost_banner: materialized.cost_banner,
            reference: materialized.reference,
            events: state.events().to_vec(),
            outcome,
            agent,
            status: if outcome.is_some() { RecordStatus::Complete } else { RecordStatus::Aborted },
            transcript_id: None,
            flags: Vec::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RecordStatus::Complete
    }

    pub fn initial_state(&self) -> Result<TrialState, GameError> {
        TrialState::new(self.game.clone(), self.cost_schedule.clone(), self.nudge.clone(), self.cost_banner)
    }

    /// Re-applies the event log to a fresh trial.
    pub fn replay(&self) -> Result<TrialState, RecordError> {
        self.initial_state()?.replay(&self.events).map_err(RecordError::Replay)
    }

    /// Checks the schema version, that the events replay against the game,
    /// and that the stored outcome is the recomputed one.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(RecordError::SchemaVersion { found: self.schema_version });
        }
        let state = self.replay()?;
        let recomputed = state.finalize().ok();
        if self.status == RecordStatus::Complete && recomputed.is_none() {
            return Err(RecordError::Unfinished);
        }
        if self.outcome != recomputed {
            return Err(RecordError::OutcomeMismatch { recorded: self.outcome, recomputed });
        }
        Ok(())
    }

    pub fn is_nudge(&self) -> bool {
        self.nudge.variant != NudgeVariant::None
    }

    /// Reveals the player paid for; free reveals are not events.
    pub fn paid_reveals(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Reveal { .. })).count()
    }

    /// Reveals made before the first selection (or default decision that
    /// ended the trial).
    pub fn reveals_before_first_choice(&self) -> usize {
        self.events
            .iter()
            .take_while(|e| !matches!(e, Event::Select { .. } | Event::DefaultDecision { accept: true, .. }))
            .filter(|e| matches!(e, Event::Reveal { .. }))
            .count()
    }

    pub fn first_reveal(&self) -> Option<game::CellRef> {
        self.events.iter().find_map(|e| match e {
            Event::Reveal { cell, .. } => Some(*cell),
            _ => None,
        })
    }

    pub fn reveal_cells(&self) -> impl Iterator<Item = game::CellRef> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Reveal { cell, .. } => Some(*cell),
            _ => None,
        })
    }

    /// First basket chosen: the default when accepted, else the first Select.
    pub fn first_selection(&self) -> Option<usize> {
        self.events.iter().find_map(|e| match *e {
            Event::Select { basket, .. } => Some(basket),
            Event::DefaultDecision { accept: true, basket, .. } => Some(basket),
            _ => None,
        })
    }

    pub fn final_selection(&self) -> Option<usize> {
        self.events.iter().rev().find_map(|e| match *e {
            Event::Select { basket, .. } => Some(basket),
            Event::DefaultDecision { accept: true, basket, .. } => Some(basket),
            _ => None,
        })
    }

    /// `Some(accept)` if a default was offered and answered.
    pub fn default_decision(&self) -> Option<bool> {
        self.events.iter().find_map(|e| match *e {
            Event::DefaultDecision { accept, .. } => Some(accept),
            _ => None,
        })
    }

    pub fn net(&self) -> Option<i64> {
        self.outcome.map(|o| o.net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Action;

    fn spec(variant: NudgeVariant, experiment: Experiment, config: GameConfig) -> TrialSpec {
        TrialSpec { experiment, trial_index: 0, seed: 17, config, variant, reveal_mode: None, practice: false }
    }

    #[test]
    fn record_round_trips_and_validates() {
        let s = spec(NudgeVariant::Default, Experiment::Default, GameConfig::new(2, 5, 2).unwrap());
        let m = s.materialize(None).unwrap();
        let mut state = m.initial_state().unwrap();
        state.apply(Action::DefaultDecision { accept: false }).unwrap();
        state.apply(Action::reveal(0, 0)).unwrap();
        state.apply(Action::Select { basket: 1 }).unwrap();
        let rec = TrialRecord::from_state(s, &m, &state, AgentSummary::new(AgentKind::Random), "r", "p");
        rec.validate().unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        let back: TrialRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.reveals_before_first_choice(), 1);
        assert_eq!(back.default_decision(), Some(false));
        assert_eq!(back.first_selection(), Some(1));

        let mut tampered = rec.clone();
        tampered.outcome.as_mut().unwrap().net += 1;
        assert!(matches!(tampered.validate(), Err(RecordError::OutcomeMismatch { .. })));
        let mut old = rec;
        old.schema_version = 0;
        assert!(matches!(old.validate(), Err(RecordError::SchemaVersion { found: 0 })));
    }

    #[test]
    fn highlight_control_carries_reference_prize() {
        let s = spec(NudgeVariant::None, Experiment::Highlight, GameConfig::new(3, 5, 3).unwrap());
        let m = s.materialize(None).unwrap();
        assert!(m.reference.highlighted_prize.is_some());
        assert_eq!(m.cost_schedule.0, vec![3, 3, 3]);
        assert!(m.cost_banner);
    }

    #[test]
    fn optimal_spec_needs_optimizer() {
        let mut s = spec(NudgeVariant::InitialReveals, Experiment::Optimal, GameConfig::new(5, 5, 2).unwrap());
        s.reveal_mode = Some(RevealMode::Optimal);
        assert!(matches!(s.materialize(None), Err(RecordError::MissingOptimizer)));
    }
}

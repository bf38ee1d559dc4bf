//! Scripted policies and the session-level [`Agent`] interface shared with
//! the language-model agent.

use std::sync::Arc;

use rand::Rng as _;

use super::llm::{AgentTranscript, QuizResult};
use super::HarnessError;
use crate::experiment::Experiment;
use crate::game::{Action, Observation, Phase, TrialState};
use crate::record::{AgentKind, AgentSummary, TrialRecord, TrialSpec};
use crate::rng::{self, Rng, Stream};
use crate::rr;

/// Per-trial information an agent may use besides the game itself.
#[derive(Debug, Clone, Copy)]
pub struct TrialContext<'a> {
    pub spec: &'a TrialSpec,
    /// First trial of the practice or the test phase (announcements go here).
    pub first_in_phase: bool,
}

#[derive(Debug, Clone)]
pub struct PlayResult {
    /// Finished, or abandoned part-way (see `flags`).
    pub state: TrialState,
    pub transcript: Option<AgentTranscript>,
    pub flags: Vec<String>,
}

impl PlayResult {
    pub fn plain(state: TrialState) -> Self {
        PlayResult { state, transcript: None, flags: Vec::new() }
    }
}

/// What happened before the first trial of a session.
#[derive(Debug, Clone, Default)]
pub struct SessionStart {
    pub quiz: Option<QuizResult>,
    pub transcript: Option<AgentTranscript>,
}

/// A participant: optionally takes the quiz once per session, then plays
/// trials one at a time.
pub trait Agent: Send {
    fn summary(&self) -> AgentSummary;

    fn begin_session(&mut self, _experiment: Experiment) -> Result<SessionStart, HarnessError> {
        Ok(SessionStart::default())
    }

    /// An independent copy in the same session state, for another worker.
    fn fork(&self) -> Box<dyn Agent>;

    fn play(&mut self, ctx: &TrialContext<'_>, state: TrialState) -> Result<PlayResult, HarnessError>;
}

/// Chooses one action from what the player can see.
pub trait Policy: Send + Clone + 'static {
    fn kind(&self) -> AgentKind;
    fn act(&mut self, obs: &Observation, rng: &mut Rng) -> Result<Action, HarnessError>;
}

/// Coin flip on default offers, otherwise a uniformly random basket.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn kind(&self) -> AgentKind {
        AgentKind::Random
    }

    fn act(&mut self, obs: &Observation, rng: &mut Rng) -> Result<Action, HarnessError> {
        Ok(match obs.phase {
            Phase::DefaultOffer => Action::DefaultDecision { accept: rng.gen_bool(0.5) },
            _ => Action::Select { basket: rng.gen_range(0..obs.visible_baskets()) },
        })
    }
}

/// Accepts every default; elsewhere picks a random basket without
/// revealing, and never switches after a late suggestion.
#[derive(Debug, Clone, Copy, Default)]
pub struct TakeDefaultPolicy;

impl Policy for TakeDefaultPolicy {
    fn kind(&self) -> AgentKind {
        AgentKind::TakeDefault
    }

    fn act(&mut self, obs: &Observation, rng: &mut Rng) -> Result<Action, HarnessError> {
        Ok(match (obs.phase, obs.first_selection) {
            (Phase::DefaultOffer, _) => Action::DefaultDecision { accept: true },
            (Phase::LateSuggestion, Some(basket)) => Action::Select { basket },
            _ => Action::Select { basket: rng.gen_range(0..obs.visible_baskets()) },
        })
    }
}

/// Declines defaults, reveals every hidden cell row by row, then takes the
/// best basket (lowest index on ties).
#[derive(Debug, Clone, Copy, Default)]
pub struct FullRevealPolicy;

impl Policy for FullRevealPolicy {
    fn kind(&self) -> AgentKind {
        AgentKind::FullReveal
    }

    fn act(&mut self, obs: &Observation, _rng: &mut Rng) -> Result<Action, HarnessError> {
        if obs.phase == Phase::DefaultOffer {
            return Ok(Action::DefaultDecision { accept: false });
        }
        if let Some(cell) = obs.hidden_cells().next() {
            return Ok(Action::Reveal { cell });
        }
        let totals: Vec<u64> = (0..obs.visible_baskets())
            .map(|b| {
                obs.weights.iter().enumerate().map(|(p, &w)| w as u64 * obs.cells[p][b].unwrap_or(0) as u64).sum()
            })
            .collect();
        let best = totals.iter().enumerate().max_by_key(|&(b, &t)| (t, std::cmp::Reverse(b))).map(|(b, _)| b);
        Ok(Action::Select { basket: best.unwrap_or(0) })
    }
}

/// The resource-rational reference agent.
#[derive(Debug, Clone, Copy, Default)]
pub struct RrPolicy;

impl Policy for RrPolicy {
    fn kind(&self) -> AgentKind {
        AgentKind::Rr
    }

    fn act(&mut self, obs: &Observation, rng: &mut Rng) -> Result<Action, HarnessError> {
        Ok(rr::rr_decide(obs, rng)?)
    }
}

/// Runs a [`Policy`] with a per-trial random stream derived from the trial
/// seed, so scripted runs are reproducible trial by trial.
#[derive(Clone)]
pub struct PolicyAgent<P> {
    policy: P,
}

impl<P: Policy> PolicyAgent<P> {
    pub fn new(policy: P) -> Self {
        PolicyAgent { policy }
    }
}

impl<P: Policy> Agent for PolicyAgent<P> {
    fn summary(&self) -> AgentSummary {
        AgentSummary::new(self.policy.kind())
    }

    fn fork(&self) -> Box<dyn Agent> {
        Box::new(self.clone())
    }

    fn play(&mut self, ctx: &TrialContext<'_>, mut state: TrialState) -> Result<PlayResult, HarnessError> {
        let mut rng = rng::stream(ctx.spec.seed, Stream::Agent);
        let limit = state.game().config.n_cells() + 3;
        let mut flags = Vec::new();
        for _ in 0..limit {
            if state.is_done() {
                break;
            }
            let action = self.policy.act(&state.observation(), &mut rng)?;
            if let Err(e) = state.apply(action) {
                flags.push(format!("illegal_action: {e}"));
                break;
            }
        }
        if !state.is_done() && flags.is_empty() {
            flags.push("max_turns".to_string());
        }
        Ok(PlayResult { state, transcript: None, flags })
    }
}

/// Re-plays recorded trials: the trial whose game matches (by id, or by
/// identical contents) and whose nudge matches has its actions re-applied.
#[derive(Clone)]
pub struct ReplayAgent {
    records: Arc<Vec<TrialRecord>>,
}

impl ReplayAgent {
    pub fn new(records: Vec<TrialRecord>) -> Self {
        ReplayAgent { records: Arc::new(records) }
    }

    fn find(&self, state: &TrialState) -> Option<&TrialRecord> {
        let game = state.game();
        let matches = |r: &&TrialRecord| r.nudge == *state.nudge() && r.cost_schedule == *state.cost_schedule();
        self.records
            .iter()
            .filter(matches)
            .find(|r| r.game.id == game.id)
            .or_else(|| self.records.iter().filter(matches).find(|r| r.game.same_contents(game)))
    }
}

impl Agent for ReplayAgent {
    fn summary(&self) -> AgentSummary {
        AgentSummary::new(AgentKind::Replay)
    }

    fn fork(&self) -> Box<dyn Agent> {
        Box::new(self.clone())
    }

    fn play(&mut self, _ctx: &TrialContext<'_>, state: TrialState) -> Result<PlayResult, HarnessError> {
        let record = self.find(&state).ok_or_else(|| HarnessError::NoReplay(state.game().id.clone()))?;
        let state = state.replay(&record.events).map_err(crate::record::RecordError::Replay)?;
        Ok(PlayResult::plain(state))
    }
}

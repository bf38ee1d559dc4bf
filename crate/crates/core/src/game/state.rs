use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{reward, CellRef, CostSchedule, Game, GameError};
use crate::nudge::{NudgeSpec, NudgeVariant, RevealedCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    DefaultOffer,
    Playing,
    LateSuggestion,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Reveal { cell: CellRef },
    Select { basket: usize },
    DefaultDecision { accept: bool },
}

impl Action {
    pub fn reveal(prize: usize, basket: usize) -> Self {
        Action::Reveal { cell: CellRef::new(prize, basket) }
    }
}

/// One entry of a trial's event log. `turn` counts accepted actions, from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Reveal { cell: CellRef, value: u8, cost: u32, turn: u32 },
    Select { basket: usize, turn: u32 },
    DefaultDecision { accept: bool, basket: usize, turn: u32 },
    /// System event: the late suggestion appeared after the first selection.
    SuggestionShown { basket: usize, cell: CellRef, value: u8, turn: u32 },
}

impl Event {
    /// The agent action that produced this event, if it was not a system event.
    pub fn action(&self) -> Option<Action> {
        match *self {
            Event::Reveal { cell, .. } => Some(Action::Reveal { cell }),
            Event::Select { basket, .. } => Some(Action::Select { basket }),
            Event::DefaultDecision { accept, .. } => Some(Action::DefaultDecision { accept }),
            Event::SuggestionShown { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub gross: i64,
    pub reveal_cost: i64,
    pub net: i64,
}

impl Outcome {
    pub fn new(gross: i64, reveal_cost: i64) -> Self {
        Outcome { gross, reveal_cost, net: gross - reveal_cost }
    }
}

/// One play-through of a game under a nudge.
#[derive(Debug, Clone)]
pub struct TrialState {
    game: Game,
    cost_schedule: CostSchedule,
    nudge: NudgeSpec,
    cost_banner: bool,
    revealed: BTreeMap<CellRef, u8>,
    free: BTreeSet<CellRef>,
    accumulated_cost: u32,
    first_selection: Option<usize>,
    selection: Option<usize>,
    phase: Phase,
    events: Vec<Event>,
    turn: u32,
}

impl TrialState {
    /// Starts a trial. `cost_banner` prints the per-prize cost line above the
    /// table, as in the highlighting experiment (control trials included).
    pub fn new(game: Game, cost_schedule: CostSchedule, nudge: NudgeSpec, cost_banner: bool) -> Result<Self, GameError> {
        if cost_schedule.0.len() != game.n_prizes() {
            return Err(GameError::InvalidCosts(format!(
                "{} costs for {} prizes",
                cost_schedule.0.len(),
                game.n_prizes()
            )));
        }
        nudge.validate(&game).map_err(GameError::InvalidNudge)?;
        if nudge.variant == NudgeVariant::SuggestionLate && game.n_baskets() < 2 {
            return Err(GameError::InvalidNudge("late suggestion needs a spare basket".into()));
        }
        let phase = if nudge.variant == NudgeVariant::Default { Phase::DefaultOffer } else { Phase::Playing };
        let mut state = TrialState {
            game,
            cost_schedule,
            nudge,
            cost_banner,
            revealed: BTreeMap::new(),
            free: BTreeSet::new(),
            accumulated_cost: 0,
            first_selection: None,
            selection: None,
            phase,
            events: Vec::new(),
            turn: 0,
        };
        for rc in state.nudge.upfront_free_cells() {
            state.free.insert(rc.cell);
            state.revealed.insert(rc.cell, rc.value);
        }
        Ok(state)
    }

    /// A plain control trial with the configuration's default cost.
    pub fn control(game: Game) -> Self {
        let costs = CostSchedule::uniform(game.n_prizes(), game.config.reveal_cost_default);
        TrialState::new(game, costs, NudgeSpec::none(), false).expect("control trial is always valid")
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    pub fn cost_schedule(&self) -> &CostSchedule {
        &self.cost_schedule
    }

    pub fn nudge(&self) -> &NudgeSpec {
        &self.nudge
    }

    pub fn cost_banner(&self) -> bool {
        self.cost_banner
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn accumulated_cost(&self) -> u32 {
        self.accumulated_cost
    }

    pub fn selection(&self) -> Option<usize> {
        self.selection
    }

    pub fn first_selection(&self) -> Option<usize> {
        self.first_selection
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn revealed_value(&self, cell: CellRef) -> Option<u8> {
        self.revealed.get(&cell).copied()
    }

    pub fn is_revealed(&self, cell: CellRef) -> bool {
        self.revealed.contains_key(&cell)
    }

    pub fn is_free(&self, cell: CellRef) -> bool {
        self.free.contains(&cell)
    }

    pub fn revealed(&self) -> impl Iterator<Item = (CellRef, u8)> + '_ {
        self.revealed.iter().map(|(c, v)| (*c, *v))
    }

    pub fn free_reveals(&self) -> impl Iterator<Item = CellRef> + '_ {
        self.free.iter().copied()
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Baskets the player can currently see. A late-suggestion trial keeps
    /// its extra basket hidden until the suggestion appears.
    pub fn visible_baskets(&self) -> usize {
        let n = self.game.n_baskets();
        if self.nudge.variant == NudgeVariant::SuggestionLate && self.first_selection.is_none() {
            n - 1
        } else {
            n
        }
    }

    /// Basket offered as the default while the offer is open.
    pub fn default_offer(&self) -> Option<usize> {
        match self.phase {
            Phase::DefaultOffer => self.nudge.default_basket,
            _ => None,
        }
    }

    /// The suggestion currently on screen, if any. Suggestions persist.
    pub fn visible_suggestion(&self) -> Option<RevealedCell> {
        match self.nudge.variant {
            NudgeVariant::SuggestionEarly => self.nudge.suggestion_cell,
            NudgeVariant::SuggestionLate if self.first_selection.is_some() => self.nudge.suggestion_cell,
            _ => None,
        }
    }

    /// Number of reveals the player paid for (free cells excluded).
    pub fn paid_reveals(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Reveal { .. })).count()
    }

    /// Visible grid, one row per prize; hidden cells are `None`. After the
    /// trial ends the chosen basket's column is shown in full.
    pub fn visible_cells(&self) -> Vec<Vec<Option<u8>>> {
        let shown_column = if self.phase == Phase::Done { self.selection } else { None };
        (0..self.game.n_prizes())
            .map(|prize| {
                (0..self.visible_baskets())
                    .map(|basket| {
                        let cell = CellRef::new(prize, basket);
                        if shown_column == Some(basket) {
                            Some(self.game.value(cell))
                        } else {
                            self.revealed_value(cell)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn check_basket(&self, basket: usize) -> Result<(), GameError> {
        let n = self.visible_baskets();
        if basket < n {
            Ok(())
        } else {
            Err(GameError::BasketOutOfRange { basket, n_baskets: n })
        }
    }

    /// Applies one player action. On error the state is left unchanged.
    pub fn apply(&mut self, action: Action) -> Result<Event, GameError> {
        let turn = self.turn + 1;
        let event = match (self.phase, action) {
            (Phase::Playing | Phase::LateSuggestion, Action::Reveal { cell }) => {
                self.game.check_cell(cell)?;
                self.check_basket(cell.basket)?;
                if self.is_revealed(cell) {
                    return Err(GameError::AlreadyRevealed(cell));
                }
                let value = self.game.value(cell);
                let cost = if self.free.contains(&cell) { 0 } else { self.cost_schedule.cost(cell.prize) };
                self.revealed.insert(cell, value);
                self.accumulated_cost += cost;
                Event::Reveal { cell, value, cost, turn }
            }
            (Phase::Playing, Action::Select { basket }) => {
                self.check_basket(basket)?;
                self.first_selection = Some(basket);
                if self.nudge.variant == NudgeVariant::SuggestionLate {
                    self.phase = Phase::LateSuggestion;
                    self.events.push(Event::Select { basket, turn });
                    let rc = self.nudge.suggestion_cell.expect("validated late suggestion");
                    self.free.insert(rc.cell);
                    self.revealed.insert(rc.cell, rc.value);
                    self.turn = turn;
                    let shown = Event::SuggestionShown {
                        basket: self.nudge.suggested_basket.expect("validated late suggestion"),
                        cell: rc.cell,
                        value: rc.value,
                        turn,
                    };
                    self.events.push(shown);
                    return Ok(shown);
                }
                self.selection = Some(basket);
                self.phase = Phase::Done;
                Event::Select { basket, turn }
            }
            (Phase::LateSuggestion, Action::Select { basket }) => {
                self.check_basket(basket)?;
                self.selection = Some(basket);
                self.phase = Phase::Done;
                Event::Select { basket, turn }
            }
            (Phase::DefaultOffer, Action::DefaultDecision { accept }) => {
                let basket = self.nudge.default_basket.expect("validated default nudge");
                if accept {
                    self.first_selection = Some(basket);
                    self.selection = Some(basket);
                    self.phase = Phase::Done;
                } else {
                    self.phase = Phase::Playing;
                }
                Event::DefaultDecision { accept, basket, turn }
            }
            (phase, _) => return Err(GameError::IllegalInPhase(phase)),
        };
        self.turn = turn;
        self.events.push(event);
        Ok(event)
    }

    /// Consuming form of [`TrialState::apply`].
    pub fn apply_action(mut self, action: Action) -> Result<Self, GameError> {
        self.apply(action)?;
        Ok(self)
    }

    pub fn finalize(&self) -> Result<Outcome, GameError> {
        match (self.phase, self.selection) {
            (Phase::Done, Some(basket)) => {
                Ok(Outcome::new(reward(&self.game, basket)?, self.accumulated_cost as i64))
            }
            _ => Err(GameError::NotFinished),
        }
    }

    /// Rebuilds a trial by re-applying the agent actions of `events`,
    /// checking that every recorded value and cost matches.
    pub fn replay(mut self, events: &[Event]) -> Result<Self, String> {
        for recorded in events {
            let Some(action) = recorded.action() else { continue };
            let produced = self.apply(action).map_err(|e| format!("replaying {recorded:?}: {e}"))?;
            let matches = match (produced, recorded) {
                (Event::SuggestionShown { .. }, Event::Select { .. }) => true,
                (a, b) => a == *b,
            };
            if !matches {
                return Err(format!("recorded {recorded:?} but replay produced {produced:?}"));
            }
        }
        Ok(self)
    }
}

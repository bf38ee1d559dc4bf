use serde::{Deserialize, Serialize};

use super::{CellRef, GameConfig, Phase, TrialState};
use crate::nudge::RevealedCell;

/// What a player is allowed to see. Agents and the play service only ever
/// receive this, never the [`TrialState`] itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub config: GameConfig,
    pub weights: Vec<u32>,
    pub costs: Vec<u32>,
    pub phase: Phase,
    /// One row per prize, one entry per visible basket.
    pub cells: Vec<Vec<Option<u8>>>,
    pub accumulated_cost: u32,
    pub default_offer: Option<usize>,
    pub suggestion: Option<RevealedCell>,
    pub first_selection: Option<usize>,
    pub selection: Option<usize>,
    pub turn: u32,
}

impl Observation {
    pub fn n_prizes(&self) -> usize {
        self.weights.len()
    }

    pub fn visible_baskets(&self) -> usize {
        self.cells.first().map(Vec::len).unwrap_or(0)
    }

    pub fn value(&self, cell: CellRef) -> Option<u8> {
        self.cells.get(cell.prize).and_then(|row| row.get(cell.basket)).copied().flatten()
    }

    pub fn hidden_cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        self.cells.iter().enumerate().flat_map(|(p, row)| {
            row.iter().enumerate().filter(|(_, v)| v.is_none()).map(move |(b, _)| CellRef::new(p, b))
        })
    }
}

impl TrialState {
    pub fn observation(&self) -> Observation {
        Observation {
            config: self.game().config,
            weights: self.game().weights.as_slice().to_vec(),
            costs: self.cost_schedule().0.clone(),
            phase: self.phase(),
            cells: self.visible_cells(),
            accumulated_cost: self.accumulated_cost(),
            default_offer: self.default_offer(),
            suggestion: self.visible_suggestion(),
            first_selection: self.first_selection(),
            selection: self.selection(),
            turn: self.turn(),
        }
    }
}

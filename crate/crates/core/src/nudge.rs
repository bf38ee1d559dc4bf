//! Choice-architecture interventions: default option, suggested
//! alternatives, information highlighting and initial reveals.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{CellRef, CostSchedule, Game, PRIOR_MEAN};
use crate::rng::{self, Stream};

/// Reveal cost in highlighting experiments for rows that are not on sale.
pub const HIGHLIGHT_BASE_COST: u32 = 3;
/// Reveal cost of the highlighted prize row.
pub const HIGHLIGHT_SALE_COST: u32 = 1;
/// Cells revealed up front in the optimal-nudging experiment.
pub const INITIAL_REVEALS: usize = 6;
/// Of those, how many are chosen uniformly at random in Extreme/Optimal modes.
pub const RANDOM_SHARE: usize = 3;
pub const LATE_SUGGESTION_BASKETS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum NudgeError {
    #[error("highlighting needs a 3-prize game, got {0} prizes")]
    WrongPrizeCount(usize),
    #[error("late suggestions need a 6-basket game, got {0} baskets")]
    WrongBasketCount(usize),
    #[error("need at least {needed} hidden cells, only {available} available")]
    TooFewHidden { needed: usize, available: usize },
    #[error("optimal reveals need an optimizer")]
    MissingOptimizer,
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NudgeVariant {
    None,
    Default,
    SuggestionEarly,
    SuggestionLate,
    Highlight,
    InitialReveals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevealMode {
    Random,
    Extreme,
    Optimal,
}

impl RevealMode {
    pub const ALL: [RevealMode; 3] = [RevealMode::Random, RevealMode::Extreme, RevealMode::Optimal];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuggestionTiming {
    Early,
    Late,
}

/// A cell shown to the player for free, with its true value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RevealedCell {
    pub cell: CellRef,
    pub value: u8,
}

/// The active intervention of a trial. Only the fields of `variant` are set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NudgeSpec {
    pub variant: NudgeVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_basket: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_basket: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion_cell: Option<RevealedCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlighted_prize: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_cells: Option<Vec<RevealedCell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_mode: Option<RevealMode>,
}

impl NudgeSpec {
    pub fn none() -> Self {
        NudgeSpec {
            variant: NudgeVariant::None,
            default_basket: None,
            suggested_basket: None,
            suggestion_cell: None,
            highlighted_prize: None,
            initial_cells: None,
            reveal_mode: None,
        }
    }

    pub fn default_option(basket: usize) -> Self {
        NudgeSpec { variant: NudgeVariant::Default, default_basket: Some(basket), ..Self::none() }
    }

    /// Cells revealed for free at the start of the trial.
    pub fn upfront_free_cells(&self) -> Vec<RevealedCell> {
        match self.variant {
            NudgeVariant::SuggestionEarly => self.suggestion_cell.into_iter().collect(),
            NudgeVariant::InitialReveals => self.initial_cells.clone().unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    /// Checks field population and that every shown value is the true one.
    pub fn validate(&self, game: &Game) -> Result<(), String> {
        let populated = [
            ("default_basket", self.default_basket.is_some()),
            ("suggested_basket", self.suggested_basket.is_some()),
            ("suggestion_cell", self.suggestion_cell.is_some()),
            ("highlighted_prize", self.highlighted_prize.is_some()),
            ("initial_cells", self.initial_cells.is_some()),
            ("reveal_mode", self.reveal_mode.is_some()),
        ];
        let expected: &[&str] = match self.variant {
            NudgeVariant::None => &[],
            NudgeVariant::Default => &["default_basket"],
            NudgeVariant::SuggestionEarly | NudgeVariant::SuggestionLate => {
                &["suggested_basket", "suggestion_cell"]
            }
            NudgeVariant::Highlight => &["highlighted_prize"],
            NudgeVariant::InitialReveals => &["initial_cells", "reveal_mode"],
        };
        for (name, present) in populated {
            if present != expected.contains(&name) {
                return Err(format!("field {name} does not match variant {:?}", self.variant));
            }
        }
        if let Some(b) = self.default_basket.or(self.suggested_basket) {
            if b >= game.n_baskets() {
                return Err(format!("basket {b} out of range"));
            }
        }
        if let Some(p) = self.highlighted_prize {
            if p >= game.n_prizes() {
                return Err(format!("prize {p} out of range"));
            }
        }
        if let Some(rc) = self.suggestion_cell {
            if Some(rc.cell.basket) != self.suggested_basket {
                return Err("suggestion cell is not in the suggested basket".into());
            }
        }
        let mut shown: Vec<RevealedCell> = self.suggestion_cell.into_iter().collect();
        if let Some(cells) = &self.initial_cells {
            let mut distinct: Vec<CellRef> = cells.iter().map(|c| c.cell).collect();
            distinct.sort();
            distinct.dedup();
            if cells.len() != INITIAL_REVEALS || distinct.len() != INITIAL_REVEALS {
                return Err(format!("initial reveals must be {INITIAL_REVEALS} distinct cells"));
            }
            shown.extend(cells.iter().copied());
        }
        for rc in shown {
            game.check_cell(rc.cell).map_err(|e| e.to_string())?;
            if game.value(rc.cell) != rc.value {
                return Err(format!("cell {} shows {} but holds {}", rc.cell, rc.value, game.value(rc.cell)));
            }
        }
        Ok(())
    }
}

/// Chooses cells to pre-reveal, given cells that are already fixed.
pub trait RevealOptimizer: Sync {
    fn choose(&self, game: &Game, fixed: &[CellRef], k: usize, seed: u64) -> Result<Vec<CellRef>, String>;
}

fn pick<R: rand::Rng>(rng: &mut R, candidates: &[usize]) -> usize {
    candidates[rng.gen_range(0..candidates.len())]
}

fn argmax_ties<T: PartialOrd + Copy>(values: &[T]) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match best.first() {
            None => best.push(i),
            Some(&b) if v > values[b] => {
                best.clear();
                best.push(i)
            }
            Some(&b) if v == values[b] => best.push(i),
            _ => {}
        }
    }
    best
}

/// Basket with the largest unweighted count of prizes; ties broken uniformly.
///
/// Computed for control trials too, where it is the basket that would have
/// been offered.
pub fn default_basket(game: &Game, seed: u64) -> usize {
    let sums: Vec<u32> = (0..game.n_baskets()).map(|b| game.matrix.column_sum(b)).collect();
    let mut rng = rng::stream(seed, Stream::Nudge);
    pick(&mut rng, &argmax_ties(&sums))
}

pub fn make_suggestion(game: &Game, timing: SuggestionTiming, seed: u64) -> Result<NudgeSpec, NudgeError> {
    let mut rng = rng::stream(seed, Stream::Nudge);
    let (variant, basket) = match timing {
        SuggestionTiming::Early => (NudgeVariant::SuggestionEarly, rng.gen_range(0..game.n_baskets())),
        SuggestionTiming::Late => {
            if game.n_baskets() != LATE_SUGGESTION_BASKETS {
                return Err(NudgeError::WrongBasketCount(game.n_baskets()));
            }
            (NudgeVariant::SuggestionLate, LATE_SUGGESTION_BASKETS - 1)
        }
    };
    let column = game.matrix.column(basket);
    let prize = pick(&mut rng, &argmax_ties(&column));
    let cell = CellRef::new(prize, basket);
    Ok(NudgeSpec {
        variant,
        suggested_basket: Some(basket),
        suggestion_cell: Some(RevealedCell { cell, value: game.value(cell) }),
        ..NudgeSpec::none()
    })
}

/// The prize a highlighting trial puts on sale. Control trials draw it too,
/// so that "first reveal in the highlighted row" has a reference row.
pub fn highlight_prize(game: &Game, seed: u64) -> Result<usize, NudgeError> {
    if game.n_prizes() != 3 {
        return Err(NudgeError::WrongPrizeCount(game.n_prizes()));
    }
    Ok(rng::stream(seed, Stream::Nudge).gen_range(0..game.n_prizes()))
}

pub fn highlight_schedule(game: &Game, seed: u64) -> Result<(NudgeSpec, CostSchedule), NudgeError> {
    let prize = highlight_prize(game, seed)?;
    let mut costs = CostSchedule::uniform(game.n_prizes(), HIGHLIGHT_BASE_COST);
    costs.0[prize] = HIGHLIGHT_SALE_COST;
    Ok((NudgeSpec { variant: NudgeVariant::Highlight, highlighted_prize: Some(prize), ..NudgeSpec::none() }, costs))
}

pub fn control_highlight_schedule(n_prizes: usize) -> CostSchedule {
    CostSchedule::uniform(n_prizes, HIGHLIGHT_BASE_COST)
}

pub fn initial_reveals(
    game: &Game,
    mode: RevealMode,
    seed: u64,
    optimizer: Option<&dyn RevealOptimizer>,
) -> Result<NudgeSpec, NudgeError> {
    let all: Vec<CellRef> = game.cells().collect();
    if all.len() < INITIAL_REVEALS {
        return Err(NudgeError::TooFewHidden { needed: INITIAL_REVEALS, available: all.len() });
    }
    if mode == RevealMode::Optimal && optimizer.is_none() {
        return Err(NudgeError::MissingOptimizer);
    }
    let mut rng = rng::stream(seed, Stream::Nudge);
    // Every mode starts from the same three uniform cells, so modes are
    // paired when they share a seed.
    let mut chosen: Vec<CellRef> =
        index::sample(&mut rng, all.len(), RANDOM_SHARE).into_iter().map(|i| all[i]).collect();

    match mode {
        RevealMode::Random => {
            let rest: Vec<CellRef> = all.iter().copied().filter(|c| !chosen.contains(c)).collect();
            let extra = index::sample(&mut rng, rest.len(), INITIAL_REVEALS - RANDOM_SHARE);
            chosen.extend(extra.into_iter().map(|i| rest[i]));
        }
        RevealMode::Extreme => {
            let mut rest: Vec<CellRef> = all.iter().copied().filter(|c| !chosen.contains(c)).collect();
            rest.shuffle(&mut rng);
            let dev = |c: &CellRef| (game.value(*c) as f64 - PRIOR_MEAN).abs();
            rest.sort_by(|a, b| dev(b).partial_cmp(&dev(a)).unwrap());
            chosen.extend(rest.into_iter().take(INITIAL_REVEALS - RANDOM_SHARE));
        }
        RevealMode::Optimal => {
            let extra = optimizer
                .unwrap()
                .choose(game, &chosen, INITIAL_REVEALS - RANDOM_SHARE, seed)
                .map_err(NudgeError::Optimizer)?;
            chosen.extend(extra);
        }
    }

    let cells = chosen.into_iter().map(|cell| RevealedCell { cell, value: game.value(cell) }).collect();
    Ok(NudgeSpec {
        variant: NudgeVariant::InitialReveals,
        initial_cells: Some(cells),
        reveal_mode: Some(mode),
        ..NudgeSpec::none()
    })
}

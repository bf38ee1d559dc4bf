//! The baskets-and-prizes world: configuration, sampling and rewards.
//!
//! A game is a vector of prize weights (points per prize, summing to 30) and
//! a prize × basket matrix of hidden counts in `[0, 10]`. Choosing basket `i`
//! pays the dot product of the weights with column `i`.

mod observation;
mod render;
mod state;

pub use observation::Observation;

pub use render::{render_final, render_outcome_line, render_table, ParseError, TableView};
pub use state::{Action, Event, Outcome, Phase, TrialState};

use std::fmt;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

/// Sum of all prize weights in every game.
pub const TOTAL_POINTS: u32 = 30;
/// Largest count a basket cell can hold.
pub const MAX_CELL: u8 = 10;
/// Mean of a hidden cell under the sampling distribution.
pub const PRIOR_MEAN: f64 = 5.0;

pub const ALLOWED_PRIZES: [usize; 3] = [2, 3, 5];
pub const ALLOWED_BASKETS: [usize; 3] = [2, 5, 6];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GameError {
    #[error("invalid game dimensions {n_prizes}x{n_baskets}")]
    InvalidConfig { n_prizes: usize, n_baskets: usize },
    #[error("invalid prize weights {0:?}: each must be >= 1 and they must sum to 30")]
    InvalidWeights(Vec<u32>),
    #[error("invalid basket matrix: {0}")]
    InvalidMatrix(String),
    #[error("basket {basket} out of range (game has {n_baskets} baskets)")]
    BasketOutOfRange { basket: usize, n_baskets: usize },
    #[error("cell {0} is out of range")]
    CellOutOfRange(CellRef),
    #[error("cell {0} is already revealed")]
    AlreadyRevealed(CellRef),
    #[error("action not allowed in phase {0:?}")]
    IllegalInPhase(Phase),
    #[error("the trial has no selection yet")]
    NotFinished,
    #[error("invalid cost schedule: {0}")]
    InvalidCosts(String),
    #[error("invalid nudge: {0}")]
    InvalidNudge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameConfig {
    pub n_prizes: usize,
    pub n_baskets: usize,
    pub reveal_cost_default: u32,
}

impl GameConfig {
    pub fn new(n_prizes: usize, n_baskets: usize, reveal_cost_default: u32) -> Result<Self, GameError> {
        let config = GameConfig { n_prizes, n_baskets, reveal_cost_default };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if ALLOWED_PRIZES.contains(&self.n_prizes) && ALLOWED_BASKETS.contains(&self.n_baskets) {
            Ok(())
        } else {
            Err(GameError::InvalidConfig { n_prizes: self.n_prizes, n_baskets: self.n_baskets })
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_prizes * self.n_baskets
    }
}

impl fmt::Display for GameConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_prizes, self.n_baskets)
    }
}

/// Letter used for prize row `index` (A, B, ...).
pub fn prize_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

pub fn prize_index(letter: &str) -> Option<usize> {
    let mut chars = letter.trim().chars();
    let c = chars.next()?.to_ascii_uppercase();
    if chars.next().is_some() || !c.is_ascii_uppercase() {
        return None;
    }
    Some((c as u8 - b'A') as usize)
}

/// Points per prize. Every weight is at least 1 and the weights sum to 30.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct PrizeWeights(Vec<u32>);

impl PrizeWeights {
    pub fn new(weights: Vec<u32>) -> Result<Self, GameError> {
        if weights.is_empty() || weights.iter().any(|&w| w < 1) || weights.iter().sum::<u32>() != TOTAL_POINTS {
            return Err(GameError::InvalidWeights(weights));
        }
        Ok(PrizeWeights(weights))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> Vec<char> {
        (0..self.0.len()).map(prize_letter).collect()
    }
}

impl TryFrom<Vec<u32>> for PrizeWeights {
    type Error = GameError;
    fn try_from(v: Vec<u32>) -> Result<Self, GameError> {
        PrizeWeights::new(v)
    }
}

impl From<PrizeWeights> for Vec<u32> {
    fn from(w: PrizeWeights) -> Self {
        w.0
    }
}

/// Hidden prize counts, stored row-major as one row per prize.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct BasketMatrix {
    rows: Vec<Vec<u8>>,
}

impl BasketMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self, GameError> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || width == 0 {
            return Err(GameError::InvalidMatrix("empty matrix".into()));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(GameError::InvalidMatrix("ragged rows".into()));
        }
        if rows.iter().flatten().any(|&v| v > MAX_CELL) {
            return Err(GameError::InvalidMatrix("cell value above 10".into()));
        }
        Ok(BasketMatrix { rows })
    }

    pub fn n_prizes(&self) -> usize {
        self.rows.len()
    }

    pub fn n_baskets(&self) -> usize {
        self.rows[0].len()
    }

    pub fn get(&self, cell: CellRef) -> u8 {
        self.rows[cell.prize][cell.basket]
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn column(&self, basket: usize) -> Vec<u8> {
        self.rows.iter().map(|r| r[basket]).collect()
    }

    pub fn column_sum(&self, basket: usize) -> u32 {
        self.rows.iter().map(|r| r[basket] as u32).sum()
    }
}

impl TryFrom<Vec<Vec<u8>>> for BasketMatrix {
    type Error = GameError;
    fn try_from(v: Vec<Vec<u8>>) -> Result<Self, GameError> {
        BasketMatrix::new(v)
    }
}

impl From<BasketMatrix> for Vec<Vec<u8>> {
    fn from(m: BasketMatrix) -> Self {
        m.rows
    }
}

/// A (prize row, basket column) pair. Both indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub prize: usize,
    pub basket: usize,
}

impl CellRef {
    pub fn new(prize: usize, basket: usize) -> Self {
        CellRef { prize, basket }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, basket {})", prize_letter(self.prize), self.basket + 1)
    }
}

/// Reveal cost per prize row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostSchedule(pub Vec<u32>);

impl CostSchedule {
    pub fn uniform(n_prizes: usize, cost: u32) -> Self {
        CostSchedule(vec![cost; n_prizes])
    }

    pub fn cost(&self, prize: usize) -> u32 {
        self.0[prize]
    }

    pub fn is_uniform(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Game {
    pub id: String,
    pub config: GameConfig,
    pub seed: Option<u64>,
    pub weights: PrizeWeights,
    pub matrix: BasketMatrix,
}

impl Game {
    /// Builds a game from explicit contents (ingested data, fixtures).
    pub fn from_parts(
        config: GameConfig,
        weights: Vec<u32>,
        rows: Vec<Vec<u8>>,
    ) -> Result<Self, GameError> {
        let weights = PrizeWeights::new(weights)?;
        let matrix = BasketMatrix::new(rows)?;
        if weights.len() != config.n_prizes
            || matrix.n_prizes() != config.n_prizes
            || matrix.n_baskets() != config.n_baskets
        {
            return Err(GameError::InvalidMatrix(format!(
                "contents do not match configuration {config}"
            )));
        }
        let id = format!("c{}-{:016x}", config, content_hash(&weights, &matrix));
        Ok(Game { id, config, seed: None, weights, matrix })
    }

    pub fn n_prizes(&self) -> usize {
        self.config.n_prizes
    }

    pub fn n_baskets(&self) -> usize {
        self.config.n_baskets
    }

    pub fn value(&self, cell: CellRef) -> u8 {
        self.matrix.get(cell)
    }

    pub fn check_cell(&self, cell: CellRef) -> Result<(), GameError> {
        if cell.prize < self.n_prizes() && cell.basket < self.n_baskets() {
            Ok(())
        } else {
            Err(GameError::CellOutOfRange(cell))
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellRef> {
        let (p, b) = (self.n_prizes(), self.n_baskets());
        (0..p).flat_map(move |prize| (0..b).map(move |basket| CellRef { prize, basket }))
    }

    /// Same weights and matrix, regardless of id or seed.
    pub fn same_contents(&self, other: &Game) -> bool {
        self.weights == other.weights && self.matrix == other.matrix
    }
}

/// FNV-1a over weights then matrix rows.
fn content_hash(weights: &PrizeWeights, matrix: &BasketMatrix) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for &w in weights.as_slice() {
        eat(w as u8);
    }
    eat(0xff);
    for row in matrix.rows() {
        for &v in row {
            eat(v);
        }
        eat(0xfe);
    }
    h
}

/// Samples a game deterministically from `(config, seed)`.
///
/// Weights are uniform over the compositions of 30 into `n_prizes` positive
/// parts (stars and bars over distinct cut points). Each cell is an
/// independent Binomial(10, 1/2) count, drawn as the popcount of 10 fair bits.
pub fn sample_game(config: GameConfig, seed: u64) -> Result<Game, GameError> {
    config.validate()?;
    let mut rng = rng::stream(seed, Stream::Game);

    let n = config.n_prizes;
    let mut cuts: Vec<u32> = index::sample(&mut rng, (TOTAL_POINTS - 1) as usize, n - 1)
        .into_iter()
        .map(|c| c as u32 + 1)
        .collect();
    cuts.sort_unstable();
    let mut weights = Vec::with_capacity(n);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(TOTAL_POINTS)) {
        weights.push(c - prev);
        prev = c;
    }

    let rows = (0..n)
        .map(|_| {
            (0..config.n_baskets)
                .map(|_| (rng.next_u32() & 0x3ff).count_ones() as u8)
                .collect()
        })
        .collect();

    Ok(Game {
        id: format!("g{}-{:016x}", config, seed),
        config,
        seed: Some(seed),
        weights: PrizeWeights::new(weights)?,
        matrix: BasketMatrix::new(rows)?,
    })
}

/// Gross points for choosing `basket`: weights dotted with the basket column.
pub fn reward(game: &Game, basket: usize) -> Result<i64, GameError> {
    if basket >= game.n_baskets() {
        return Err(GameError::BasketOutOfRange { basket, n_baskets: game.n_baskets() });
    }
    Ok(game
        .weights
        .as_slice()
        .iter()
        .zip(game.matrix.rows())
        .map(|(&w, row)| w as i64 * row[basket] as i64)
        .sum())
}

/// Best gross reward over all baskets.
pub fn best_reward(game: &Game) -> i64 {
    (0..game.n_baskets()).map(|b| reward(game, b).unwrap()).max().unwrap_or(0)
}

//! Resource-rational reference agent and the optimal-nudge optimizer.
//!
//! The agent keeps an independent Binomial(10, 0.5) belief over each hidden
//! cell and uses a myopic value of computation: reveal the cell whose
//! one-step information gain, net of its cost, is largest and positive;
//! otherwise pick the basket with the highest expected reward.
//!
//! The optimizer chooses which cells to show for free so that this agent's
//! expected net earnings on a known game are maximal, by Monte Carlo over
//! the agent's tie-breaking.

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Action, CellRef, Game, GameError, Observation, Phase, TrialState, MAX_CELL, PRIOR_MEAN};
use crate::nudge::RevealOptimizer;
use crate::rng::{derive_seed, stream, Stream};

/// Binomial(10, 0.5) outcome counts; divide by 1024 for probabilities.
pub const BINOMIAL_COUNTS: [u32; 11] = [1, 10, 45, 120, 210, 252, 210, 120, 45, 10, 1];
const BINOMIAL_TOTAL: f64 = 1024.0;

/// Relative tolerance used when comparing expected rewards for ties.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RrError {
    #[error("belief needs at least one prize and one basket")]
    EmptyBelief,
    #[error("{weights} weights but {costs} costs")]
    CostMismatch { weights: usize, costs: usize },
    #[error("cell {0} is out of range")]
    CellOutOfRange(CellRef),
    #[error("basket {0} is out of range")]
    BasketOutOfRange(usize),
    #[error("cell {0} is already known")]
    CellKnown(CellRef),
    #[error("value {0} is outside [0, 10]")]
    InvalidValue(u8),
    #[error("trial is already finished")]
    Finished,
    #[error("need {needed} hidden cells but only {available} remain")]
    NotEnoughHidden { needed: usize, available: usize },
    #[error("agent did not finish within {0} steps")]
    StepLimit(usize),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Knowledge about a game: known cells and the prior for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
    costs: Vec<f64>,
    cells: Vec<Vec<Option<u8>>>,
}

impl Belief {
    /// All cells unknown. Weights need not be a legal game's weights.
    pub fn new(weights: Vec<f64>, costs: Vec<f64>, n_baskets: usize) -> Result<Self, RrError> {
        if weights.is_empty() || n_baskets == 0 {
            return Err(RrError::EmptyBelief);
        }
        if weights.len() != costs.len() {
            return Err(RrError::CostMismatch { weights: weights.len(), costs: costs.len() });
        }
        let cells = vec![vec![None; n_baskets]; weights.len()];
        Ok(Belief { weights, costs, cells })
    }

    pub fn from_observation(obs: &Observation) -> Self {
        Belief {
            weights: obs.weights.iter().map(|&w| w as f64).collect(),
            costs: obs.costs.iter().map(|&c| c as f64).collect(),
            cells: obs.cells.clone(),
        }
    }

    pub fn n_prizes(&self) -> usize {
        self.weights.len()
    }

    pub fn n_baskets(&self) -> usize {
        self.cells[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cost(&self, prize: usize) -> f64 {
        self.costs[prize]
    }

    /// Multiplies every weight by `factor` (costs unchanged).
    pub fn scale_weights(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
    }

    fn check(&self, cell: CellRef) -> Result<(), RrError> {
        if cell.prize < self.n_prizes() && cell.basket < self.n_baskets() {
            Ok(())
        } else {
            Err(RrError::CellOutOfRange(cell))
        }
    }

    pub fn value(&self, cell: CellRef) -> Option<u8> {
        self.cells.get(cell.prize).and_then(|r| r.get(cell.basket)).copied().flatten()
    }

    pub fn observe(&mut self, cell: CellRef, value: u8) -> Result<(), RrError> {
        self.check(cell)?;
        if value > MAX_CELL {
            return Err(RrError::InvalidValue(value));
        }
        if self.cells[cell.prize][cell.basket].is_some() {
            return Err(RrError::CellKnown(cell));
        }
        self.cells[cell.prize][cell.basket] = Some(value);
        Ok(())
    }

    pub fn hidden_cells(&self) -> Vec<CellRef> {
        let mut out = Vec::new();
        for (p, row) in self.cells.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                if v.is_none() {
                    out.push(CellRef::new(p, b));
                }
            }
        }
        out
    }

    fn mean(&self, prize: usize, basket: usize) -> f64 {
        self.cells[prize][basket].map_or(PRIOR_MEAN, f64::from)
    }

    pub fn expected_rewards(&self) -> Vec<f64> {
        (0..self.n_baskets())
            .map(|b| self.weights.iter().enumerate().map(|(p, w)| w * self.mean(p, b)).sum())
            .collect()
    }
}

/// Expected reward of `basket`, hidden cells at the prior mean.
pub fn expected_reward(belief: &Belief, basket: usize) -> Result<f64, RrError> {
    if basket >= belief.n_baskets() {
        return Err(RrError::BasketOutOfRange(basket));
    }
    Ok(belief.weights.iter().enumerate().map(|(p, w)| w * belief.mean(p, basket)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocResult {
    pub cell: CellRef,
    pub voc: f64,
}

fn max_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

fn voc_with(belief: &Belief, rewards: &[f64], cell: CellRef) -> f64 {
    let current = max_of(rewards.iter().copied());
    let others = max_of(rewards.iter().enumerate().filter(|(b, _)| *b != cell.basket).map(|(_, r)| *r));
    let w = belief.weights[cell.prize];
    let rest = rewards[cell.basket] - w * PRIOR_MEAN;
    let weighted: f64 = BINOMIAL_COUNTS
        .iter()
        .enumerate()
        .map(|(v, &count)| f64::from(count) * (rest + w * v as f64).max(others))
        .sum();
    weighted / BINOMIAL_TOTAL - current - belief.costs[cell.prize]
}

/// Myopic value of revealing `cell`: expected best expected reward after
/// seeing it, minus the best now, minus its cost.
pub fn voc_reveal(belief: &Belief, cell: CellRef) -> Result<VocResult, RrError> {
    belief.check(cell)?;
    if belief.value(cell).is_some() {
        return Err(RrError::CellKnown(cell));
    }
    Ok(VocResult { cell, voc: voc_with(belief, &belief.expected_rewards(), cell) })
}

/// VOC of every hidden cell, in row-major order.
pub fn voc_all(belief: &Belief) -> Vec<VocResult> {
    let rewards = belief.expected_rewards();
    belief.hidden_cells().into_iter().map(|cell| VocResult { cell, voc: voc_with(belief, &rewards, cell) }).collect()
}

/// Indices whose value is within tolerance of the maximum.
fn near_max(values: &[f64]) -> Vec<usize> {
    let best = max_of(values.iter().copied());
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    values.iter().enumerate().filter(|(_, v)| **v >= best - tol).map(|(i, _)| i).collect()
}

fn pick<T: Copy>(items: &[T], rng: &mut impl RngCore) -> T {
    *items.choose(rng).expect("non-empty candidate set")
}

/// Basket with the highest expected reward, ties broken by `rng`.
pub fn best_basket(belief: &Belief, rng: &mut impl RngCore) -> usize {
    pick(&near_max(&belief.expected_rewards()), rng)
}

/// One decision of the policy. Reveals the highest-VOC cell when its VOC
/// is positive; free cells are revealed as long as any remain. Otherwise
/// selects the best basket.
pub fn rr_step(belief: &Belief, rng: &mut impl RngCore) -> Action {
    let candidates: Vec<VocResult> =
        voc_all(belief).into_iter().filter(|r| r.voc > 0.0 || belief.costs[r.cell.prize] == 0.0).collect();
    if candidates.is_empty() {
        return Action::Select { basket: best_basket(belief, rng) };
    }
    let vocs: Vec<f64> = candidates.iter().map(|r| r.voc).collect();
    let ties: Vec<CellRef> = near_max(&vocs).into_iter().map(|i| candidates[i].cell).collect();
    Action::Reveal { cell: pick(&ties, rng) }
}

/// Accept the offered default when no basket looks better and no reveal is
/// worth its cost.
pub fn accept_default(belief: &Belief, default_basket: usize) -> Result<bool, RrError> {
    let rewards = belief.expected_rewards();
    let default_reward = *rewards.get(default_basket).ok_or(RrError::BasketOutOfRange(default_basket))?;
    let best = max_of(rewards.iter().copied());
    let best_voc = max_of(voc_all(belief).iter().map(|r| r.voc));
    Ok(default_reward >= best - TIE_TOLERANCE * best.abs().max(1.0) && best_voc <= 0.0)
}

/// The policy's action for any phase of a trial.
pub fn rr_decide(obs: &Observation, rng: &mut impl RngCore) -> Result<Action, RrError> {
    let belief = Belief::from_observation(obs);
    match obs.phase {
        Phase::DefaultOffer => {
            let basket = obs.default_offer.expect("default offer phase has an offer");
            Ok(Action::DefaultDecision { accept: accept_default(&belief, basket)? })
        }
        Phase::Playing | Phase::LateSuggestion => Ok(rr_step(&belief, rng)),
        Phase::Done => Err(RrError::Finished),
    }
}

/// Plays a trial to the end with the policy. Deterministic in `seed`.
pub fn rr_play(mut state: TrialState, seed: u64) -> Result<TrialState, RrError> {
    let mut rng = stream(seed, Stream::Agent);
    let limit = state.game().config.n_cells() + 3;
    for _ in 0..limit {
        if state.is_done() {
            return Ok(state);
        }
        let action = rr_decide(&state.observation(), &mut rng)?;
        state.apply(action)?;
    }
    if state.is_done() {
        Ok(state)
    } else {
        Err(RrError::StepLimit(limit))
    }
}

/// Plays the policy against `truth` starting from `belief`; returns the net
/// earnings (reward of the chosen basket minus reveal costs).
pub fn simulate(mut belief: Belief, truth: &[Vec<u8>], rng: &mut impl RngCore) -> f64 {
    let mut cost = 0.0;
    loop {
        match rr_step(&belief, rng) {
            Action::Reveal { cell } => {
                cost += belief.costs[cell.prize];
                belief.cells[cell.prize][cell.basket] = Some(truth[cell.prize][cell.basket]);
            }
            Action::Select { basket } => {
                let gross: f64 =
                    belief.weights.iter().zip(truth).map(|(w, row)| w * f64::from(row[basket])).sum();
                return gross - cost;
            }
            Action::DefaultDecision { .. } => unreachable!("rr_step never answers a default offer"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Add one cell at a time, each time the one that helps most.
    Greedy,
    /// Score every k-subset. Only practical for small games or budgets.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub mc_games: usize,
    pub mode: SearchMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { mc_games: 200, mode: SearchMode::Greedy }
    }
}

/// Monte Carlo estimate of the policy's expected net earnings on `game`
/// when the `shown` cells are revealed for free and everything else is
/// hidden.
///
/// The agent is played against the true game; rollouts differ in the
/// agent's tie-breaking draws, which matter because many cells share the
/// same VOC early on. Rollout `r` uses the same draws for every `shown` set
/// (common random numbers), so estimates for different sets are directly
/// comparable.
pub fn expected_net(game: &Game, shown: &[CellRef], mc_games: usize, seed: u64) -> f64 {
    let costs: Vec<f64> = vec![f64::from(game.config.reveal_cost_default); game.n_prizes()];
    let weights: Vec<f64> = game.weights.as_slice().iter().map(|&w| f64::from(w)).collect();
    let mut start = Belief::new(weights, costs, game.n_baskets()).expect("games are non-empty");
    for &cell in shown {
        start.cells[cell.prize][cell.basket] = Some(game.value(cell));
    }
    let truth = game.matrix.rows();
    let total: f64 = (0..mc_games)
        .map(|r| simulate(start.clone(), truth, &mut stream(derive_seed(seed, r as u64), Stream::Optimizer)))
        .sum();
    total / mc_games.max(1) as f64
}

/// Highest-scoring candidate; exact ties are broken by `seed` so that cell
/// order does not favour any row.
fn best_candidate(scored: &[(Vec<CellRef>, f64)], seed: u64) -> Vec<CellRef> {
    let values: Vec<f64> = scored.iter().map(|s| s.1).collect();
    let best = max_of(values.iter().copied());
    let ties: Vec<usize> = (0..scored.len()).filter(|&i| values[i] >= best - 1e-9).collect();
    let mut rng = stream(seed, Stream::Optimizer);
    scored[pick(&ties, &mut rng)].0.clone()
}

fn combinations(items: &[CellRef], k: usize) -> Vec<Vec<CellRef>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, items[i]);
            out.push(rest);
        }
    }
    out
}

/// Chooses `k` extra cells to reveal for free, on top of `fixed`, that
/// maximize the policy's expected net earnings on `game`.
pub fn optimal_nudge(
    game: &Game,
    fixed: &[CellRef],
    k: usize,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<CellRef>, RrError> {
    for &cell in fixed {
        game.check_cell(cell)?;
    }
    let candidates: Vec<CellRef> = game.cells().filter(|c| !fixed.contains(c)).collect();
    if candidates.len() < k {
        return Err(RrError::NotEnoughHidden { needed: k, available: candidates.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let score = |extra: Vec<CellRef>| {
        let shown: Vec<CellRef> = fixed.iter().chain(&extra).copied().collect();
        let value = expected_net(game, &shown, config.mc_games, seed);
        (extra, value)
    };
    match config.mode {
        SearchMode::Exhaustive => {
            let scored: Vec<_> = combinations(&candidates, k).into_par_iter().map(score).collect();
            Ok(best_candidate(&scored, derive_seed(seed, 0)))
        }
        SearchMode::Greedy => {
            let mut chosen: Vec<CellRef> = Vec::with_capacity(k);
            for _ in 0..k {
                let scored: Vec<_> = candidates
                    .par_iter()
                    .filter(|c| !chosen.contains(c))
                    .map(|&c| {
                        let mut extra = chosen.clone();
                        extra.push(c);
                        score(extra)
                    })
                    .collect();
                chosen = best_candidate(&scored, derive_seed(seed, chosen.len() as u64));
            }
            Ok(chosen)
        }
    }
}

/// [`optimal_nudge`] behind the nudge module's optimizer interface.
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimalNudger {
    pub config: OptimizerConfig,
}

impl RevealOptimizer for OptimalNudger {
    fn choose(&self, game: &Game, fixed: &[CellRef], k: usize, seed: u64) -> Result<Vec<CellRef>, String> {
        optimal_nudge(game, fixed, k, &self.config, seed).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{sample_game, GameConfig};

    fn single_prize(cost: f64) -> Belief {
        Belief::new(vec![30.0], vec![cost], 2).unwrap()
    }

    #[test]
    fn worked_single_prize_voc() {
        let r = voc_reveal(&single_prize(2.0), CellRef::new(0, 0)).unwrap();
        let exact = 172_500.0 / 1024.0 - 152.0;
        assert!((r.voc - exact).abs() < 1e-12, "{}", r.voc);
        assert!((r.voc - 16.457).abs() < 1e-3);
    }

    #[test]
    fn expected_reward_examples() {
        let b = Belief::new(vec![20.0, 10.0], vec![2.0, 2.0], 5).unwrap();
        assert_eq!(expected_reward(&b, 0).unwrap(), 150.0);
        let mut b2 = b.clone();
        b2.observe(CellRef::new(0, 0), 4).unwrap();
        assert_eq!(expected_reward(&b2, 0).unwrap(), 130.0);
        let mut one = single_prize(2.0);
        one.observe(CellRef::new(0, 1), 7).unwrap();
        assert_eq!(expected_reward(&one, 1).unwrap(), 210.0);
        assert!(expected_reward(&one, 2).is_err());
    }

    #[test]
    fn step_reveals_or_selects_by_cost() {
        let mut rng = stream(1, Stream::Agent);
        assert!(matches!(rr_step(&single_prize(2.0), &mut rng), Action::Reveal { .. }));
        assert!(matches!(rr_step(&single_prize(30.0), &mut rng), Action::Select { .. }));
    }

    #[test]
    fn trailing_basket_voc_is_minus_cost() {
        let mut b = Belief::new(vec![10.0, 20.0], vec![2.0, 2.0], 2).unwrap();
        b.observe(CellRef::new(1, 0), 10).unwrap();
        b.observe(CellRef::new(1, 1), 0).unwrap();
        // Basket 2 trails by 200 > 10 * 10.
        assert_eq!(voc_reveal(&b, CellRef::new(0, 1)).unwrap().voc, -2.0);
        assert_eq!(voc_reveal(&b, CellRef::new(1, 1)), Err(RrError::CellKnown(CellRef::new(1, 1))));
    }

    #[test]
    fn free_reveals_exhaust_the_grid() {
        let config = GameConfig::new(3, 5, 0).unwrap();
        for seed in 0..20 {
            let game = sample_game(config, seed).unwrap();
            let done = rr_play(TrialState::control(game.clone()), seed).unwrap();
            assert_eq!(done.paid_reveals(), 15);
            assert_eq!(done.finalize().unwrap().gross, crate::game::best_reward(&game));
        }
    }

    #[test]
    fn combinations_count() {
        let cells: Vec<CellRef> = (0..6).map(|b| CellRef::new(0, b)).collect();
        assert_eq!(combinations(&cells, 3).len(), 20);
        assert_eq!(combinations(&cells, 0), vec![Vec::<CellRef>::new()]);
    }
}

//! Trial schedules: balanced blocks shuffled per block, after two practice
//! games.

use rand::seq::SliceRandom;

use super::RunnerError;
use crate::experiment::Experiment;
use crate::game::GameConfig;
use crate::nudge::{NudgeVariant, RevealMode};
use crate::record::TrialSpec;
use crate::rng::{self, derive_seed, Stream};

pub const PRACTICE_TRIALS: usize = 2;

/// Config and nudge of one scheduled slot, before seeding.
type Slot = (GameConfig, NudgeVariant, Option<RevealMode>);

fn config(n_prizes: usize, n_baskets: usize, cost: u32) -> GameConfig {
    GameConfig::new(n_prizes, n_baskets, cost).expect("schedule configs are valid")
}

fn block(experiment: Experiment) -> Vec<Slot> {
    let cost = experiment.base_cost();
    let mut slots = Vec::with_capacity(experiment.block_size());
    let mut add = |n: usize, c: GameConfig, v: NudgeVariant, m: Option<RevealMode>| {
        slots.extend(std::iter::repeat((c, v, m)).take(n))
    };
    match experiment {
        Experiment::Default => {
            for (p, b) in [(2, 2), (2, 5), (5, 2), (5, 5)] {
                add(4, config(p, b, cost), NudgeVariant::None, None);
                add(4, config(p, b, cost), NudgeVariant::Default, None);
            }
        }
        Experiment::Suggestion => {
            for p in [2, 5] {
                add(5, config(p, 5, cost), NudgeVariant::None, None);
                add(5, config(p, 6, cost), NudgeVariant::SuggestionEarly, None);
                add(5, config(p, 6, cost), NudgeVariant::SuggestionLate, None);
            }
        }
        Experiment::Highlight => {
            add(14, config(3, 5, cost), NudgeVariant::None, None);
            add(14, config(3, 5, cost), NudgeVariant::Highlight, None);
        }
        Experiment::Optimal => {
            for mode in RevealMode::ALL {
                add(10, config(5, 5, cost), NudgeVariant::InitialReveals, Some(mode));
            }
        }
    }
    debug_assert_eq!(slots.len(), experiment.block_size());
    slots
}

/// Unrewarded warm-up games: control trials in the experiment's main shape.
fn practice_slot(experiment: Experiment) -> Slot {
    let cost = experiment.base_cost();
    match experiment {
        Experiment::Default | Experiment::Suggestion => (config(2, 5, cost), NudgeVariant::None, None),
        Experiment::Highlight => (config(3, 5, cost), NudgeVariant::None, None),
        Experiment::Optimal => (config(5, 5, cost), NudgeVariant::None, None),
    }
}

/// Practice trials (indices 0 and 1) followed by `n_trials` test trials.
/// `n_trials` must be a whole number of blocks.
pub fn build_schedule(experiment: Experiment, n_trials: usize, master_seed: u64) -> Result<Vec<TrialSpec>, RunnerError> {
    let size = experiment.block_size();
    if n_trials % size != 0 {
        return Err(RunnerError::Indivisible { experiment, n_trials, block_size: size });
    }
    let mut slots: Vec<(Slot, bool)> = vec![(practice_slot(experiment), true); PRACTICE_TRIALS];
    for b in 0..n_trials / size {
        let mut block = block(experiment);
        block.shuffle(&mut rng::stream(derive_seed(master_seed, b as u64), Stream::Schedule));
        slots.extend(block.into_iter().map(|s| (s, false)));
    }
    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(i, ((config, variant, reveal_mode), practice))| TrialSpec {
            experiment,
            trial_index: i,
            seed: derive_seed(master_seed, i as u64),
            config,
            variant,
            reveal_mode,
            practice,
        })
        .collect())
}

/// Schedule for a run of any length: whole blocks, cut after `n_trials`
/// test trials. Prefixes of the same seed agree.
pub fn run_schedule(experiment: Experiment, n_trials: usize, master_seed: u64) -> Vec<TrialSpec> {
    let size = experiment.block_size();
    let mut specs = build_schedule(experiment, n_trials.div_ceil(size) * size, master_seed)
        .expect("whole blocks are divisible");
    specs.truncate(PRACTICE_TRIALS + n_trials);
    specs
}

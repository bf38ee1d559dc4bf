//! Pairing of records that played the same game under the same nudge.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::experiment::Experiment;
use crate::nudge::{NudgeVariant, RevealMode};
use crate::record::TrialRecord;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Matching {
    /// Index pairs into the two input slices.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

type Key = (Experiment, NudgeVariant, Option<RevealMode>, Vec<u32>, Vec<Vec<u8>>);

fn key(r: &TrialRecord) -> Key {
    (
        r.spec.experiment,
        r.nudge.variant,
        r.nudge.reveal_mode,
        r.game.weights.as_slice().to_vec(),
        r.game.matrix.rows().to_vec(),
    )
}

/// Pairs records with identical experiment, nudge variant and game contents
/// (equal game ids imply equal contents). Repeated keys pair in input order.
pub fn match_trials(a: &[TrialRecord], b: &[TrialRecord]) -> Matching {
    let mut pool: HashMap<Key, VecDeque<usize>> = HashMap::new();
    for (j, r) in b.iter().enumerate() {
        pool.entry(key(r)).or_default().push_back(j);
    }
    let mut m = Matching::default();
    let mut used = vec![false; b.len()];
    for (i, r) in a.iter().enumerate() {
        match pool.get_mut(&key(r)).and_then(VecDeque::pop_front) {
            Some(j) => {
                used[j] = true;
                m.pairs.push((i, j));
            }
            None => m.unmatched_a.push(i),
        }
    }
    m.unmatched_b = used.iter().enumerate().filter(|(_, &u)| !u).map(|(j, _)| j).collect();
    m
}

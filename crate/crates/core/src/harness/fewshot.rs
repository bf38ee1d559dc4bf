//! Few-shot examples drawn from other participants' trials.

use rand::seq::{index, SliceRandom};

use super::protocol::Protocol;
use super::HarnessError;
use crate::experiment::Experiment;
use crate::game::{prize_letter, render_outcome_line, render_table, Event};
use crate::nudge::{NudgeVariant, RevealMode};
use crate::record::TrialRecord;
use crate::rng::{self, Stream};

/// Category of a few-shot example and how many of it are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quota {
    pub name: &'static str,
    pub count: usize,
}

/// The quota categories of an experiment (12 examples each).
pub fn quotas(experiment: Experiment) -> Vec<Quota> {
    let q = |name, count| Quota { name, count };
    match experiment {
        Experiment::Default => vec![q("control", 6), q("nudge-accepted", 3), q("nudge-declined", 3)],
        Experiment::Suggestion => vec![q("control", 6), q("early", 3), q("late", 3)],
        Experiment::Highlight => vec![q("control", 6), q("nudge", 6)],
        Experiment::Optimal => vec![q("random", 4), q("extreme", 4), q("optimal", 4)],
    }
}

/// The quota a record counts towards, if any.
pub fn category(record: &TrialRecord) -> Option<&'static str> {
    let variant = record.nudge.variant;
    Some(match (record.spec.experiment, variant) {
        (Experiment::Optimal, NudgeVariant::InitialReveals) => match record.nudge.reveal_mode? {
            RevealMode::Random => "random",
            RevealMode::Extreme => "extreme",
            RevealMode::Optimal => "optimal",
        },
        (Experiment::Optimal, _) => return None,
        (_, NudgeVariant::None) => "control",
        (Experiment::Default, NudgeVariant::Default) => {
            if record.final_selection() == record.nudge.default_basket {
                "nudge-accepted"
            } else {
                "nudge-declined"
            }
        }
        (Experiment::Suggestion, NudgeVariant::SuggestionEarly) => "early",
        (Experiment::Suggestion, NudgeVariant::SuggestionLate) => "late",
        (Experiment::Highlight, NudgeVariant::Highlight) => "nudge",
        _ => return None,
    })
}

fn qualifies(record: &TrialRecord, experiment: Experiment, current_participant: &str) -> bool {
    record.spec.experiment == experiment
        && record.is_complete()
        && !record.spec.practice
        && record.participant_id != current_participant
        && record.paid_reveals() >= 1
}

/// Draws the experiment's quota of complete test trials with at least one
/// paid reveal, from participants other than `current_participant`.
/// Deterministic in `seed` and independent of the order of `db`.
pub fn sample_fewshot(
    db: &[TrialRecord],
    experiment: Experiment,
    current_participant: &str,
    seed: u64,
) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rng = rng::stream(seed, Stream::FewShot);
    let mut chosen = Vec::new();
    for quota in quotas(experiment) {
        let mut pool: Vec<&TrialRecord> = db
            .iter()
            .filter(|r| qualifies(r, experiment, current_participant) && category(r) == Some(quota.name))
            .collect();
        pool.sort_by(|a, b| {
            (&a.participant_id, &a.run_id, a.spec.trial_index, &a.game.id)
                .cmp(&(&b.participant_id, &b.run_id, b.spec.trial_index, &b.game.id))
        });
        if pool.len() < quota.count {
            return Err(HarnessError::FewShotQuota {
                quota: quota.name.to_string(),
                needed: quota.count,
                found: pool.len(),
            });
        }
        let mut picked = index::sample(&mut rng, pool.len(), quota.count).into_vec();
        picked.sort_unstable();
        chosen.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    chosen.shuffle(&mut rng);
    Ok(chosen)
}

/// A finished trial as text: what the player saw first, one line per
/// action with the running cost, and the result.
pub fn render_example(record: &TrialRecord, protocol: &Protocol) -> Result<String, HarnessError> {
    let mut state = record.initial_state()?;
    let mut opening = String::new();
    if let Some(basket) = state.default_offer() {
        opening.push_str(&protocol.default_offer_text(basket));
        opening.push_str("\n\n");
    } else if let (NudgeVariant::SuggestionEarly, Some(s)) = (record.nudge.variant, state.visible_suggestion()) {
        opening.push_str(&protocol.suggestion_text(s));
        opening.push_str("\n\n");
    }
    opening.push_str(&render_table(&state));

    let mut lines = Vec::new();
    for event in &record.events {
        // The suggestion event is produced again by the select before it.
        let Some(action) = event.action() else { continue };
        let produced = state.apply(action)?;
        lines.push(match produced {
            Event::Reveal { cell, value, cost, .. } => format!(
                "Revealed prize {} in basket {}: {value} (cost {cost}, total accumulated cost: {} points)",
                prize_letter(cell.prize),
                cell.basket + 1,
                state.accumulated_cost()
            ),
            Event::DefaultDecision { accept, basket, .. } => {
                format!("{} the default basket {}", if accept { "Accepted" } else { "Declined" }, basket + 1)
            }
            Event::Select { basket, .. } => format!("Selected basket {}", basket + 1),
            Event::SuggestionShown { .. } => {
                format!("Selected basket {}", state.first_selection().map_or(0, |b| b + 1))
            }
        });
        if let Event::SuggestionShown { .. } = produced {
            if let Some(s) = state.visible_suggestion() {
                lines.push(format!("Suggestion: {}", protocol.suggestion_text(s)));
            }
        }
    }
    let outcome = state.finalize()?;
    let result = format!(
        "{} After {} points of reveal costs you earned {} points.",
        render_outcome_line(&state)?,
        outcome.reveal_cost,
        outcome.net
    );
    Ok(format!("{opening}\n\n{}\n\n{result}", lines.join("\n")))
}

//! Per-group metrics over trial records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{cluster_bootstrap, cluster_bootstrap_p_positive, mean, DEFAULT_RESAMPLES};
use super::AnalysisError;
use crate::experiment::Experiment;
use crate::game::{best_reward, reward, TOTAL_POINTS};
use crate::nudge::{NudgeVariant, RevealMode};
use crate::record::TrialRecord;
use crate::rng::{derive_seed, splitmix64};

/// Expected gross of picking a basket at random without revealing.
pub const RANDOM_BASELINE: f64 = 150.0;
/// Mean earnings of the optimal policy reported for the original human
/// study; a labelled reference, not something this crate recomputes.
pub const OPTIMAL_REFERENCE: f64 = 183.64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub resamples: usize,
    pub seed: u64,
    /// Also count aborted trials (normally excluded).
    pub include_incomplete: bool,
    pub include_practice: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { resamples: DEFAULT_RESAMPLES, seed: 0, include_incomplete: false, include_practice: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub agent: String,
    pub condition: String,
    pub metric: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub p_adjusted: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    /// Labelled constants drawn alongside the rows.
    #[serde(default)]
    pub references: BTreeMap<String, f64>,
}

impl MetricTable {
    /// Benjamini–Hochberg over every p-value in the table.
    pub fn adjust(&mut self) {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&i| self.rows[i].p.is_some()).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| self.rows[i].p.unwrap()).collect();
        if let Ok(adj) = super::stats::bh_adjust(&ps) {
            for (&i, a) in idx.iter().zip(adj) {
                self.rows[i].p_adjusted = Some(a);
            }
        }
    }
}

/// (agent label, condition)
pub type GroupKey = (String, String);

pub fn group_key(r: &TrialRecord) -> GroupKey {
    (r.agent.label(), r.agent.condition.to_string())
}

/// Records that enter aggregates under `opts`.
pub fn analysed<'a>(records: &'a [TrialRecord], opts: &AnalysisOptions) -> Vec<&'a TrialRecord> {
    records
        .iter()
        .filter(|r| (opts.include_incomplete || r.is_complete()) && (opts.include_practice || !r.spec.practice))
        .collect()
}

pub fn by_group<'a>(records: &[&'a TrialRecord]) -> BTreeMap<GroupKey, Vec<&'a TrialRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(group_key(r)).or_default().push(r);
    }
    groups
}

fn by_participant<'a, T: Copy>(items: &[(&'a TrialRecord, T)]) -> Vec<Vec<T>> {
    let mut clusters: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    for (r, v) in items {
        clusters.entry(r.participant_id.as_str()).or_default().push(*v);
    }
    clusters.into_values().collect()
}

/// Stable per-row bootstrap seed, independent of row order.
fn row_seed(base: u64, parts: &[&str]) -> u64 {
    let h = parts.iter().flat_map(|p| p.bytes().chain([0xff])).fold(0u64, |h, b| splitmix64(h ^ b as u64));
    derive_seed(base, h)
}

fn mean_of(xs: &[&f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().copied().sum::<f64>() / xs.len() as f64)
}

/// Mean of per-trial values with a participant-cluster bootstrap interval.
fn mean_row(key: &GroupKey, metric: &str, items: &[(&TrialRecord, f64)], opts: &AnalysisOptions) -> Option<MetricRow> {
    let clusters = by_participant(items);
    let seed = row_seed(opts.seed, &[&key.0, &key.1, metric]);
    let ci = cluster_bootstrap(&clusters, mean_of, opts.resamples, seed)?;
    Some(MetricRow {
        agent: key.0.clone(),
        condition: key.1.clone(),
        metric: metric.to_string(),
        estimate: ci.estimate,
        ci_low: ci.low,
        ci_high: ci.high,
        n: items.len(),
        p: None,
        p_adjusted: None,
    })
}

fn proportion_row(
    key: &GroupKey,
    metric: &str,
    trials: &[&TrialRecord],
    hit: impl Fn(&TrialRecord) -> bool,
    opts: &AnalysisOptions,
) -> Option<MetricRow> {
    let items: Vec<(&TrialRecord, f64)> = trials.iter().map(|r| (*r, if hit(r) { 1.0 } else { 0.0 })).collect();
    mean_row(key, metric, &items, opts)
}

/// Pooled ratio Σnum / Σden with a participant-cluster bootstrap.
fn ratio_row(key: &GroupKey, metric: &str, items: &[(&TrialRecord, (f64, f64))], opts: &AnalysisOptions) -> Option<MetricRow> {
    let clusters = by_participant(items);
    let seed = row_seed(opts.seed, &[&key.0, &key.1, metric]);
    let stat = |xs: &[&(f64, f64)]| {
        let (num, den) = xs.iter().fold((0.0, 0.0), |(a, b), (n, d)| (a + n, b + d));
        (den > 0.0).then(|| num / den)
    };
    let ci = cluster_bootstrap(&clusters, stat, opts.resamples, seed)?;
    Some(MetricRow {
        agent: key.0.clone(),
        condition: key.1.clone(),
        metric: metric.to_string(),
        estimate: ci.estimate,
        ci_low: ci.low,
        ci_high: ci.high,
        n: items.len(),
        p: None,
        p_adjusted: None,
    })
}

/// Histogram of paid reveals before the first choice, with the number of
/// nudge-provided free cells as a separate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealHistogram {
    pub agent: String,
    pub condition: String,
    pub experiment: Experiment,
    pub trials: usize,
    pub paid: BTreeMap<usize, usize>,
    pub free: BTreeMap<usize, usize>,
}

impl RevealHistogram {
    /// The paid-reveal counts as a sample (for KS tests).
    pub fn sample(&self) -> Vec<f64> {
        self.paid.iter().flat_map(|(&k, &n)| std::iter::repeat(k as f64).take(n)).collect()
    }
}

pub fn reveal_count_distribution(records: &[TrialRecord], opts: &AnalysisOptions) -> Vec<RevealHistogram> {
    let mut out: BTreeMap<(GroupKey, Experiment), RevealHistogram> = BTreeMap::new();
    for r in analysed(records, opts) {
        let key = group_key(r);
        let h = out.entry((key.clone(), r.spec.experiment)).or_insert_with(|| RevealHistogram {
            agent: key.0,
            condition: key.1,
            experiment: r.spec.experiment,
            trials: 0,
            paid: BTreeMap::new(),
            free: BTreeMap::new(),
        });
        h.trials += 1;
        *h.paid.entry(r.reveals_before_first_choice()).or_default() += 1;
        *h.free.entry(r.nudge.upfront_free_cells().len()).or_default() += 1;
    }
    out.into_values().collect()
}

/// Mean net earnings per group and experiment, with the random and
/// reference-optimal lines attached.
pub fn net_earnings_summary(records: &[TrialRecord], opts: &AnalysisOptions) -> Result<MetricTable, AnalysisError> {
    let kept = analysed(records, opts);
    if kept.is_empty() {
        return Err(AnalysisError::EmptyGroup("net earnings".into()));
    }
    let mut table = MetricTable::default();
    table.references.insert("random".into(), RANDOM_BASELINE);
    table.references.insert("optimal_reference".into(), OPTIMAL_REFERENCE);
    for (key, group) in by_group(&kept) {
        let mut by_experiment: BTreeMap<Experiment, Vec<(&TrialRecord, f64)>> = BTreeMap::new();
        for r in group {
            if let Some(net) = r.net() {
                by_experiment.entry(r.spec.experiment).or_default().push((r, net as f64));
            }
        }
        for (e, items) in by_experiment {
            table.rows.extend(mean_row(&key, &format!("mean_net_{e}"), &items, opts));
        }
    }
    Ok(table)
}

fn default_is_optimal(r: &TrialRecord) -> bool {
    reward(&r.game, r.reference.default_basket).map_or(false, |v| v == best_reward(&r.game))
}

/// The highlighted prize is optimal when it is worth at least as much as
/// every other prize.
fn highlight_is_optimal(r: &TrialRecord) -> Option<bool> {
    let p = r.reference.highlighted_prize?;
    let w = r.game.weights.as_slice();
    Some(w.iter().all(|&x| x <= w[p]))
}

/// Switching to the late suggestion is optimal when the suggested basket
/// pays at least as much as the first choice.
fn switch_is_optimal(r: &TrialRecord) -> Option<bool> {
    let (first, suggested) = (r.first_selection()?, r.nudge.suggested_basket?);
    Some(reward(&r.game, suggested).ok()? >= reward(&r.game, first).ok()?)
}

fn switched(r: &TrialRecord) -> bool {
    r.first_selection() != r.final_selection()
}

fn first_reveal_highlighted(r: &TrialRecord) -> bool {
    matches!((r.first_reveal(), r.reference.highlighted_prize), (Some(c), Some(p)) if c.prize == p)
}

/// Nudge-sensitivity probabilities for one experiment, per group.
pub fn nudge_sensitivity(
    records: &[TrialRecord],
    experiment: Experiment,
    opts: &AnalysisOptions,
) -> Result<MetricTable, AnalysisError> {
    let all = analysed(records, opts);
    let kept: Vec<&TrialRecord> = all.iter().copied().filter(|r| r.spec.experiment == experiment).collect();
    if kept.is_empty() {
        if let Some(other) = all.first() {
            return Err(AnalysisError::WrongExperiment { requested: experiment, found: other.spec.experiment });
        }
    }
    let mut table = MetricTable::default();
    for (key, group) in by_group(&kept) {
        let select = |f: &dyn Fn(&TrialRecord) -> bool| -> Vec<&TrialRecord> {
            group.iter().copied().filter(|r| f(r)).collect()
        };
        let variant = |v: NudgeVariant| move |r: &TrialRecord| r.nudge.variant == v;
        let rows = &mut table.rows;
        match experiment {
            Experiment::Default => {
                let picks_default = |r: &TrialRecord| r.final_selection() == Some(r.reference.default_basket);
                let accepted = |r: &TrialRecord| r.default_decision() == Some(true);
                let control = select(&variant(NudgeVariant::None));
                let nudge = select(&variant(NudgeVariant::Default));
                let optimal: Vec<_> = nudge.iter().copied().filter(|r| default_is_optimal(r)).collect();
                let suboptimal: Vec<_> = nudge.iter().copied().filter(|r| !default_is_optimal(r)).collect();
                rows.extend(proportion_row(&key, "p_choose_default_control", &control, picks_default, opts));
                rows.extend(proportion_row(&key, "p_choose_default_nudge", &nudge, picks_default, opts));
                rows.extend(proportion_row(&key, "p_accept_default_optimal", &optimal, accepted, opts));
                rows.extend(proportion_row(&key, "p_accept_default_suboptimal", &suboptimal, accepted, opts));
            }
            Experiment::Suggestion => {
                let takes = |r: &TrialRecord| r.nudge.suggested_basket.is_some() && r.final_selection() == r.nudge.suggested_basket;
                let early = select(&variant(NudgeVariant::SuggestionEarly));
                let late = select(&variant(NudgeVariant::SuggestionLate));
                rows.extend(proportion_row(&key, "p_choose_suggested_early", &early, takes, opts));
                rows.extend(proportion_row(&key, "p_choose_suggested_late", &late, takes, opts));
                let stratum = |want: bool| -> Vec<&TrialRecord> {
                    late.iter().copied().filter(|r| switch_is_optimal(r) == Some(want)).collect()
                };
                rows.extend(proportion_row(&key, "p_switch_late_optimal", &stratum(true), switched, opts));
                rows.extend(proportion_row(&key, "p_switch_late_suboptimal", &stratum(false), switched, opts));
            }
            Experiment::Highlight => {
                let control = select(&variant(NudgeVariant::None));
                let nudge = select(&variant(NudgeVariant::Highlight));
                let c: Vec<&TrialRecord> = control.iter().copied().filter(|r| r.first_reveal().is_some()).collect();
                let n: Vec<&TrialRecord> = nudge.iter().copied().filter(|r| r.first_reveal().is_some()).collect();
                let stratum = |want: bool| -> Vec<&TrialRecord> {
                    n.iter().copied().filter(|r| highlight_is_optimal(r) == Some(want)).collect()
                };
                rows.extend(proportion_row(&key, "p_first_reveal_highlighted_control", &c, first_reveal_highlighted, opts));
                rows.extend(proportion_row(&key, "p_first_reveal_highlighted_nudge", &n, first_reveal_highlighted, opts));
                rows.extend(proportion_row(&key, "p_first_reveal_highlighted_optimal", &stratum(true), first_reveal_highlighted, opts));
                rows.extend(proportion_row(&key, "p_first_reveal_highlighted_suboptimal", &stratum(false), first_reveal_highlighted, opts));
                for (name, trials) in [("share_reveals_highlighted_control", &control), ("share_reveals_highlighted_nudge", &nudge)] {
                    let items: Vec<(&TrialRecord, (f64, f64))> = trials
                        .iter()
                        .map(|r| {
                            let p = r.reference.highlighted_prize;
                            let hits = r.reveal_cells().filter(|c| Some(c.prize) == p).count();
                            (*r, (hits as f64, r.paid_reveals() as f64))
                        })
                        .collect();
                    rows.extend(ratio_row(&key, name, &items, opts));
                }
            }
            Experiment::Optimal => {
                let mode_nets = |m: RevealMode| -> Vec<(&TrialRecord, f64)> {
                    group
                        .iter()
                        .filter(|r| r.nudge.reveal_mode == Some(m))
                        .filter_map(|r| Some((*r, r.net()? as f64)))
                        .collect()
                };
                for m in RevealMode::ALL {
                    let name = format!("mean_net_{}", format!("{m:?}").to_lowercase());
                    rows.extend(mean_row(&key, &name, &mode_nets(m), opts));
                }
                for (lo, hi, name) in [
                    (RevealMode::Random, RevealMode::Extreme, "diff_net_extreme_minus_random"),
                    (RevealMode::Extreme, RevealMode::Optimal, "diff_net_optimal_minus_extreme"),
                ] {
                    rows.extend(mean_difference_row(&key, name, &mode_nets(lo), &mode_nets(hi), opts));
                }
            }
        }
    }
    table.adjust();
    Ok(table)
}

/// mean(b) − mean(a), bootstrapped over participants, with the one-sided
/// p-value for a positive difference.
fn mean_difference_row(
    key: &GroupKey,
    metric: &str,
    a: &[(&TrialRecord, f64)],
    b: &[(&TrialRecord, f64)],
    opts: &AnalysisOptions,
) -> Option<MetricRow> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let tagged: Vec<(&TrialRecord, (bool, f64))> =
        a.iter().map(|&(r, v)| (r, (false, v))).chain(b.iter().map(|&(r, v)| (r, (true, v)))).collect();
    let clusters = by_participant(&tagged);
    let stat = |xs: &[&(bool, f64)]| {
        let side = |s: bool| mean(&xs.iter().filter(|x| x.0 == s).map(|x| x.1).collect::<Vec<_>>());
        Some(side(true)? - side(false)?)
    };
    let seed = row_seed(opts.seed, &[&key.0, &key.1, metric]);
    let (ci, p) = cluster_bootstrap_p_positive(&clusters, stat, opts.resamples, seed)?;
    Some(MetricRow {
        agent: key.0.clone(),
        condition: key.1.clone(),
        metric: metric.to_string(),
        estimate: ci.estimate,
        ci_low: ci.low,
        ci_high: ci.high,
        n: tagged.len(),
        p: Some(p),
        p_adjusted: None,
    })
}

/// L1 distance of the weights from the uniform vector.
pub fn idiosyncrasy(weights: &[u32]) -> f64 {
    if weights.is_empty() {
        return 0.0;
    }
    let uniform = TOTAL_POINTS as f64 / weights.len() as f64;
    weights.iter().map(|&w| (w as f64 - uniform).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub n_prizes: usize,
    pub n_baskets: usize,
    pub trials: usize,
    /// `[prize][basket]` reveal counts, or per-trial frequencies.
    pub cells: Vec<Vec<f64>>,
}

/// Where paid reveals land on the grid. Records of other shapes are
/// dropped when `shape` is given; without it they must all agree.
pub fn saliency(
    records: &[&TrialRecord],
    shape: Option<(usize, usize)>,
    normalize: bool,
) -> Result<SaliencyMap, AnalysisError> {
    let shape_of = |r: &TrialRecord| (r.game.n_prizes(), r.game.n_baskets());
    let kept: Vec<&TrialRecord> = match shape {
        Some(s) => records.iter().copied().filter(|r| shape_of(r) == s).collect(),
        None => records.to_vec(),
    };
    let (p, b) = match (shape, kept.first()) {
        (Some(s), _) => s,
        (None, Some(r)) => shape_of(r),
        (None, None) => return Err(AnalysisError::EmptyGroup("saliency".into())),
    };
    if kept.iter().any(|r| shape_of(r) != (p, b)) {
        return Err(AnalysisError::Shape("records have different grid shapes; pass a shape".into()));
    }
    let mut cells = vec![vec![0.0; b]; p];
    for r in &kept {
        for c in r.reveal_cells() {
            cells[c.prize][c.basket] += 1.0;
        }
    }
    if normalize && !kept.is_empty() {
        let n = kept.len() as f64;
        cells.iter_mut().flatten().for_each(|v| *v /= n);
    }
    Ok(SaliencyMap { n_prizes: p, n_baskets: b, trials: kept.len(), cells })
}

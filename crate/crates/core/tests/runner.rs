use std::collections::BTreeMap;
use std::path::Path;

use basketlab::experiment::Experiment;
use basketlab::harness::{FullRevealPolicy, PolicyAgent, RandomPolicy, RrPolicy};
use basketlab::nudge::{NudgeVariant, RevealMode};
use basketlab::record::{RecordError, TrialRecord};
use basketlab::rr::{OptimalNudger, OptimizerConfig, SearchMode};
use basketlab::runner::store::{Manifest, RECORDS_FILE};
use basketlab::runner::{
    build_schedule, match_trials, read_records, run_experiment, run_schedule, RunSpec, RunnerError, PRACTICE_TRIALS,
};

pub fn nudger() -> OptimalNudger {
    OptimalNudger { config: OptimizerConfig { mc_games: 4, mode: SearchMode::Greedy } }
}

pub fn by_index(mut records: Vec<TrialRecord>) -> Vec<TrialRecord> {
    records.sort_by_key(|r| r.spec.trial_index);
    records
}

type Cell = (usize, usize, NudgeVariant, Option<RevealMode>);

pub fn block_counts(experiment: Experiment, seed: u64) -> Vec<BTreeMap<Cell, usize>> {
    let size = experiment.block_size();
    let specs = build_schedule(experiment, 2 * size, seed).unwrap();
    specs[PRACTICE_TRIALS..]
        .chunks(size)
        .map(|block| {
            let mut counts = BTreeMap::new();
            for s in block {
                *counts.entry((s.config.n_prizes, s.config.n_baskets, s.variant, s.reveal_mode)).or_default() += 1;
            }
            counts
        })
        .collect()
}

#[test]
pub fn every_block_is_balanced() {
    use NudgeVariant as V;
    let expected = |cells: &[(Cell, usize)]| cells.iter().cloned().collect::<BTreeMap<_, _>>();
    let default: Vec<(Cell, usize)> = [(2, 2), (2, 5), (5, 2), (5, 5)]
        .iter()
        .flat_map(|&(p, b)| [((p, b, V::None, None), 4), ((p, b, V::Default, None), 4)])
        .collect();
    let suggestion: Vec<(Cell, usize)> = [2, 5]
        .iter()
        .flat_map(|&p| [((p, 5, V::None, None), 5), ((p, 6, V::SuggestionEarly, None), 5), ((p, 6, V::SuggestionLate, None), 5)])
        .collect();
    let highlight = vec![((3, 5, V::None, None), 14), ((3, 5, V::Highlight, None), 14)];
    let optimal: Vec<(Cell, usize)> =
        RevealMode::ALL.iter().map(|&m| ((5, 5, V::InitialReveals, Some(m)), 10)).collect();
    for (experiment, cells) in [
        (Experiment::Default, default),
        (Experiment::Suggestion, suggestion),
        (Experiment::Highlight, highlight),
        (Experiment::Optimal, optimal),
    ] {
        for seed in 0..5 {
            for block in block_counts(experiment, seed) {
                assert_eq!(block, expected(&cells), "{experiment}");
            }
        }
    }
}

#[test]
pub fn schedules_start_with_practice_and_share_prefixes() {
    for experiment in Experiment::ALL {
        let long = run_schedule(experiment, 100, 9);
        assert_eq!(long.len(), PRACTICE_TRIALS + 100);
        assert!(long[..PRACTICE_TRIALS].iter().all(|s| s.practice && s.variant == NudgeVariant::None));
        assert!(long[PRACTICE_TRIALS..].iter().all(|s| !s.practice));
        for (i, s) in long.iter().enumerate() {
            assert_eq!(s.trial_index, i);
        }
        let short = run_schedule(experiment, 7, 9);
        assert_eq!(&long[..short.len()], &short[..]);
        let mut seeds: Vec<u64> = long.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), long.len());
        assert_ne!(run_schedule(experiment, 30, 10)[PRACTICE_TRIALS..], long[PRACTICE_TRIALS..PRACTICE_TRIALS + 30]);
    }
    assert!(matches!(build_schedule(Experiment::Highlight, 29, 0), Err(RunnerError::Indivisible { .. })));
}

#[test]
pub fn worker_count_does_not_change_records() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for workers in [1, 4] {
        let mut spec = RunSpec::new(Experiment::Suggestion, 30, 3, tmp.path().join(format!("w{workers}")));
        spec.workers = workers;
        let summary = run_experiment(&spec, Box::new(PolicyAgent::new(RrPolicy)), None).unwrap();
        assert_eq!((summary.complete, summary.aborted, summary.resumed), (32, 0, 0));
        runs.push(by_index(read_records(&spec.out_dir).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    for r in &runs[0] {
        r.validate().unwrap();
        assert_eq!(r.participant_id, "rr@suggestion-s3");
    }
}

pub fn truncate_records(dir: &Path, keep_lines: usize, extra_bytes: usize) {
    let path = dir.join(RECORDS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.split_inclusive('\n');
    let mut kept: String = lines.by_ref().take(keep_lines).collect();
    if let Some(next) = lines.next() {
        kept.push_str(&next[..extra_bytes.min(next.len() - 1)]);
    }
    std::fs::write(&path, kept).unwrap();
}

#[test]
pub fn interrupted_runs_resume_without_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let spec = RunSpec::new(Experiment::Optimal, 30, 5, &full);
    let optimizer = nudger();
    run_experiment(&spec, Box::new(PolicyAgent::new(RandomPolicy)), Some(&optimizer)).unwrap();
    let expected = by_index(read_records(&full).unwrap());

    for (keep, extra) in [(0, 0), (5, 0), (5, 40), (31, 10)] {
        let dir = tmp.path().join(format!("cut-{keep}-{extra}"));
        std::fs::create_dir_all(&dir).unwrap();
        for f in ["manifest.json", RECORDS_FILE] {
            std::fs::copy(full.join(f), dir.join(f)).unwrap();
        }
        truncate_records(&dir, keep, extra);
        let spec = RunSpec { out_dir: dir.clone(), ..spec.clone() };
        let summary = run_experiment(&spec, Box::new(PolicyAgent::new(RandomPolicy)), Some(&optimizer)).unwrap();
        assert_eq!(summary.resumed, keep);
        assert_eq!(summary.complete, 32 - keep);
        assert_eq!(by_index(read_records(&dir).unwrap()), expected, "cut {keep}+{extra}");
        // A completed run is left alone.
        let again = run_experiment(&spec, Box::new(PolicyAgent::new(RandomPolicy)), Some(&optimizer)).unwrap();
        assert_eq!((again.complete, again.resumed), (0, 32));
        assert_eq!(read_records(&dir).unwrap().len(), 32);
        let manifest = Manifest::load(&dir).unwrap().unwrap();
        assert_eq!(manifest.participant_id, "random@optimal-s5");
    }
}

#[test]
pub fn a_directory_holds_one_run() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = RunSpec::new(Experiment::Default, 32, 1, tmp.path());
    run_experiment(&spec, Box::new(PolicyAgent::new(RandomPolicy)), None).unwrap();
    let other_seed = RunSpec::new(Experiment::Default, 32, 2, tmp.path());
    let err = run_experiment(&other_seed, Box::new(PolicyAgent::new(RandomPolicy)), None).unwrap_err();
    assert!(matches!(err, RunnerError::ManifestMismatch { .. }), "{err}");
    let other_agent = run_experiment(&spec, Box::new(PolicyAgent::new(RrPolicy)), None).unwrap_err();
    assert!(matches!(other_agent, RunnerError::ManifestMismatch { .. }));
}

#[test]
pub fn optimal_experiment_needs_an_optimizer() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = RunSpec::new(Experiment::Optimal, 30, 1, tmp.path());
    let err = run_experiment(&spec, Box::new(PolicyAgent::new(RandomPolicy)), None).unwrap_err();
    assert!(matches!(err, RunnerError::Record(RecordError::MissingOptimizer)), "{err}");
}

#[test]
pub fn foreign_schema_versions_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = RunSpec::new(Experiment::Highlight, 28, 1, tmp.path());
    run_experiment(&spec, Box::new(PolicyAgent::new(RandomPolicy)), None).unwrap();
    let path = tmp.path().join(RECORDS_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"schema_version\":1", "\"schema_version\":99", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        read_records(&path),
        Err(RunnerError::Record(RecordError::SchemaVersion { found: 99 }))
    ));
}

#[test]
pub fn agents_on_the_same_schedule_are_matched_pairwise() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sets = Vec::new();
    for (name, agent) in [
        ("rr", Box::new(PolicyAgent::new(RrPolicy)) as Box<dyn basketlab::harness::Agent>),
        ("full", Box::new(PolicyAgent::new(FullRevealPolicy))),
    ] {
        let spec = RunSpec::new(Experiment::Default, 32, 8, tmp.path().join(name));
        run_experiment(&spec, agent, None).unwrap();
        sets.push(read_records(&spec.out_dir).unwrap());
    }
    let m = match_trials(&sets[0], &sets[1]);
    assert_eq!(m.pairs.len(), 34);
    assert!(m.unmatched_a.is_empty() && m.unmatched_b.is_empty());
    for &(i, j) in &m.pairs {
        assert!(sets[0][i].game.same_contents(&sets[1][j].game));
        assert_eq!(sets[0][i].nudge, sets[1][j].nudge);
    }
    let other = read_records(&tmp.path().join("rr")).unwrap();
    let shifted: Vec<_> = other.into_iter().skip(3).collect();
    let m = match_trials(&sets[1], &shifted);
    assert_eq!(m.pairs.len(), 31);
    assert_eq!(m.unmatched_a.len(), 3);
}

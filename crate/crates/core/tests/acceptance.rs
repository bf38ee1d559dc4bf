//! Acceptance gate: one PASS/FAIL line per headline criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! Several criteria reuse the oracle tests of the other suites, which are
//! pulled in as modules.

#[path = "runner.rs"]
mod runner;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use basketlab::analysis::bh_adjust;
use basketlab::analysis::metrics::{nudge_sensitivity, AnalysisOptions};
use basketlab::experiment::{Condition, Experiment};
use basketlab::game::{
    best_reward, reward, sample_game, Action, CostSchedule, Game, GameConfig, TrialState, ALLOWED_BASKETS,
    ALLOWED_PRIZES,
};
use basketlab::harness::fewshot::sample_fewshot;
use basketlab::harness::{FullRevealPolicy, LlmAgent, LlmConfig, PolicyAgent, RandomPolicy, RrPolicy};
use basketlab::nudge::{NudgeSpec, NudgeVariant, RevealMode};
use basketlab::record::TrialSpec;
use basketlab::rr::OptimalNudger;
use basketlab::runner::{play_trial, read_records, run_experiment, RunSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_MIN_FIXTURES: usize = 12;
const GOLDEN_MAX_TIME: Duration = Duration::from_secs(1);
const BASELINE_GAMES: usize = 10_000;
const BASELINE_MEAN: f64 = 150.0;
const BASELINE_SE_MULTIPLE: f64 = 3.0;
const BASELINE_MAX_TIME: Duration = Duration::from_secs(30);
const SAMPLING_GAMES: u64 = 10_000;
const CELL_MEAN_TOLERANCE: f64 = 0.05;
const MID_MASS: f64 = 912.0 / 1024.0;
const MID_MASS_TOLERANCE: f64 = 0.01;
const NUDGE_GAMES_PER_MODE: usize = 500;
const NUDGE_ALPHA: f64 = 0.05;
const NUDGE_RESAMPLES: usize = 4000;
const NUDGE_MAX_TIME: Duration = Duration::from_secs(600);

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Runs another suite's test function, turning a panic into a failure.
fn suite(name: &str, f: impl FnOnce()) -> Result<(), String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        format!("{name}: {msg}")
    })
}

fn golden_rendering() -> Check {
    let start = Instant::now();
    suite("intro", golden_tables::intro_sequence)?;
    suite("five by two", golden_tables::five_prizes_two_baskets)?;
    suite("two by two", golden_tables::two_by_two_with_values_shown)?;
    suite("five by five", golden_tables::five_by_five_fresh)?;
    suite("default offer", golden_tables::default_offer_table)?;
    suite("suggestion", golden_tables::suggestion_intro_sequence)?;
    suite("suggestion five prizes", golden_tables::suggestion_five_prizes)?;
    suite("early suggestion", golden_tables::early_suggestion_shows_one_cell_for_free)?;
    suite("highlight", golden_tables::highlight_sequence)?;
    suite("highlight control", golden_tables::highlight_control_banner)?;
    suite("initial reveals", golden_tables::initial_reveals_sequence)?;
    suite("initial reveals full", golden_tables::initial_reveals_fully_revealed)?;
    suite("fixtures parse", golden_tables::every_fixture_table_parses_and_rerenders)?;
    let elapsed = start.elapsed();
    let dir = format!("{}/tests/fixtures/tables", env!("CARGO_MANIFEST_DIR"));
    let fixtures = std::fs::read_dir(dir).map_err(|e| e.to_string())?.count();
    ensure(fixtures >= GOLDEN_MIN_FIXTURES, format!("{fixtures} fixtures"))?;
    ensure(elapsed < GOLDEN_MAX_TIME, format!("took {elapsed:?}"))?;
    Ok(format!("{fixtures} fixtures byte-exact in {elapsed:?}"))
}

fn outcome(weights: &[u32], rows: Vec<Vec<u8>>, costs: Vec<u32>, nudge: NudgeSpec, banner: bool, actions: &[Action]) -> (i64, i64) {
    let config = GameConfig::new(weights.len(), rows[0].len(), 2).unwrap();
    let game = Game::from_parts(config, weights.to_vec(), rows).unwrap();
    let mut state = TrialState::new(game, CostSchedule(costs), nudge, banner).unwrap();
    for &a in actions {
        state.apply(a).unwrap();
    }
    let o = state.finalize().unwrap();
    (o.gross, o.net)
}

fn fill(n_prizes: usize, known: &[(usize, usize, u8)]) -> Vec<Vec<u8>> {
    let mut rows = vec![vec![5u8; 5]; n_prizes];
    for &(p, b, v) in known {
        rows[p][b] = v;
    }
    rows
}

fn arithmetic() -> Check {
    let r = |cells: &[(usize, usize)]| cells.iter().map(|&(p, b)| Action::reveal(p, b)).collect::<Vec<_>>();
    let mut results = Vec::new();
    let mut a = r(&[(0, 1), (0, 3), (1, 2)]);
    a.push(Action::Select { basket: 3 });
    results.push(outcome(&[23, 7], fill(2, &[(0, 3, 5), (1, 3, 4)]), vec![2, 2], NudgeSpec::none(), false, &a));
    let mut a = r(&[(0, 1), (0, 3), (1, 2)]);
    a.push(Action::Select { basket: 2 });
    results.push(outcome(&[20, 10], fill(2, &[(0, 2, 6), (1, 2, 5)]), vec![2, 2], NudgeSpec::none(), false, &a));
    let highlight = NudgeSpec { variant: NudgeVariant::Highlight, highlighted_prize: Some(1), ..NudgeSpec::none() };
    let mut a = r(&[(0, 0), (0, 3), (1, 0), (2, 1)]);
    a.push(Action::Select { basket: 0 });
    results.push(outcome(&[2, 18, 10], fill(3, &[(0, 0, 6), (1, 0, 7), (2, 0, 4)]), vec![3, 1, 3], highlight, true, &a));
    let mut a = r(&[(0, 0), (0, 4), (1, 3), (2, 3), (3, 1)]);
    a.push(Action::Select { basket: 0 });
    let known = [(0, 0, 6), (1, 0, 6), (2, 0, 3), (3, 0, 2), (4, 0, 6)];
    results.push(outcome(&[12, 6, 8, 2, 2], fill(5, &known), vec![2; 5], NudgeSpec::none(), false, &a));
    let expected = [(143, 137), (170, 164), (178, 168), (148, 138)];
    ensure(results == expected, format!("{results:?}"))?;
    Ok(results.iter().map(|(g, n)| format!("{g}/{n}")).collect::<Vec<_>>().join(", "))
}

fn shapes() -> Vec<(usize, usize)> {
    ALLOWED_PRIZES.iter().flat_map(|&p| ALLOWED_BASKETS.iter().map(move |&b| (p, b))).collect()
}

fn random_baseline() -> Check {
    let start = Instant::now();
    let shapes = shapes();
    let mut agent = PolicyAgent::new(RandomPolicy);
    let mut nets = Vec::with_capacity(BASELINE_GAMES);
    for i in 0..BASELINE_GAMES {
        let (p, b) = shapes[i % shapes.len()];
        let spec = TrialSpec {
            experiment: Experiment::Default,
            trial_index: i,
            seed: 1_000_000 + i as u64,
            config: GameConfig::new(p, b, 2).unwrap(),
            variant: NudgeVariant::None,
            reveal_mode: None,
            practice: false,
        };
        let (record, _) = play_trial(&spec, &mut agent, None, "baseline", "random").map_err(|e| e.to_string())?;
        nets.push(record.net().ok_or("incomplete trial")? as f64);
    }
    let n = nets.len() as f64;
    let mean = nets.iter().sum::<f64>() / n;
    let se = (nets.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let elapsed = start.elapsed();
    let summary = format!("mean {mean:.2} (SE {se:.2}) over {BASELINE_GAMES} games in {elapsed:.1?}");
    ensure((mean - BASELINE_MEAN).abs() <= BASELINE_SE_MULTIPLE * se, summary.clone())?;
    ensure(elapsed < BASELINE_MAX_TIME, summary.clone())?;
    Ok(summary)
}

fn sampling_invariants() -> Check {
    let shapes = shapes();
    let (mut sum, mut mid, mut count) = (0u64, 0u64, 0u64);
    for seed in 0..SAMPLING_GAMES {
        let (p, b) = shapes[seed as usize % shapes.len()];
        let g = sample_game(GameConfig::new(p, b, 2).unwrap(), seed).map_err(|e| e.to_string())?;
        let w = g.weights.as_slice();
        ensure(w.iter().all(|&x| x >= 1) && w.iter().sum::<u32>() == 30, format!("weights {w:?}"))?;
        for row in g.matrix.rows() {
            for &v in row {
                ensure(v <= 10, format!("cell {v}"))?;
                sum += u64::from(v);
                mid += u64::from((3..=7).contains(&v));
                count += 1;
            }
        }
    }
    let mean = sum as f64 / count as f64;
    let share = mid as f64 / count as f64;
    let summary = format!("cell mean {mean:.4}, P(3..=7) {share:.4} over {count} cells");
    ensure((mean - 5.0).abs() <= CELL_MEAN_TOLERANCE, summary.clone())?;
    ensure((share - MID_MASS).abs() <= MID_MASS_TOLERANCE, summary.clone())?;
    Ok(summary)
}

fn voc_oracle() -> Check {
    suite("brute force", rr_model::voc_matches_brute_force_enumeration)?;
    suite("worked example", rr_model::worked_example_and_cost_thirty)?;
    Ok(format!("1000 random beliefs to 1e-12; worked case {:.4}", 172_500.0 / 1024.0 - 152.0))
}

/// One-sided bootstrap p-value for mean(hi) > mean(lo), resampling each
/// group independently.
fn p_greater(lo: &[f64], hi: &[f64], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resampled_mean = |xs: &[f64]| (0..xs.len()).map(|_| xs[rng.gen_range(0..xs.len())]).sum::<f64>() / xs.len() as f64;
    let at_or_below = (0..NUDGE_RESAMPLES).filter(|_| resampled_mean(hi) - resampled_mean(lo) <= 0.0).count();
    (at_or_below + 1) as f64 / (NUDGE_RESAMPLES + 1) as f64
}

fn optimal_nudging_order() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = RunSpec::new(Experiment::Optimal, 3 * NUDGE_GAMES_PER_MODE, 2024, tmp.path());
    spec.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_experiment(&spec, Box::new(PolicyAgent::new(RrPolicy)), Some(&OptimalNudger::default()))
        .map_err(|e| e.to_string())?;
    let records = read_records(tmp.path()).map_err(|e| e.to_string())?;
    let mut nets: BTreeMap<RevealMode, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.spec.practice) {
        nets.entry(r.spec.reveal_mode.ok_or("no reveal mode")?).or_default().push(r.net().ok_or("incomplete")? as f64);
    }
    let mean = |m: RevealMode| nets[&m].iter().sum::<f64>() / nets[&m].len() as f64;
    let (random, extreme, optimal) = (mean(RevealMode::Random), mean(RevealMode::Extreme), mean(RevealMode::Optimal));
    let p1 = p_greater(&nets[&RevealMode::Random], &nets[&RevealMode::Extreme], 1);
    let p2 = p_greater(&nets[&RevealMode::Extreme], &nets[&RevealMode::Optimal], 2);
    let elapsed = start.elapsed();
    let summary = format!(
        "random {random:.2} < extreme {extreme:.2} (p {p1:.4}) < optimal {optimal:.2} (p {p2:.4}); {} games per mode in {elapsed:.0?}",
        nets[&RevealMode::Random].len()
    );
    ensure(nets.values().all(|v| v.len() >= NUDGE_GAMES_PER_MODE), summary.clone())?;
    ensure(random < extreme && extreme < optimal, summary.clone())?;
    ensure(p1 < NUDGE_ALPHA && p2 < NUDGE_ALPHA, summary.clone())?;
    ensure(elapsed < NUDGE_MAX_TIME, summary.clone())?;
    Ok(summary)
}

fn statistics_oracles() -> Check {
    suite("ks brute force", analysis::ks_statistic_matches_brute_force)?;
    let d = basketlab::analysis::ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).map_err(|e| e.to_string())?.d;
    ensure(d == 0.5, format!("D = {d}"))?;

    // Sorted: 0.005 (1), 0.01 (2), 0.03 (3), 0.04 (4) with m = 4 gives
    // 0.02, 0.02, 0.04, 0.04 before the step-up minimum, which changes nothing.
    let ps = [0.01, 0.04, 0.03, 0.005];
    let adjusted = bh_adjust(&ps).map_err(|e| e.to_string())?;
    let expected = [0.02, 0.04, 0.04, 0.02];
    ensure(adjusted.iter().zip(expected).all(|(a, e)| (a - e).abs() < 1e-15), format!("BH {adjusted:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let m = rng.gen_range(1..30);
        let ps: Vec<f64> = (0..m).map(|_| rng.gen::<f64>().powi(3)).collect();
        let adj = bh_adjust(&ps).unwrap();
        ensure(bh_adjust(&ps).unwrap() == adj, "BH is not repeatable")?;
        let mut order: Vec<usize> = (0..m).collect();
        order.reverse();
        order.rotate_left(rng.gen_range(0..m));
        let permuted: Vec<f64> = order.iter().map(|&i| ps[i]).collect();
        let adj_permuted = bh_adjust(&permuted).unwrap();
        ensure(order.iter().zip(&adj_permuted).all(|(&i, &a)| a == adj[i]), "BH depends on input order")?;
        // Thresholding the adjusted values reproduces the step-up rule.
        let alpha = 0.1;
        let mut sorted = ps.clone();
        sorted.sort_by(f64::total_cmp);
        let k = (1..=m).rev().find(|&k| sorted[k - 1] <= alpha * k as f64 / m as f64).unwrap_or(0);
        let cutoff = if k == 0 { -1.0 } else { sorted[k - 1] };
        for (p, a) in ps.iter().zip(&adj) {
            ensure((*a <= alpha) == (*p <= cutoff), format!("BH rejection mismatch at p {p}"))?;
        }
    }
    suite("logistic", analysis::four_point_fit_matches_hand_iteration)?;
    Ok("KS D matches brute force (1000 pairs), D = 0.5; BH hand example, order invariance; IRLS to 1e-6".into())
}

fn protocol_end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let llm = LlmAgent::new(
        Arc::new(harness_e2e::take_default_model(Experiment::Default)),
        LlmConfig::new("mock", Condition::Base),
    );
    run_experiment(&RunSpec::new(Experiment::Default, 32, 9, tmp.path()), Box::new(llm), None).map_err(|e| e.to_string())?;
    let records = read_records(tmp.path()).map_err(|e| e.to_string())?;
    let table = nudge_sensitivity(&records, Experiment::Default, &AnalysisOptions { resamples: 200, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let p = table.rows.iter().find(|r| r.metric == "p_choose_default_nudge").ok_or("no default row")?.estimate;
    let offered = records.iter().filter(|r| r.nudge.variant == NudgeVariant::Default);
    ensure(p == 1.0 && offered.clone().all(|r| r.default_decision() == Some(true)), format!("P(accept) {p}"))?;
    ensure(records.iter().all(|r| r.paid_reveals() == 0), "take-default revealed")?;

    let mut agent = PolicyAgent::new(FullRevealPolicy);
    for seed in 0..50 {
        let spec = TrialSpec {
            experiment: Experiment::Default,
            trial_index: 3,
            seed,
            config: GameConfig::new(2, 5, 2).unwrap(),
            variant: NudgeVariant::None,
            reveal_mode: None,
            practice: false,
        };
        let (r, _) = play_trial(&spec, &mut agent, None, "e2e", "full").map_err(|e| e.to_string())?;
        let out = r.outcome.ok_or("incomplete")?;
        ensure(out.reveal_cost == 20, format!("cost {}", out.reveal_cost))?;
        ensure(reward(&r.game, r.final_selection().unwrap()).unwrap() == best_reward(&r.game), "not the argmax")?;
    }
    suite("ingest replay", ingest::ingested_trials_replay_onto_the_generated_games)?;
    suite("block structure", runner::every_block_is_balanced)?;
    Ok("take-default P(accept) 1.0, 0 reveals; full reveal cost 20 at argmax; replay exact; blocks 16/16, 10/10/10, 14/14, 10/10/10".into())
}

fn fewshot_sampler() -> Check {
    suite("quotas", fewshot::draws_the_quota_of_each_category)?;
    suite("exclusion", fewshot::current_participant_is_never_drawn)?;
    let examples = sample_fewshot(&fewshot::db(Experiment::Default, 4), Experiment::Default, "p0", 1).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &examples {
        *counts.entry(basketlab::harness::fewshot::category(r).ok_or("uncategorized")?).or_default() += 1;
    }
    let expected: BTreeMap<&str, usize> = [("control", 6), ("nudge-accepted", 3), ("nudge-declined", 3)].into();
    ensure(counts == expected, format!("{counts:?}"))?;
    ensure(examples.iter().all(|r| r.paid_reveals() >= 1 && r.participant_id != "p0"), "bad example")?;
    Ok("quotas 6/3/3, every example revealed, current participant excluded".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("golden rendering", golden_rendering),
        ("reward arithmetic", arithmetic),
        ("random baseline", random_baseline),
        ("sampling invariants", sampling_invariants),
        ("voc oracle", voc_oracle),
        ("optimal nudging order", optimal_nudging_order),
        ("statistics oracles", statistics_oracles),
        ("protocol end to end", protocol_end_to_end),
        ("few-shot sampler", fewshot_sampler),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}

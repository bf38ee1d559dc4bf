use std::collections::BTreeSet;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use basketlab::analysis::metrics::AnalysisOptions;
use basketlab::analysis::net_earnings_summary;
use basketlab::experiment::Experiment;
use basketlab::game::{CellRef, Phase};
use basketlab::harness::protocol::Protocol;
use basketlab::record::AgentKind;
use basketlab::rr::{OptimalNudger, OptimizerConfig, SearchMode};
use basketlab::runner::store::RECORDS_FILE;
use basketlab::runner::{read_records, run_schedule};
use basketlab::service::http::ErrorBody;
use basketlab::service::session::JOURNAL_FILE;
use basketlab::service::{
    router, ActionRequest, ActionResponse, ClientAction, CreateSession, Created, ServiceConfig, SessionManager,
    SessionSummary, Stage, StateView,
};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

const OPTIMIZER: OptimizerConfig = OptimizerConfig { mc_games: 4, mode: SearchMode::Greedy };

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig { optimizer: OPTIMIZER, ..ServiceConfig::new(dir) }
}

fn app(dir: &Path) -> Router {
    router(SessionManager::open(config(dir)).unwrap(), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

fn parse<T: DeserializeOwned>(v: Value) -> T {
    serde_json::from_value(v).unwrap()
}

fn error_code(v: Value) -> String {
    parse::<ErrorBody>(v).error.code
}

async fn create(app: &Router, experiment: &str, seed: u64, n_trials: usize) -> Created {
    let body = json!({"experiment": experiment, "participant_id": format!("p-{experiment}-{seed}"), "seed": seed, "n_trials": n_trials});
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    parse(v)
}

async fn act(app: &Router, id: &str, counter: u64, action: ClientAction) -> (StatusCode, Value) {
    let body = serde_json::to_value(ActionRequest { counter, action }).unwrap();
    call(app, "POST", &format!("/sessions/{id}/actions"), Some(body)).await
}

async fn state(app: &Router, id: &str) -> StateView {
    let (status, v) = call(app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK);
    parse(v)
}

fn answers(experiment: Experiment) -> Vec<String> {
    Protocol::builtin().experiment(experiment).quiz.iter().map(|q| q.answer.clone()).collect()
}

async fn pass_quiz(app: &Router, created: &Created) -> StateView {
    let (status, v) =
        act(app, &created.session_id, 1, ClientAction::QuizAnswers { answers: answers(created.experiment) }).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    parse::<ActionResponse>(v).state
}

/// A simple participant: alternates accepting and declining defaults,
/// otherwise reveals one hidden cell and takes the first basket.
fn next_action(view: &StateView) -> ClientAction {
    let trial = view.trial.as_ref().unwrap();
    let obs = &trial.observation;
    match trial.phase {
        Phase::DefaultOffer => ClientAction::DefaultDecision { accept: trial.trial_index % 2 == 0 },
        _ if obs.cells.iter().flatten().all(Option::is_none) => match obs.hidden_cells().next() {
            Some(c) => ClientAction::Reveal { prize: c.prize, basket: c.basket },
            None => ClientAction::Select { basket: 0 },
        },
        _ => ClientAction::Select { basket: 0 },
    }
}

#[tokio::test]
async fn sessions_start_with_instructions_and_a_quiz() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    assert_eq!(call(&app, "GET", "/health", None).await.0, StatusCode::OK);
    for (experiment, questions) in [("default", 5), ("suggestion", 3), ("highlight", 3), ("optimal", 3)] {
        let (status, v) = call(&app, "POST", "/sessions", Some(json!({"experiment": experiment}))).await;
        assert_eq!(status, StatusCode::CREATED);
        assert!(!v.to_string().contains("\"answer\""), "answer key leaked");
        let created: Created = parse(v);
        assert_eq!(created.quiz.questions.len(), questions);
        assert!(created.quiz.questions.iter().all(|q| !q.options.is_empty()));
        assert!(!created.instructions.is_empty());
        assert_eq!(created.state.stage, Stage::Quiz);
        assert!(created.state.trial.is_none());
        assert_eq!(created.state.counter, 0);
        assert!(created.participant_id.starts_with("human-"));
        assert_eq!(created.test_trials, created.experiment.block_size());
        assert_eq!(created.state.total_trials, created.practice_trials + created.test_trials);
    }
}

#[tokio::test]
async fn bad_requests_get_client_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"experiment": "nope"}))).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::BAD_REQUEST, "unknown_experiment"));
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"experiment": "default", "n_trials": 0}))).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::BAD_REQUEST, "invalid_request"));
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"experiment": "default", "participant_id": " "}))).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::BAD_REQUEST, "invalid_request"));
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"experimnt": 3}))).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::BAD_REQUEST, "invalid_request"));

    for uri in ["/sessions/missing/state", "/sessions/missing/result"] {
        let (status, v) = call(&app, "GET", uri, None).await;
        assert_eq!((status, error_code(v).as_str()), (StatusCode::NOT_FOUND, "unknown_session"));
    }
    let (status, _) = act(&app, "missing", 1, ClientAction::Select { basket: 0 }).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let created = create(&app, "default", 1, 32).await;
    let id = &created.session_id;
    let (status, v) = act(&app, id, 1, ClientAction::Select { basket: 0 }).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::CONFLICT, "quiz_required"));
    let (status, v) = act(&app, id, 5, ClientAction::QuizAnswers { answers: answers(Experiment::Default) }).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::CONFLICT, "stale_counter"));
    let (status, v) = act(&app, id, 1, ClientAction::QuizAnswers { answers: vec!["x".into()] }).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::BAD_REQUEST, "invalid_request"));
    assert_eq!(state(&app, id).await.counter, 0);

    let view = pass_quiz(&app, &created).await;
    assert_eq!(view.counter, 1);
    // The same counter again is a replay and is refused.
    let (status, _) = act(&app, id, 1, ClientAction::Select { basket: 0 }).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, v) = act(&app, id, 2, ClientAction::QuizAnswers { answers: answers(Experiment::Default) }).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::CONFLICT, "quiz_already_passed"));

    let (status, v) = act(&app, id, 2, ClientAction::Reveal { prize: 0, basket: 0 }).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let before = state(&app, id).await;
    let cost = before.trial.as_ref().unwrap().observation.accumulated_cost;
    assert_eq!(cost, 2);
    for illegal in [
        ClientAction::Reveal { prize: 0, basket: 0 },
        ClientAction::Reveal { prize: 9, basket: 0 },
        ClientAction::Select { basket: 40 },
        ClientAction::DefaultDecision { accept: true },
    ] {
        let (status, v) = act(&app, id, 3, illegal).await;
        assert_eq!((status, error_code(v).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "illegal_action"));
    }
    let after = state(&app, id).await;
    assert_eq!(after.counter, before.counter);
    assert_eq!(after.trial.unwrap().observation, before.trial.unwrap().observation);
}

#[tokio::test]
async fn a_failed_quiz_can_be_retried() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let created = create(&app, "highlight", 2, 28).await;
    let mut wrong = answers(Experiment::Highlight);
    wrong[1] = "definitely not an option".into();
    let (status, v) = act(&app, &created.session_id, 1, ClientAction::QuizAnswers { answers: wrong }).await;
    assert_eq!(status, StatusCode::OK);
    let response: ActionResponse = parse(v);
    let feedback = response.quiz.unwrap();
    assert!(!feedback.passed);
    assert_eq!(feedback.attempts, 1);
    assert!(feedback.message.is_some());
    assert_eq!(response.state.stage, Stage::Quiz);
    assert!(response.state.trial.is_none());

    let (status, v) = act(
        &app,
        &created.session_id,
        2,
        ClientAction::QuizAnswers { answers: answers(Experiment::Highlight) },
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let response: ActionResponse = parse(v);
    assert_eq!(response.quiz.unwrap().attempts, 2);
    assert_eq!(response.state.stage, Stage::Trial);
    let trial = response.state.trial.unwrap();
    assert!(trial.practice);
    assert_eq!(trial.banner.as_deref(), Some(Protocol::builtin().experiment(Experiment::Highlight).practice.as_str()));
    assert!(!trial.table.is_empty());
}

/// Plays a whole session; returns the final summary.
async fn play_through(app: &Router, created: &Created) -> SessionSummary {
    let id = &created.session_id;
    let mut view = pass_quiz(app, created).await;
    let mut saw_test_banner = false;
    let mut finished = None;
    while view.stage == Stage::Trial {
        let trial = view.trial.as_ref().unwrap();
        if !trial.practice && trial.banner.is_some() {
            saw_test_banner = true;
        }
        if trial.phase == Phase::DefaultOffer {
            assert!(trial.default_offer_text.is_some());
        }
        let (status, v) = act(app, id, view.counter + 1, next_action(&view)).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let response: ActionResponse = parse(v);
        if let Some(result) = &response.trial_result {
            assert_eq!(result.outcome.net, result.outcome.gross - i64::from(result.outcome.reveal_cost));
            assert!(!result.final_text.is_empty());
        }
        finished = response.summary.clone().or(finished);
        view = response.state;
    }
    assert!(saw_test_banner);
    assert_eq!(view.stage, Stage::Finished);
    let summary = finished.expect("summary with the last trial");
    let (status, v) = call(app, "GET", &format!("/sessions/{id}/result"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse::<SessionSummary>(v), summary);
    let (status, v) = act(app, id, view.counter + 1, ClientAction::Select { basket: 0 }).await;
    assert_eq!((status, error_code(v).as_str()), (StatusCode::CONFLICT, "session_finished"));
    summary
}

#[tokio::test]
async fn full_sessions_write_valid_records() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let mut total = 0;
    for (experiment, seed) in [("default", 3), ("suggestion", 4)] {
        let created = create(&app, experiment, seed, created_trials(experiment)).await;
        let summary = play_through(&app, &created).await;
        assert!(summary.finished);
        assert_eq!(summary.trials.len(), created.practice_trials + created.test_trials);
        assert_eq!(summary.test_net, summary.trials.iter().filter(|t| !t.practice).map(|t| t.outcome.net).sum::<i64>());

        let records: Vec<_> = read_records(tmp.path())
            .unwrap()
            .into_iter()
            .filter(|r| r.participant_id == created.participant_id)
            .collect();
        assert_eq!(records.len(), summary.trials.len());
        let schedule = run_schedule(created.experiment, created.test_trials, seed);
        for (r, spec) in records.iter().zip(&schedule) {
            r.validate().unwrap();
            assert_eq!(r.agent.kind, AgentKind::Human);
            assert_eq!(&r.spec, spec);
            let m = spec.materialize(None).unwrap();
            assert!(r.game.same_contents(&m.game));
            let result = &summary.trials[r.spec.trial_index];
            assert_eq!(r.outcome, Some(result.outcome));
            assert_eq!(r.final_selection(), Some(result.selection));
        }
        if created.experiment == Experiment::Default {
            // Defaults were accepted on even trial indices.
            for r in records.iter().filter(|r| r.nudge.default_basket.is_some()) {
                let accepted = r.spec.trial_index % 2 == 0;
                assert_eq!(r.final_selection() == r.nudge.default_basket, accepted || r.nudge.default_basket == Some(0));
            }
        }
        let table = net_earnings_summary(&records, &AnalysisOptions { resamples: 100, ..AnalysisOptions::default() }).unwrap();
        let row = table.rows.iter().find(|row| row.metric == format!("mean_net_{experiment}")).unwrap();
        assert_eq!(row.n, created.test_trials);
        assert!((row.estimate * row.n as f64 - summary.test_net as f64).abs() < 1e-6);
        total += records.len();
    }
    assert_eq!(read_records(tmp.path()).unwrap().len(), total);
}

fn created_trials(experiment: &str) -> usize {
    experiment.parse::<Experiment>().unwrap().block_size()
}

/// Cells the player may legitimately see: their own reveals plus any the
/// nudge shows.
fn allowed_cells(experiment: Experiment, seed: u64, n: usize, trial_index: usize, reveals: &BTreeSet<CellRef>) -> BTreeSet<CellRef> {
    let spec = &run_schedule(experiment, n, seed)[trial_index];
    let m = spec.materialize(Some(&OptimalNudger { config: OPTIMIZER })).unwrap();
    let mut allowed = reveals.clone();
    allowed.extend(m.nudge.initial_cells.iter().flatten().map(|c| c.cell));
    allowed.extend(m.nudge.suggestion_cell.map(|c| c.cell));
    allowed
}

#[tokio::test]
async fn random_clients_never_see_hidden_values() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (experiment, seed) in [(Experiment::Optimal, 11), (Experiment::Suggestion, 12), (Experiment::Default, 13)] {
        let n = experiment.block_size();
        let created = create(&app, experiment.name(), seed, n).await;
        let id = &created.session_id;
        let mut view = pass_quiz(&app, &created).await;
        let mut reveals: BTreeSet<CellRef> = BTreeSet::new();
        let mut trial_index = 0;
        for _ in 0..1000 {
            if view.stage == Stage::Finished {
                break;
            }
            let action = match rng.gen_range(0..10) {
                0..=6 => ClientAction::Reveal { prize: rng.gen_range(0..6), basket: rng.gen_range(0..7) },
                7 | 8 => ClientAction::Select { basket: rng.gen_range(0..7) },
                _ => ClientAction::DefaultDecision { accept: rng.gen_bool(0.5) },
            };
            let counter = if rng.gen_bool(0.05) { view.counter } else { view.counter + 1 };
            let (status, v) = act(&app, id, counter, action.clone()).await;
            let text = v.to_string();
            assert!(!text.contains("\"matrix\"") && !text.contains("\"game\""), "{text}");
            match status {
                StatusCode::OK => {
                    let response: ActionResponse = parse(v);
                    assert_eq!(response.state.counter, view.counter + 1);
                    if let ClientAction::Reveal { prize, basket } = action {
                        reveals.insert(CellRef::new(prize, basket));
                    }
                    view = response.state;
                }
                StatusCode::CONFLICT | StatusCode::UNPROCESSABLE_ENTITY => {
                    let again = state(&app, id).await;
                    assert_eq!(again.counter, view.counter);
                    assert_eq!(
                        again.trial.as_ref().map(|t| &t.observation),
                        view.trial.as_ref().map(|t| &t.observation)
                    );
                }
                other => panic!("unexpected status {other}: {text}"),
            }
            let Some(trial) = &view.trial else { continue };
            if trial.trial_index != trial_index {
                trial_index = trial.trial_index;
                reveals.clear();
            }
            let allowed = allowed_cells(experiment, seed, n, trial_index, &reveals);
            for (p, row) in trial.observation.cells.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    let cell = CellRef::new(p, b);
                    if v.is_some() {
                        assert!(allowed.contains(&cell), "{experiment} trial {trial_index}: {cell:?} visible");
                    }
                    if reveals.contains(&cell) {
                        assert!(v.is_some());
                    }
                }
            }
        }
    }
}

#[tokio::test]
async fn restarted_servers_resume_from_the_journal() {
    let tmp = tempfile::tempdir().unwrap();
    let first = app(tmp.path());
    let created = create(&first, "default", 5, 32).await;
    let id = created.session_id.clone();
    let mut view = pass_quiz(&first, &created).await;
    for _ in 0..25 {
        let (status, v) = act(&first, &id, view.counter + 1, next_action(&view)).await;
        assert_eq!(status, StatusCode::OK);
        view = parse::<ActionResponse>(v).state;
    }
    let records_before = read_records(tmp.path()).unwrap();
    assert!(!records_before.is_empty());
    drop(first);

    // A torn journal line and a lost record line, as after a crash.
    let journal = tmp.path().join(JOURNAL_FILE);
    let mut text = std::fs::read_to_string(&journal).unwrap();
    text.push_str("{\"entry\":\"action\",\"sess");
    std::fs::write(&journal, text).unwrap();
    let records_path = tmp.path().join(RECORDS_FILE);
    let records_text = std::fs::read_to_string(&records_path).unwrap();
    let mut lines: Vec<&str> = records_text.lines().collect();
    lines.pop();
    std::fs::write(&records_path, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();

    let second = app(tmp.path());
    let resumed = state(&second, &id).await;
    assert_eq!(resumed.counter, view.counter);
    assert_eq!(resumed.completed_trials, view.completed_trials);
    assert_eq!(resumed.test_net, view.test_net);
    assert_eq!(resumed.trial.as_ref().unwrap().observation, view.trial.as_ref().unwrap().observation);
    assert_eq!(read_records(tmp.path()).unwrap(), records_before);

    let mut view = resumed;
    while view.stage == Stage::Trial {
        let (status, v) = act(&second, &id, view.counter + 1, next_action(&view)).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        view = parse::<ActionResponse>(v).state;
    }
    let records = read_records(tmp.path()).unwrap();
    assert_eq!(records.len(), 34);
    let indices: BTreeSet<usize> = records.iter().map(|r| r.spec.trial_index).collect();
    assert_eq!(indices.len(), 34);
    drop(second);

    // Replaying a finished session changes nothing.
    let third = app(tmp.path());
    assert_eq!(state(&third, &id).await.stage, Stage::Finished);
    assert_eq!(read_records(tmp.path()).unwrap(), records);
}

#[test]
fn manager_api_matches_the_routes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manager = SessionManager::open(config(tmp.path())).unwrap();
    let created = manager
        .create(CreateSession { experiment: "optimal".into(), seed: Some(1), n_trials: Some(30), ..Default::default() })
        .unwrap();
    assert_eq!(manager.session_ids(), vec![created.session_id.clone()]);
    let err = manager.act(&created.session_id, ActionRequest { counter: 2, action: ClientAction::Select { basket: 0 } }).unwrap_err();
    assert_eq!((err.status(), err.code()), (409, "stale_counter"));
    let (created_ms, updated_ms) = manager.timestamps(&created.session_id).unwrap();
    assert!(created_ms <= updated_ms);
    assert_eq!(manager.out_dir(), tmp.path());
}

//! Import of externally collected trials (human participants) into records.
//!
//! A TOML mapping names the source column for each field and may supply
//! fixed defaults:
//!
//! ```toml
//! format = "csv"            # or "jsonl"; otherwise taken from the extension
//! [columns]
//! participant = "worker_id"
//! actions = "clicks"
//! [defaults]
//! experiment = "default"
//! ```
//!
//! Fields: `participant`, `experiment`, `trial_index` (required),
//! `weights`, `matrix`, `actions` (required), `practice`, `cost`,
//! `variant` (control, default, early, late, highlight, random, extreme,
//! optimal), `default_basket`, `suggested_basket`, `suggestion_prize`,
//! `highlighted_prize`, `initial_cells`, and the claimed `gross`,
//! `reveal_cost` and `net`.
//!
//! Lists may be JSON (`[23, 7]`, `[[0, 4], [1, 2]]`) or plain text
//! (`23 7`, `0 4 | 1 2`). Actions are JSON action objects or tokens:
//! `A2` reveals prize A in basket 2, `S3` selects basket 3, `accept` and
//! `decline` answer a default offer. Baskets are 1-based everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::store::{write_records, RECORDS_FILE};
use super::RunnerError;
use crate::experiment::{Condition, Experiment};
use crate::game::{prize_index, Action, CellRef, CostSchedule, Game, GameConfig, TrialState};
use crate::nudge::{self, NudgeSpec, NudgeVariant, RevealMode, RevealedCell, HIGHLIGHT_SALE_COST};
use crate::record::{AgentKind, AgentSummary, Materialized, Reference, TrialRecord, TrialSpec};
use crate::rng::splitmix64;

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Mapping {
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub defaults: BTreeMap<String, toml::Value>,
}

impl Mapping {
    pub fn load(path: &Path) -> Result<Mapping, RunnerError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| RunnerError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| RunnerError::Mapping(e.to_string()))
    }

    fn field(&self, row: &BTreeMap<String, Value>, name: &str) -> Option<Value> {
        let column = self.columns.get(name).map(String::as_str).unwrap_or(name);
        match row.get(column) {
            Some(Value::Null) | None => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(v) => Some(v.clone()),
        }
        .or_else(|| self.defaults.get(name).and_then(|v| serde_json::to_value(v).ok()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        other => other.to_string(),
    }
}

fn parse_json_or<T: serde::de::DeserializeOwned>(v: &Value, plain: impl FnOnce(&str) -> Option<T>) -> Option<T> {
    match v {
        Value::String(s) if s.trim_start().starts_with('[') => serde_json::from_str(s).ok(),
        Value::String(s) => plain(s),
        Value::Number(_) => plain(&v.to_string()),
        other => serde_json::from_value(other.clone()).ok(),
    }
}

fn numbers<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    s.split([' ', ',', ';', '\t']).filter(|t| !t.is_empty()).map(|t| t.parse().ok()).collect()
}

fn parse_usize(v: &Value) -> Option<usize> {
    text(v).parse().ok()
}

fn parse_bool(v: &Value) -> Option<bool> {
    match text(v).to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_prize(v: &Value) -> Option<usize> {
    prize_index(&text(v))
}

fn parse_cell_token(token: &str) -> Option<CellRef> {
    let mut chars = token.chars();
    let prize = prize_index(&chars.next()?.to_string())?;
    let basket: usize = chars.as_str().parse().ok()?;
    Some(CellRef::new(prize, basket.checked_sub(1)?))
}

fn parse_action_token(token: &str) -> Option<Action> {
    let lower = token.to_ascii_lowercase();
    match lower.as_str() {
        "accept" => return Some(Action::DefaultDecision { accept: true }),
        "decline" => return Some(Action::DefaultDecision { accept: false }),
        _ => {}
    }
    if let Some(n) = lower.strip_prefix("select").or_else(|| lower.strip_prefix('s')) {
        let n: usize = n.trim_start_matches([':', '=']).parse().ok()?;
        return Some(Action::Select { basket: n.checked_sub(1)? });
    }
    parse_cell_token(token).map(|cell| Action::Reveal { cell })
}

fn parse_actions(v: &Value) -> Result<Vec<Action>, String> {
    let from_json = |items: &Value| -> Result<Vec<Action>, String> {
        serde_json::from_value(items.clone()).map_err(|e| format!("actions: {e}"))
    };
    match v {
        Value::Array(_) => from_json(v),
        Value::String(s) if s.trim_start().starts_with('[') => {
            from_json(&serde_json::from_str(s).map_err(|e| format!("actions: {e}"))?)
        }
        other => text(other)
            .split([' ', ',', ';', '\t'])
            .filter(|t| !t.is_empty())
            .map(|t| parse_action_token(t).ok_or_else(|| format!("unreadable action {t:?}")))
            .collect(),
    }
}

fn parse_variant(s: &str) -> Result<(NudgeVariant, Option<RevealMode>), String> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "control" | "none" | "" => (NudgeVariant::None, None),
        "default" => (NudgeVariant::Default, None),
        "early" | "suggestion_early" => (NudgeVariant::SuggestionEarly, None),
        "late" | "suggestion_late" => (NudgeVariant::SuggestionLate, None),
        "highlight" => (NudgeVariant::Highlight, None),
        "random" => (NudgeVariant::InitialReveals, Some(RevealMode::Random)),
        "extreme" => (NudgeVariant::InitialReveals, Some(RevealMode::Extreme)),
        "optimal" => (NudgeVariant::InitialReveals, Some(RevealMode::Optimal)),
        other => return Err(format!("unknown variant {other:?}")),
    })
}

/// Seed for tie-breaks of reference quantities on an ingested game.
fn content_seed(game: &Game) -> u64 {
    game.id.bytes().fold(0u64, |h, b| splitmix64(h ^ b as u64))
}

/// Converts one source row into a validated record.
pub fn row_to_record(mapping: &Mapping, row: &BTreeMap<String, Value>, run_id: &str) -> Result<TrialRecord, String> {
    let get = |name: &str| mapping.field(row, name);
    let need = |name: &str| get(name).ok_or_else(|| format!("missing required field {name:?}"));

    let participant = text(&need("participant")?);
    let experiment: Experiment = text(&need("experiment")?).parse()?;
    let trial_index = parse_usize(&need("trial_index")?).ok_or("trial_index is not a number")?;
    let practice = get("practice").map(|v| parse_bool(&v).ok_or("practice is not a boolean")).transpose()?.unwrap_or(false);
    let weights: Vec<u32> = parse_json_or(&need("weights")?, numbers).ok_or("unreadable weights")?;
    let rows: Vec<Vec<u8>> = parse_json_or(&need("matrix")?, |s| s.split('|').map(numbers).collect())
        .ok_or("unreadable matrix")?;
    let cost = match get("cost") {
        Some(v) => text(&v).parse().map_err(|_| "cost is not a number")?,
        None => experiment.base_cost(),
    };
    let n_baskets = rows.first().map_or(0, Vec::len);
    let config = GameConfig::new(weights.len(), n_baskets, cost).map_err(|e| e.to_string())?;
    let game = Game::from_parts(config, weights, rows).map_err(|e| e.to_string())?;
    let seed = content_seed(&game);

    let (variant, reveal_mode) = parse_variant(&get("variant").map(|v| text(&v)).unwrap_or_default())?;
    let basket_field = |name: &str| -> Result<usize, String> {
        parse_usize(&need(name)?).and_then(|b| b.checked_sub(1)).ok_or_else(|| format!("{name} must be a basket number"))
    };
    let uniform = CostSchedule::uniform(game.n_prizes(), cost);
    let (nudge, cost_schedule) = match variant {
        NudgeVariant::None => (NudgeSpec::none(), uniform),
        NudgeVariant::Default => (NudgeSpec::default_option(basket_field("default_basket")?), uniform),
        NudgeVariant::SuggestionEarly | NudgeVariant::SuggestionLate => {
            let basket = basket_field("suggested_basket")?;
            let prize = parse_prize(&need("suggestion_prize")?).ok_or("suggestion_prize must be a prize letter")?;
            let cell = CellRef::new(prize, basket);
            game.check_cell(cell).map_err(|e| e.to_string())?;
            let spec = NudgeSpec {
                variant,
                suggested_basket: Some(basket),
                suggestion_cell: Some(RevealedCell { cell, value: game.value(cell) }),
                ..NudgeSpec::none()
            };
            (spec, uniform)
        }
        NudgeVariant::Highlight => {
            let prize = parse_prize(&need("highlighted_prize")?).ok_or("highlighted_prize must be a prize letter")?;
            if prize >= game.n_prizes() {
                return Err("highlighted_prize is out of range".into());
            }
            let mut schedule = uniform;
            schedule.0[prize] = HIGHLIGHT_SALE_COST;
            (NudgeSpec { variant, highlighted_prize: Some(prize), ..NudgeSpec::none() }, schedule)
        }
        NudgeVariant::InitialReveals => {
            let cells: Vec<CellRef> = text(&need("initial_cells")?)
                .split([' ', ',', ';'])
                .filter(|t| !t.is_empty())
                .map(|t| parse_cell_token(t).ok_or_else(|| format!("unreadable cell {t:?}")))
                .collect::<Result<_, _>>()?;
            for &c in &cells {
                game.check_cell(c).map_err(|e| e.to_string())?;
            }
            let cells = cells.into_iter().map(|cell| RevealedCell { cell, value: game.value(cell) }).collect();
            (NudgeSpec { variant, initial_cells: Some(cells), reveal_mode, ..NudgeSpec::none() }, uniform)
        }
    };
    nudge.validate(&game)?;

    let highlighted_prize = match (get("highlighted_prize").and_then(|v| parse_prize(&v)), experiment) {
        (Some(p), _) => Some(p),
        (None, Experiment::Highlight) => nudge::highlight_prize(&game, seed).ok(),
        _ => None,
    };
    let materialized = Materialized {
        reference: Reference { default_basket: nudge::default_basket(&game, seed), highlighted_prize },
        game,
        nudge,
        cost_schedule,
        cost_banner: experiment.cost_banner(),
    };
    let spec = TrialSpec { experiment, trial_index, seed, config, variant, reveal_mode, practice };

    let mut state: TrialState = materialized.initial_state().map_err(|e| e.to_string())?;
    for (i, action) in parse_actions(&need("actions")?)?.into_iter().enumerate() {
        state.apply(action).map_err(|e| format!("action {}: {e}", i + 1))?;
    }
    let outcome = state.finalize().map_err(|_| "trial never reaches a final selection".to_string())?;

    let claimed = |name: &str| -> Result<Option<i64>, String> {
        get(name).map(|v| text(&v).parse::<i64>().map_err(|_| format!("{name} is not a number"))).transpose()
    };
    let (gross, reveal_cost, net) = (claimed("gross")?, claimed("reveal_cost")?, claimed("net")?);
    if let (Some(g), Some(c), Some(n)) = (gross, reveal_cost, net) {
        if g - c != n {
            return Err(format!("claimed net {n} is not gross {g} minus cost {c}"));
        }
    }
    for (name, claim, actual) in
        [("gross", gross, outcome.gross), ("reveal_cost", reveal_cost, outcome.reveal_cost), ("net", net, outcome.net)]
    {
        if let Some(c) = claim.filter(|&c| c != actual) {
            return Err(format!("claimed {name} {c} differs from recomputed {actual}"));
        }
    }

    let agent = AgentSummary { kind: AgentKind::Human, model_name: None, condition: Condition::Base, temperature: None };
    let record = TrialRecord::from_state(spec, &materialized, &state, agent, run_id, &participant);
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

fn read_rows(path: &Path, format: &str) -> Result<Vec<BTreeMap<String, Value>>, RunnerError> {
    let io = |source| RunnerError::Io { path: path.to_path_buf(), source };
    match format {
        "csv" => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| RunnerError::Mapping(e.to_string()))?;
            let headers = reader.headers().map_err(|e| RunnerError::Mapping(e.to_string()))?.clone();
            reader
                .records()
                .enumerate()
                .map(|(i, r)| {
                    let r = r.map_err(|e| RunnerError::Parse {
                        path: path.to_path_buf(),
                        line: i + 2,
                        message: e.to_string(),
                    })?;
                    Ok(headers.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), Value::String(v.to_string()))).collect())
                })
                .collect()
        }
        "jsonl" | "json" => {
            let text = std::fs::read_to_string(path).map_err(io)?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| RunnerError::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect()
        }
        other => Err(RunnerError::Mapping(format!("unknown format {other:?} (expected csv or jsonl)"))),
    }
}

/// Converts every row of `input`; accepted records are returned, rejected
/// rows reported with their reason.
pub fn ingest_rows(input: &Path, mapping: &Mapping) -> Result<(Vec<TrialRecord>, IngestReport), RunnerError> {
    let format = mapping
        .format
        .clone()
        .or_else(|| input.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()))
        .unwrap_or_else(|| "csv".into());
    let run_id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ingest".into());
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (i, row) in read_rows(input, &format)?.iter().enumerate() {
        match row_to_record(mapping, row, &run_id) {
            Ok(r) => records.push(r),
            Err(reason) => report.rejected.push(Rejection { row: i + 1, reason }),
        }
    }
    report.accepted = records.len();
    Ok((records, report))
}

/// Ingests `input` into `out_dir/records.jsonl` and writes
/// `out_dir/ingest_report.json`.
pub fn ingest_human_data(input: &Path, mapping: &Mapping, out_dir: &Path) -> Result<IngestReport, RunnerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunnerError::Io { path: out_dir.to_path_buf(), source })?;
    let (records, report) = ingest_rows(input, mapping)?;
    let path = out_dir.join(RECORDS_FILE);
    if path.exists() {
        std::fs::remove_file(&path).map_err(|source| RunnerError::Io { path: path.clone(), source })?;
    }
    write_records(&path, &records)?;
    let report_path = out_dir.join("ingest_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
        .map_err(|source| RunnerError::Io { path: report_path, source })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_tokens() {
        assert_eq!(parse_action_token("A2"), Some(Action::reveal(0, 1)));
        assert_eq!(parse_action_token("s3"), Some(Action::Select { basket: 2 }));
        assert_eq!(parse_action_token("select:1"), Some(Action::Select { basket: 0 }));
        assert_eq!(parse_action_token("Accept"), Some(Action::DefaultDecision { accept: true }));
        assert_eq!(parse_action_token("11"), None);
        assert_eq!(parse_action_token("A0"), None);
    }
}

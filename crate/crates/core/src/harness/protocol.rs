//! Instruction, quiz and in-game texts, loaded from `assets/protocol.toml`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::experiment::Experiment;
use crate::game::prize_letter;
use crate::nudge::RevealedCell;

const BUILTIN: &str = include_str!("../../assets/protocol.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct QuizItem {
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentTexts {
    pub instructions: String,
    pub quiz_intro: String,
    pub quiz_failure: String,
    pub practice: String,
    pub test: String,
    pub quiz: Vec<QuizItem>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Protocol {
    pub cot_directive: String,
    pub default_offer: String,
    pub suggestion: String,
    pub quiz_format: String,
    pub fewshot_intro: String,
    pub tool_required: String,
    experiments: BTreeMap<String, ExperimentTexts>,
}

impl Protocol {
    /// The protocol shipped with the crate.
    pub fn builtin() -> &'static Protocol {
        static CELL: OnceLock<Protocol> = OnceLock::new();
        CELL.get_or_init(|| Protocol::from_toml(BUILTIN).expect("bundled protocol is valid"))
    }

    pub fn from_toml(text: &str) -> Result<Protocol, String> {
        let protocol: Protocol = toml::from_str(text).map_err(|e| e.to_string())?;
        protocol.check()?;
        Ok(protocol)
    }

    pub fn load(path: &Path) -> Result<Protocol, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Protocol::from_toml(&text)
    }

    fn check(&self) -> Result<(), String> {
        for e in Experiment::ALL {
            let texts = self.experiments.get(e.name()).ok_or_else(|| format!("no texts for experiment {e}"))?;
            for item in &texts.quiz {
                if !item.options.contains(&item.answer) {
                    return Err(format!("{e}: answer {:?} is not an option of {:?}", item.answer, item.question));
                }
            }
        }
        Ok(())
    }

    pub fn experiment(&self, e: Experiment) -> &ExperimentTexts {
        &self.experiments[e.name()]
    }

    /// Offer line for a default trial (`basket` zero-based).
    pub fn default_offer_text(&self, basket: usize) -> String {
        self.default_offer.replace("{basket}", &(basket + 1).to_string())
    }

    pub fn suggestion_text(&self, suggestion: RevealedCell) -> String {
        self.suggestion
            .replace("{basket}", &(suggestion.cell.basket + 1).to_string())
            .replace("{value}", &suggestion.value.to_string())
            .replace("{prize}", &prize_letter(suggestion.cell.prize).to_string())
    }

    /// The quiz as shown: intro line, then numbered questions with their
    /// options in brackets.
    pub fn quiz_text(&self, e: Experiment) -> String {
        let texts = self.experiment(e);
        let mut out = texts.quiz_intro.clone();
        for (i, item) in texts.quiz.iter().enumerate() {
            out.push_str(&format!("\n\n{}. {}\n[{}]", i + 1, item.question, item.options.join("/")));
        }
        out
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Maps a free-text reply to one option per question. A line `N. text`
/// answers question N; the text must equal an option or contain exactly one
/// longest option.
pub fn parse_quiz_answers(reply: &str, items: &[QuizItem]) -> Vec<Option<String>> {
    let mut answers = vec![None; items.len()];
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['*', '-', '#', ' ']);
        let Some((num, text)) = line.split_once(['.', ')', ':']) else { continue };
        let Ok(n) = num.trim().parse::<usize>() else { continue };
        let Some(item) = n.checked_sub(1).and_then(|i| items.get(i)) else { continue };
        if answers[n - 1].is_some() {
            continue;
        }
        let reply = normalize(text);
        let exact = item.options.iter().find(|o| normalize(o) == reply);
        let chosen = exact.cloned().or_else(|| {
            let mut contained: Vec<&String> = item
                .options
                .iter()
                .filter(|o| {
                    let o = normalize(o);
                    reply.split_whitespace().collect::<Vec<_>>().windows(o.split_whitespace().count()).any(
                        |w| w.join(" ") == o,
                    )
                })
                .collect();
            contained.sort_by_key(|o| std::cmp::Reverse(o.len()));
            match contained.as_slice() {
                [only] => Some((*only).clone()),
                [a, b, ..] if a.len() > b.len() && normalize(a).contains(&normalize(b)) => Some((*a).clone()),
                _ => None,
            }
        });
        answers[n - 1] = chosen;
    }
    answers
}

/// Per-question correctness against the key.
pub fn grade(items: &[QuizItem], answers: &[Option<String>]) -> Vec<bool> {
    items.iter().zip(answers).map(|(item, a)| a.as_deref() == Some(item.answer.as_str())).collect()
}

//! The four experiments and the prompting conditions agents play under.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Default,
    Suggestion,
    Highlight,
    Optimal,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::Default, Experiment::Suggestion, Experiment::Highlight, Experiment::Optimal];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Default => "default",
            Experiment::Suggestion => "suggestion",
            Experiment::Highlight => "highlight",
            Experiment::Optimal => "optimal",
        }
    }

    /// Test games per schedule block.
    pub fn block_size(self) -> usize {
        match self {
            Experiment::Default => 32,
            Experiment::Suggestion => 30,
            Experiment::Highlight => 28,
            Experiment::Optimal => 30,
        }
    }

    /// Test trials per agent and condition in the reference study design.
    pub fn reference_trials(self) -> usize {
        match self {
            Experiment::Default => 340,
            Experiment::Suggestion => 320,
            Experiment::Highlight | Experiment::Optimal => 300,
        }
    }

    /// Points it costs to reveal a cell when nothing is on sale.
    pub fn base_cost(self) -> u32 {
        match self {
            Experiment::Highlight => crate::nudge::HIGHLIGHT_BASE_COST,
            _ => 2,
        }
    }

    /// Whether tables carry the per-prize cost banner.
    pub fn cost_banner(self) -> bool {
        self == Experiment::Highlight
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(Experiment::Default),
            "suggestion" | "suggestions" => Ok(Experiment::Suggestion),
            "highlight" | "highlighting" => Ok(Experiment::Highlight),
            "optimal" | "optimal_nudging" | "optimal-nudging" => Ok(Experiment::Optimal),
            _ => Err(format!("unknown experiment {s:?} (expected default, suggestion, highlight or optimal)")),
        }
    }
}

/// How the language model is prompted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[default]
    Base,
    Cot,
    #[serde(rename = "fewshot", alias = "few_shot")]
    FewShot,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Base => "base",
            Condition::Cot => "cot",
            Condition::FewShot => "fewshot",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "base" => Ok(Condition::Base),
            "cot" => Ok(Condition::Cot),
            "fewshot" => Ok(Condition::FewShot),
            _ => Err(format!("unknown condition {s:?} (expected base, cot or fewshot)")),
        }
    }
}

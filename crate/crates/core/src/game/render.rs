//! Canonical Markdown table shown to players and language models.
//!
//! ```text
//! |       Prizes | Basket 1 | Basket 2 |
//! |-------------:|:---------|:---------|
//! | A: 23 points | ?        | 4        |
//! | B: 7 points  | ?        | ?        |
//! Total accumulated cost: 2 points
//! ```
//!
//! The prize column is as wide as its widest entry (header right-aligned,
//! labels left-aligned). Basket columns are as wide as their widest entry;
//! two-basket tables get two extra characters of padding per basket column.
//! Highlighting trials print a cost line and a blank line above the table.

use std::fmt::Write as _;

use thiserror::Error;

use super::{prize_letter, reward, GameError, TrialState};

const PRIZES_HEADER: &str = "Prizes";
const FOOTER_PREFIX: &str = "Total accumulated cost: ";
const BANNER_PREFIX: &str = "Cost of revealing prize ";

#[derive(Debug, Error, PartialEq)]
#[error("table parse error on line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn perr(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line: line + 1, message: message.into() }
}

/// Everything the canonical text encodes, and nothing more.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableView {
    pub banner_costs: Option<Vec<u32>>,
    pub weights: Vec<u32>,
    /// One row per prize, one entry per visible basket.
    pub cells: Vec<Vec<Option<u8>>>,
    pub accumulated_cost: u32,
}

fn points(n: u32) -> &'static str {
    if n == 1 {
        "point"
    } else {
        "points"
    }
}

/// "x", "x, and y", "x, y, and z".
pub(crate) fn join_with_and(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

pub(crate) fn cost_banner(costs: &[u32]) -> String {
    let items: Vec<String> =
        costs.iter().enumerate().map(|(i, &c)| format!("{}={} {}", prize_letter(i), c, points(c))).collect();
    format!("{BANNER_PREFIX}{}", join_with_and(&items))
}

impl TableView {
    pub fn n_baskets(&self) -> usize {
        self.cells.first().map(Vec::len).unwrap_or(0)
    }

    fn label(&self, prize: usize) -> String {
        format!("{}: {} points", prize_letter(prize), self.weights[prize])
    }

    pub fn render(&self) -> String {
        let n_baskets = self.n_baskets();
        let labels: Vec<String> = (0..self.weights.len()).map(|p| self.label(p)).collect();
        let label_width = labels.iter().map(String::len).chain([PRIZES_HEADER.len()]).max().unwrap();
        let headers: Vec<String> = (1..=n_baskets).map(|b| format!("Basket {b}")).collect();
        let cell_text = |v: Option<u8>| v.map_or_else(|| "?".to_string(), |v| v.to_string());
        let padding = if n_baskets <= 2 { 2 } else { 0 };
        let widths: Vec<usize> = (0..n_baskets)
            .map(|b| {
                let content = self.cells.iter().map(|row| cell_text(row[b]).len()).max().unwrap_or(1);
                headers[b].len().max(content) + padding
            })
            .collect();

        let mut out = String::new();
        if let Some(costs) = &self.banner_costs {
            out.push_str(&cost_banner(costs));
            out.push_str("\n\n");
        }
        write!(out, "| {PRIZES_HEADER:>label_width$} |").unwrap();
        for (h, w) in headers.iter().zip(&widths) {
            write!(out, " {h:<w$} |").unwrap();
        }
        out.push('\n');
        write!(out, "|{}:|", "-".repeat(label_width + 1)).unwrap();
        for w in &widths {
            write!(out, ":{}|", "-".repeat(w + 1)).unwrap();
        }
        out.push('\n');
        for (label, row) in labels.iter().zip(&self.cells) {
            write!(out, "| {label:<label_width$} |").unwrap();
            for (v, w) in row.iter().zip(&widths) {
                write!(out, " {:<w$} |", cell_text(*v)).unwrap();
            }
            out.push('\n');
        }
        write!(out, "{FOOTER_PREFIX}{} points", self.accumulated_cost).unwrap();
        out
    }

    /// Parses the canonical text back. Accepts exactly what [`render`]
    /// produces, modulo column padding.
    ///
    /// [`render`]: TableView::render
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let lines: Vec<&str> = text.lines().collect();
        let mut i = 0;
        let banner_costs = match lines.first() {
            Some(l) if l.starts_with(BANNER_PREFIX) => {
                let costs = parse_banner(l).ok_or_else(|| perr(0, "malformed cost banner"))?;
                if lines.get(1).map(|l| !l.is_empty()).unwrap_or(true) {
                    return Err(perr(1, "expected a blank line after the cost banner"));
                }
                i = 2;
                Some(costs)
            }
            _ => None,
        };

        let header = split_row(lines.get(i).copied().ok_or_else(|| perr(i, "missing header"))?)
            .ok_or_else(|| perr(i, "header is not a table row"))?;
        if header.first().map(|h| h.trim()) != Some(PRIZES_HEADER) {
            return Err(perr(i, "first header must be Prizes"));
        }
        let n_baskets = header.len() - 1;
        for (b, h) in header[1..].iter().enumerate() {
            if h.trim() != format!("Basket {}", b + 1) {
                return Err(perr(i, format!("unexpected header {h:?}")));
            }
        }
        i += 1;
        let align = lines.get(i).ok_or_else(|| perr(i, "missing alignment row"))?;
        if !align.starts_with("|-") || !align.contains(":|") {
            return Err(perr(i, "malformed alignment row"));
        }
        i += 1;

        let mut weights = Vec::new();
        let mut cells = Vec::new();
        while let Some(line) = lines.get(i) {
            if let Some(rest) = line.strip_prefix(FOOTER_PREFIX) {
                let cost = rest
                    .strip_suffix(" points")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| perr(i, "malformed footer"))?;
                if i + 1 != lines.len() {
                    return Err(perr(i + 1, "trailing text after footer"));
                }
                return Ok(TableView { banner_costs, weights, cells, accumulated_cost: cost });
            }
            let row = split_row(line).ok_or_else(|| perr(i, "expected a prize row"))?;
            if row.len() != n_baskets + 1 {
                return Err(perr(i, "wrong number of columns"));
            }
            let prize = weights.len();
            let label = row[0].trim();
            let expected_prefix = format!("{}: ", prize_letter(prize));
            let weight = label
                .strip_prefix(&expected_prefix)
                .and_then(|r| r.strip_suffix(" points"))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| perr(i, format!("malformed prize label {label:?}")))?;
            weights.push(weight);
            let values = row[1..]
                .iter()
                .map(|c| match c.trim() {
                    "?" => Ok(None),
                    v => v.parse::<u8>().map(Some).map_err(|_| perr(i, format!("bad cell {v:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            cells.push(values);
            i += 1;
        }
        Err(perr(i, "missing footer"))
    }
}

fn split_row(line: &str) -> Option<Vec<&str>> {
    let inner = line.strip_prefix('|')?.strip_suffix('|')?;
    Some(inner.split('|').collect())
}

fn parse_banner(line: &str) -> Option<Vec<u32>> {
    let body = line.strip_prefix(BANNER_PREFIX)?;
    let mut costs = Vec::new();
    for (i, item) in body.split(", ").enumerate() {
        let item = item.strip_prefix("and ").unwrap_or(item);
        let (letter, rest) = item.split_once('=')?;
        if letter != prize_letter(i).to_string() {
            return None;
        }
        let n = rest.strip_suffix(" points").or_else(|| rest.strip_suffix(" point"))?;
        costs.push(n.parse().ok()?);
    }
    Some(costs)
}

impl TrialState {
    pub fn table_view(&self) -> TableView {
        TableView {
            banner_costs: self.cost_banner().then(|| self.cost_schedule().0.clone()),
            weights: self.game().weights.as_slice().to_vec(),
            cells: self.visible_cells(),
            accumulated_cost: self.accumulated_cost(),
        }
    }
}

pub fn render_table(state: &TrialState) -> String {
    state.table_view().render()
}

/// "You won 5 A prizes, and 4 B prizes, totaling 143 points."
pub fn render_outcome_line(state: &TrialState) -> Result<String, GameError> {
    let basket = state.selection().filter(|_| state.is_done()).ok_or(GameError::NotFinished)?;
    let game = state.game();
    let items: Vec<String> = game
        .matrix
        .column(basket)
        .iter()
        .enumerate()
        .map(|(p, n)| format!("{} {} prizes", n, prize_letter(p)))
        .collect();
    Ok(format!("You won {}, totaling {} points.", join_with_and(&items), reward(game, basket)?))
}

/// Table of a finished trial followed by the outcome line.
pub fn render_final(state: &TrialState) -> Result<String, GameError> {
    Ok(format!("{}\n{}", render_table(state), render_outcome_line(state)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banner_wording() {
        assert_eq!(cost_banner(&[3, 1, 3]), "Cost of revealing prize A=3 points, B=1 point, and C=3 points");
        assert_eq!(parse_banner(&cost_banner(&[3, 1, 3])), Some(vec![3, 1, 3]));
        assert_eq!(cost_banner(&[2, 2]), "Cost of revealing prize A=2 points, and B=2 points");
    }

    #[test]
    fn single_digit_labels_shrink_prize_column() {
        let view = TableView {
            banner_costs: None,
            weights: vec![6; 5],
            cells: vec![vec![None; 5]; 5],
            accumulated_cost: 0,
        };
        let text = view.render();
        assert!(text.starts_with("|      Prizes | Basket 1 |"), "{text}");
        assert!(text.contains("\n| A: 6 points | ?        |"));
        assert_eq!(TableView::parse(&text).unwrap(), view);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(TableView::parse("").is_err());
        assert!(TableView::parse("| Prizes | Basket 2 |\n|-:|:-|\nTotal accumulated cost: 0 points").is_err());
        let ok = "| Prizes | Basket 1 |\n|-------:|:---------|\n| A: 30 points | 10 |\nTotal accumulated cost: 0 points";
        assert!(TableView::parse(ok).is_ok());
        assert!(TableView::parse(&format!("{ok}\nextra")).is_err());
        assert!(TableView::parse(&ok.replace("10 |", "11x |")).is_err());
    }
}

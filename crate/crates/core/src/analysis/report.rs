//! Report files: one CSV per table plus `report.json` holding everything.
//! Output is a pure function of the records and options, so two runs over
//! the same inputs are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{
    analysed, by_group, idiosyncrasy, net_earnings_summary, nudge_sensitivity, reveal_count_distribution, saliency,
    AnalysisOptions, MetricTable, RevealHistogram, SaliencyMap, OPTIMAL_REFERENCE, RANDOM_BASELINE,
};
use super::stats::{bh_adjust, ks_two_sample};
use super::AnalysisError;
use crate::experiment::Experiment;
use crate::record::{TrialRecord, SCHEMA_VERSION};
use crate::runner::read_records;

pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Net,
    Sensitivity,
    Reveals,
    Ks,
    Saliency,
    Idiosyncrasy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Net,
        MetricKind::Sensitivity,
        MetricKind::Reveals,
        MetricKind::Ks,
        MetricKind::Saliency,
        MetricKind::Idiosyncrasy,
    ];
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "net" | "earnings" => MetricKind::Net,
            "sensitivity" | "nudge" => MetricKind::Sensitivity,
            "reveals" => MetricKind::Reveals,
            "ks" => MetricKind::Ks,
            "saliency" => MetricKind::Saliency,
            "idiosyncrasy" => MetricKind::Idiosyncrasy,
            _ => {
                return Err(format!(
                    "unknown metric {s:?} (expected all, net, sensitivity, reveals, ks, saliency or idiosyncrasy)"
                ))
            }
        })
    }
}

/// Parses `all` or a comma-separated list of metric names.
pub fn parse_metrics(s: &str) -> Result<BTreeSet<MetricKind>, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(MetricKind::ALL.into_iter().collect());
    }
    s.split(',').filter(|p| !p.trim().is_empty()).map(MetricKind::from_str).collect()
}

/// Two-sample KS test of paid-reveal counts between two groups of the same
/// experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub experiment: Experiment,
    pub agent_a: String,
    pub condition_a: String,
    pub agent_b: String,
    pub condition_b: String,
    pub d: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub n_a: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyEntry {
    pub agent: String,
    pub condition: String,
    pub experiment: Experiment,
    pub map: SaliencyMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdiosyncrasyRow {
    pub agent: String,
    pub condition: String,
    pub idiosyncrasy: f64,
    pub n: usize,
    pub mean_net: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub options: AnalysisOptions,
    pub metrics: BTreeSet<MetricKind>,
    pub n_records: usize,
    /// Records left out (aborted or practice, unless included by options).
    pub n_excluded: usize,
    pub references: BTreeMap<String, f64>,
    pub net_earnings: MetricTable,
    pub nudge_sensitivity: MetricTable,
    pub reveal_counts: Vec<RevealHistogram>,
    pub ks_reveal_counts: Vec<KsRow>,
    pub saliency: Vec<SaliencyEntry>,
    pub idiosyncrasy: Vec<IdiosyncrasyRow>,
}

/// Reads every record file or run directory; all must carry the current
/// schema version.
pub fn load_inputs<P: AsRef<Path>>(inputs: &[P]) -> Result<Vec<TrialRecord>, AnalysisError> {
    let mut all = Vec::new();
    for p in inputs {
        all.extend(read_records(p.as_ref())?);
    }
    Ok(all)
}

pub fn build_report(
    records: &[TrialRecord],
    metrics: &BTreeSet<MetricKind>,
    opts: &AnalysisOptions,
) -> Result<Report, AnalysisError> {
    let kept = analysed(records, opts);
    let experiments: BTreeSet<Experiment> = kept.iter().map(|r| r.spec.experiment).collect();
    let want = |m| metrics.contains(&m);

    let net_earnings = if want(MetricKind::Net) && !kept.is_empty() {
        net_earnings_summary(records, opts)?
    } else {
        MetricTable::default()
    };

    let mut sensitivity = MetricTable::default();
    if want(MetricKind::Sensitivity) {
        for &e in &experiments {
            sensitivity.rows.extend(nudge_sensitivity(records, e, opts)?.rows);
        }
        sensitivity.adjust();
    }

    let histograms = reveal_count_distribution(records, opts);
    let ks_reveal_counts = if want(MetricKind::Ks) { ks_table(&histograms)? } else { Vec::new() };

    let mut saliency_maps = Vec::new();
    if want(MetricKind::Saliency) {
        let mut groups: BTreeMap<(String, String, Experiment, (usize, usize)), Vec<&TrialRecord>> = BTreeMap::new();
        for r in &kept {
            let shape = (r.game.n_prizes(), r.game.n_baskets());
            groups.entry((r.agent.label(), r.agent.condition.to_string(), r.spec.experiment, shape)).or_default().push(r);
        }
        for ((agent, condition, experiment, shape), rs) in groups {
            let map = saliency(&rs, Some(shape), true)?;
            saliency_maps.push(SaliencyEntry { agent, condition, experiment, map });
        }
    }

    let mut idio = Vec::new();
    if want(MetricKind::Idiosyncrasy) {
        for ((agent, condition), rs) in by_group(&kept) {
            let mut bins: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
            for r in rs {
                let Some(net) = r.net() else { continue };
                // Weights are integers, so the L1 distance is a multiple of 1/n;
                // bin on a fixed grid to keep keys exact.
                let key = (idiosyncrasy(r.game.weights.as_slice()) * 60.0).round() as u32;
                let e = bins.entry(key).or_default();
                e.0 += 1;
                e.1 += net as f64;
            }
            idio.extend(bins.into_iter().map(|(k, (n, sum))| IdiosyncrasyRow {
                agent: agent.clone(),
                condition: condition.clone(),
                idiosyncrasy: k as f64 / 60.0,
                n,
                mean_net: sum / n as f64,
            }));
        }
    }

    let references =
        BTreeMap::from([("random".to_string(), RANDOM_BASELINE), ("optimal_reference".to_string(), OPTIMAL_REFERENCE)]);
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        options: *opts,
        metrics: metrics.clone(),
        n_records: records.len(),
        n_excluded: records.len() - kept.len(),
        references,
        net_earnings,
        nudge_sensitivity: sensitivity,
        reveal_counts: if want(MetricKind::Reveals) { histograms } else { Vec::new() },
        ks_reveal_counts,
        saliency: saliency_maps,
        idiosyncrasy: idio,
    })
}

fn ks_table(histograms: &[RevealHistogram]) -> Result<Vec<KsRow>, AnalysisError> {
    let mut rows = Vec::new();
    for (i, a) in histograms.iter().enumerate() {
        for b in &histograms[i + 1..] {
            if a.experiment != b.experiment {
                continue;
            }
            let ks = ks_two_sample(&a.sample(), &b.sample())?;
            rows.push(KsRow {
                experiment: a.experiment,
                agent_a: a.agent.clone(),
                condition_a: a.condition.clone(),
                agent_b: b.agent.clone(),
                condition_b: b.condition.clone(),
                d: ks.d,
                p_value: ks.p_value,
                p_adjusted: ks.p_value,
                n_a: ks.n_x,
                n_b: ks.n_y,
            });
        }
    }
    let adjusted = bh_adjust(&rows.iter().map(|r| r.p_value).collect::<Vec<_>>())?;
    for (r, p) in rows.iter_mut().zip(adjusted) {
        r.p_adjusted = p;
    }
    Ok(rows)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io { path: path.to_path_buf(), source }
}

/// Writes a CSV with a header line even when there are no rows.
fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), AnalysisError> {
    let csv_err = |source| AnalysisError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(p: Option<f64>) -> String {
    p.map(|v| v.to_string()).unwrap_or_default()
}

fn metric_rows(table: &MetricTable) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.agent.clone(),
                r.condition.clone(),
                r.metric.clone(),
                r.estimate.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.n.to_string(),
                opt(r.p),
                opt(r.p_adjusted),
            ]
        })
        .collect()
}

const METRIC_HEADER: [&str; 9] = ["agent", "condition", "metric", "estimate", "ci_low", "ci_high", "n", "p", "p_adjusted"];

/// Writes every table as CSV and the whole report as JSON into `out_dir`,
/// returning the files written.
pub fn write_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), AnalysisError> {
        let path = out_dir.join(name);
        write_csv(&path, header, rows)?;
        written.push(path);
        Ok(())
    };

    emit("net_earnings.csv", &METRIC_HEADER, metric_rows(&report.net_earnings))?;
    emit("nudge_sensitivity.csv", &METRIC_HEADER, metric_rows(&report.nudge_sensitivity))?;
    emit(
        "references.csv",
        &["name", "value"],
        report.references.iter().map(|(k, v)| vec![k.clone(), v.to_string()]).collect(),
    )?;

    let mut reveal_rows = Vec::new();
    for h in &report.reveal_counts {
        for (series, counts) in [("paid", &h.paid), ("free", &h.free)] {
            for (k, n) in counts {
                reveal_rows.push(vec![
                    h.agent.clone(),
                    h.condition.clone(),
                    h.experiment.to_string(),
                    series.to_string(),
                    k.to_string(),
                    n.to_string(),
                    h.trials.to_string(),
                ]);
            }
        }
    }
    emit("reveal_counts.csv", &["agent", "condition", "experiment", "series", "reveals", "trials_with", "trials"], reveal_rows)?;

    let ks_rows = report
        .ks_reveal_counts
        .iter()
        .map(|r| {
            vec![
                r.experiment.to_string(),
                r.agent_a.clone(),
                r.condition_a.clone(),
                r.agent_b.clone(),
                r.condition_b.clone(),
                r.d.to_string(),
                r.p_value.to_string(),
                r.p_adjusted.to_string(),
                r.n_a.to_string(),
                r.n_b.to_string(),
            ]
        })
        .collect();
    emit(
        "ks_reveal_counts.csv",
        &["experiment", "agent_a", "condition_a", "agent_b", "condition_b", "d", "p", "p_adjusted", "n_a", "n_b"],
        ks_rows,
    )?;

    let mut saliency_rows = Vec::new();
    for s in &report.saliency {
        for (p, row) in s.map.cells.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                saliency_rows.push(vec![
                    s.agent.clone(),
                    s.condition.clone(),
                    s.experiment.to_string(),
                    format!("{}x{}", s.map.n_prizes, s.map.n_baskets),
                    crate::game::prize_letter(p).to_string(),
                    (b + 1).to_string(),
                    v.to_string(),
                    s.map.trials.to_string(),
                ]);
            }
        }
    }
    emit(
        "saliency.csv",
        &["agent", "condition", "experiment", "shape", "prize", "basket", "reveals_per_trial", "trials"],
        saliency_rows,
    )?;

    let idio_rows = report
        .idiosyncrasy
        .iter()
        .map(|r| vec![r.agent.clone(), r.condition.clone(), r.idiosyncrasy.to_string(), r.n.to_string(), r.mean_net.to_string()])
        .collect();
    emit("idiosyncrasy.csv", &["agent", "condition", "idiosyncrasy", "n", "mean_net"], idio_rows)?;

    let json_path = out_dir.join(REPORT_JSON);
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    written.push(json_path);
    Ok(written)
}

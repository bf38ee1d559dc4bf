//! Statistics over trial records: distribution tests, earnings,
//! nudge-sensitivity metrics, saliency maps and report files.

pub mod logistic;
pub mod metrics;
pub mod report;
pub mod stats;

use std::path::PathBuf;

use thiserror::Error;

use crate::experiment::Experiment;
use crate::runner::RunnerError;

pub use logistic::{logistic_fit, LogisticFit};
pub use metrics::{
    idiosyncrasy, net_earnings_summary, nudge_sensitivity, reveal_count_distribution, saliency, AnalysisOptions,
    MetricRow, MetricTable, RevealHistogram, SaliencyMap, OPTIMAL_REFERENCE, RANDOM_BASELINE,
};
pub use report::{build_report, load_inputs, write_report, KsRow, Report};
pub use stats::{bh_adjust, bootstrap_mean, cluster_bootstrap, ks_two_sample, Interval, KsResult};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("sample is empty")]
    EmptySample,
    #[error("p-value {0} is outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("{0}")]
    Shape(String),
    #[error("design matrix is singular")]
    Singular,
    #[error("labels are perfectly separated by the features; the fit has no finite maximum")]
    Separation,
    #[error("no records to summarise for {0}")]
    EmptyGroup(String),
    #[error("metrics for the {requested} experiment requested, but the records are from {found}")]
    WrongExperiment { requested: Experiment, found: Experiment },
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

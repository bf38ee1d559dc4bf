//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-10;
/// Linear predictors beyond this magnitude mean fitted probabilities of
/// essentially 0 or 1, i.e. (quasi-)separation.
const SEPARATION_ETA: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn log_likelihood(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    // y·η − log(1 + e^η), written stably.
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - (e.max(0.0) + (-e.abs()).exp().ln_1p())).sum()
}

/// Fits `P(y=1) = σ(x·β)`. Rows of `features` are observations; include a
/// column of ones for an intercept. Stops when the log-likelihood changes
/// by less than 1e-10 or after 100 iterations.
pub fn logistic_fit(features: &[Vec<f64>], labels: &[bool]) -> Result<LogisticFit, AnalysisError> {
    let n = features.len();
    if n == 0 || n != labels.len() {
        return Err(AnalysisError::EmptySample);
    }
    let k = features[0].len();
    if features.iter().any(|r| r.len() != k) {
        return Err(AnalysisError::Shape("feature rows differ in length".into()));
    }
    let x = DMatrix::from_fn(n, k, |i, j| features[i][j]);
    let y = DVector::from_iterator(n, labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(k);
    let mut eta = &x * &beta;
    let mut ll = log_likelihood(&eta, &y);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = mu.map(|m| m * (1.0 - m));
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
        let xtw = DMatrix::from_fn(k, n, |r, c| x[(c, r)] * w[c]);
        let info = &xtw * &x;
        let inv = info.clone().try_inverse().ok_or(AnalysisError::Singular)?;
        beta = &inv * (&xtw * &z);
        eta = &x * &beta;
        if eta.iter().any(|e| e.abs() > SEPARATION_ETA) {
            return Err(AnalysisError::Separation);
        }
        let next = log_likelihood(&eta, &y);
        let delta = (next - ll).abs();
        ll = next;
        if delta < TOLERANCE || iterations >= MAX_ITERATIONS {
            break;
        }
    }
    let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
    let xtw = DMatrix::from_fn(k, n, |r, c| x[(c, r)] * mu[c] * (1.0 - mu[c]));
    let cov = (&xtw * &x).try_inverse().ok_or(AnalysisError::Singular)?;
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..k).map(|i| cov[(i, i)].sqrt()).collect(),
        log_likelihood: ll,
        iterations,
    })
}

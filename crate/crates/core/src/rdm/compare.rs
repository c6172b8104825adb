use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{average_ranks, pearson, Rdm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    /// Pearson over average-tie ranks.
    Spearman,
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            other => Err(Error::InvalidArgument(format!("unknown correlation method {other:?}"))),
        }
    }
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        })
    }
}

pub fn correlation(a: &[f64], b: &[f64], method: CorrelationMethod) -> Result<f64> {
    match method {
        CorrelationMethod::Pearson => pearson(a, b),
        CorrelationMethod::Spearman => pearson(&average_ranks(a), &average_ranks(b)),
    }
}

/// Correlation between the upper triangles of two RDMs over the same
/// stimuli.
pub fn rdm_correlation(a: &Rdm, b: &Rdm, method: CorrelationMethod) -> Result<f64> {
    if a.labels() != b.labels() {
        return Err(Error::LabelMismatch);
    }
    match correlation(&a.upper_triangle(), &b.upper_triangle(), method) {
        Err(Error::ZeroVariance) => Err(Error::DegenerateRdm),
        // a 2x2 RDM has a single pair, too short to correlate
        Err(Error::InvalidArgument(_)) => Err(Error::DegenerateRdm),
        other => other,
    }
}

/// `D[p][q] = 1 - rdm_correlation(rdms[p], rdms[q])`.
pub fn rdm_distance_matrix(rdms: &[Rdm], method: CorrelationMethod) -> Result<Matrix> {
    let n = rdms.len();
    let mut d = Matrix::zeros(n, n);
    for p in 0..n {
        for q in p + 1..n {
            let v = 1.0 - rdm_correlation(&rdms[p], &rdms[q], method)?;
            d[(p, q)] = v;
            d[(q, p)] = v;
        }
    }
    Ok(d)
}

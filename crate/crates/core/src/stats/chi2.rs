use serde::{Deserialize, Serialize};

use super::special::chi2_sf;
use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub degrees_of_freedom: u32,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test. `expected` defaults to uniform over the
/// cells; when given it must be positive and sum to the observed total.
pub fn chi2_gof(observed: &[f64], expected: Option<&[f64]>) -> Result<ChiSquaredResult, StatsError> {
    let k = observed.len();
    if k < 2 {
        return Err(StatsError::InvalidCells(format!("need at least 2 cells, got {k}")));
    }
    if observed.iter().any(|&o| o < 0.0 || !o.is_finite()) {
        return Err(StatsError::InvalidCells("observed counts must be finite and non-negative".into()));
    }
    let total: f64 = observed.iter().sum();
    let expected: Vec<f64> = match expected {
        Some(e) => {
            if e.len() != k {
                return Err(StatsError::InvalidCells(format!(
                    "expected has {} cells, observed has {k}",
                    e.len()
                )));
            }
            let sum: f64 = e.iter().sum();
            if (sum - total).abs() > 1e-9 * total.max(1.0) {
                return Err(StatsError::InvalidCells(format!(
                    "expected sums to {sum}, observed to {total}"
                )));
            }
            e.to_vec()
        }
        None => vec![total / k as f64; k],
    };
    if expected.iter().any(|&e| e.is_nan() || e <= 0.0) {
        return Err(StatsError::InvalidCells("zero expected cell".into()));
    }
    let statistic: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let degrees_of_freedom = (k - 1) as u32;
    Ok(ChiSquaredResult {
        statistic,
        degrees_of_freedom,
        p_value: chi2_sf(statistic, degrees_of_freedom),
    })
}

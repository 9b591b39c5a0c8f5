//! Test statistics for the success criteria: Spearman rank correlation with
//! exact or t-approximated p-values, and Pearson's chi-squared
//! goodness-of-fit. Special functions are implemented here rather than
//! pulled from a numerics crate.

mod chi2;
pub mod special;
mod spearman;

use thiserror::Error;

pub use chi2::{chi2_gof, ChiSquaredResult};
pub use special::{chi2_sf, student_t_sf};
pub use spearman::{ranks, spearman_exact_count, spearman_p, spearman_p_with, spearman_rho, Alternative, EXACT_MAX_N};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid cells: {0}")]
    InvalidCells(String),
}

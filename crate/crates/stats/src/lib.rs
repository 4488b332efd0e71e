//! Nonparametric tests and descriptive statistics used to compare
//! win-rate samples between content-generation variants.
//!
//! Every test returns a [`TestResult`] carrying the statistic, a two-sided
//! p-value and whether the p-value came from an exact distribution or an
//! asymptotic approximation. Significance thresholds are left to callers.

mod kruskal;
mod mann_whitney;
mod quantile;
mod rank;
mod shapiro;
mod special;

pub use kruskal::kruskal_wallis;
pub use mann_whitney::{mann_whitney_u, mann_whitney_u_with, MwuMode};
pub use quantile::{five_number_summary, median, quantile, FiveNumber};
pub use rank::{midranks, tie_term};
pub use shapiro::shapiro_wilk;
pub use special::{chi2_sf, norm_cdf, norm_ppf, norm_sf};

use std::fmt;

/// How a p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Asymptotic,
    /// No variation in the pooled data; the statistic is pinned at its null value.
    Degenerate,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Asymptotic => "asymptotic",
            Method::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("need at least {needed} observations, got {given}")]
    TooFew { given: usize, needed: usize },
    #[error("need at most {limit} observations, got {given}")]
    TooMany { given: usize, limit: usize },
    #[error("sample has zero range")]
    ZeroRange,
    #[error("quantile level {0} outside [0, 1]")]
    BadLevel(f64),
}

pub(crate) fn check_finite(x: &[f64]) -> Result<(), StatsError> {
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

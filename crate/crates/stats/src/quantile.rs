use crate::{check_finite, StatsError};

/// Linear-interpolation quantile between order statistics (Hyndman-Fan type 7):
/// position `q * (n - 1)` in the sorted sample.
pub fn quantile(x: &[f64], q: f64) -> Result<f64, StatsError> {
    check_finite(x)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(StatsError::BadLevel(q));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&sorted, q))
}

pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn median(x: &[f64]) -> Result<f64, StatsError> {
    quantile(x, 0.5)
}

/// Minimum, quartiles and maximum (type-7 quartiles).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number_summary(x: &[f64]) -> Result<FiveNumber, StatsError> {
    check_finite(x)?;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(FiveNumber {
        min: sorted[0],
        q1: sorted_quantile(&sorted, 0.25),
        median: sorted_quantile(&sorted, 0.5),
        q3: sorted_quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

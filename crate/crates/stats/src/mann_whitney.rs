use crate::rank::{midranks, tie_term};
use crate::special::norm_sf;
use crate::{check_finite, Method, StatsError, TestResult};

/// Largest per-sample size for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwuMode {
    /// Exact when both samples have at most [`EXACT_LIMIT`] values and no ties.
    Auto,
    Exact,
    Asymptotic,
}

/// Two-sided Mann-Whitney U test. The statistic is `U` of the first sample.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    mann_whitney_u_with(a, b, MwuMode::Auto)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], mode: MwuMode) -> Result<TestResult, StatsError> {
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u = rank_sum_a - (na * (na + 1)) as f64 / 2.0;

    let ties = tie_term(&pooled);
    let exact = match mode {
        MwuMode::Exact => true,
        MwuMode::Asymptotic => false,
        MwuMode::Auto => na <= EXACT_LIMIT && nb <= EXACT_LIMIT && ties == 0.0,
    };

    if exact && ties == 0.0 {
        return Ok(TestResult { statistic: u, p_value: exact_p(u, na, nb), method: Method::Exact });
    }

    let n = (na + nb) as f64;
    let mean = (na * nb) as f64 / 2.0;
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(TestResult { statistic: u, p_value: 1.0, method: Method::Degenerate });
    }
    let dev = ((u - mean).abs() - 0.5).max(0.0);
    let p = (2.0 * norm_sf(dev / var.sqrt())).min(1.0);
    Ok(TestResult { statistic: u, p_value: p, method: Method::Asymptotic })
}

/// Counts of subsets of size `k` from ranks `1..=n` grouped by U value.
fn u_distribution(na: usize, nb: usize) -> Vec<u128> {
    let max_u = na * nb;
    // counts[j][u]: number of ways to place j items of sample A among the
    // first i pooled ranks with partial U = u; rolled over i.
    let mut counts = vec![vec![0u128; max_u + 1]; na + 1];
    counts[0][0] = 1;
    for i in 0..(na + nb) {
        // an A item at pooled position i contributes the number of B items before it
        for j in (1..=na.min(i + 1)).rev() {
            let bs_before = i + 1 - j;
            if bs_before > nb {
                continue;
            }
            for u in (bs_before..=max_u).rev() {
                let add = counts[j - 1][u - bs_before];
                counts[j][u] += add;
            }
        }
    }
    counts.swap_remove(na)
}

fn exact_p(u: f64, na: usize, nb: usize) -> f64 {
    let dist = u_distribution(na, nb);
    let total: u128 = dist.iter().sum();
    let u = u.round() as usize;
    let lower: u128 = dist[..=u].iter().sum();
    let upper: u128 = dist[u..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_triples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, Method::Exact);
        assert!((r.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn distribution_sums_to_binomial() {
        let d = u_distribution(8, 8);
        assert_eq!(d.iter().sum::<u128>(), 12_870);
        assert_eq!(d.len(), 65);
        // symmetric about na*nb/2
        for u in 0..=64 {
            assert_eq!(d[u], d[64 - u]);
        }
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 4.5);
    }

    #[test]
    fn all_equal_is_degenerate() {
        let r = mann_whitney_u(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.method, Method::Degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn tied_reference_value() {
        // scipy.stats.mannwhitneyu (asymptotic, continuity + tie corrections)
        let r = mann_whitney_u(&[1.0, 2.0, 2.0, 3.0, 5.0], &[2.0, 3.0, 3.0, 4.0, 6.0, 6.0, 7.0]).unwrap();
        assert_eq!(r.statistic, 7.0);
        assert_eq!(r.method, Method::Asymptotic);
        assert!((r.p_value - 0.09890866085596386).abs() < 1e-10);
    }

    #[test]
    fn six_by_six_reference() {
        let a = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let b = [3.0, 6.0, 9.0, 10.0, 11.0, 12.0];
        let exact = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(exact.statistic, 6.0);
        assert!((exact.p_value - 0.06493506493506493).abs() < 1e-12);
        let approx = mann_whitney_u_with(&a, &b, MwuMode::Asymptotic).unwrap();
        assert!((approx.p_value - 0.06555216116550257).abs() < 1e-10);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::Empty));
    }
}

use crate::rank::{midranks, tie_term};
use crate::special::chi2_sf;
use crate::{check_finite, Method, StatsError, TestResult};

/// Kruskal-Wallis H test with tie correction; p from chi-square with
/// `groups - 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew { given: groups.len(), needed: 2 });
    }
    for g in groups {
        check_finite(g)?;
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len();
    if n < 3 {
        return Err(StatsError::TooFew { given: n, needed: 3 });
    }
    let nf = n as f64;
    let ranks = midranks(&pooled);
    let mut offset = 0;
    let mut sum_sq = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum_sq += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = 12.0 / (nf * (nf + 1.0)) * sum_sq - 3.0 * (nf + 1.0);
    let correction = 1.0 - tie_term(&pooled) / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0, method: Method::Degenerate });
    }
    let h = (h / correction).max(0.0);
    let df = (groups.len() - 1) as f64;
    Ok(TestResult { statistic: h, p_value: chi2_sf(h, df), method: Method::Asymptotic })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_group_fixture() {
        let r = kruskal_wallis(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap();
        assert!((r.statistic - 7.2).abs() < 1e-12);
        assert!((r.p_value - (-3.6f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn identical_groups() {
        let g = [1.0, 2.0, 3.0];
        let r = kruskal_wallis(&[&g, &g]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_identical_observations() {
        let r = kruskal_wallis(&[&[5.0, 5.0], &[5.0, 5.0]]).unwrap();
        assert_eq!((r.statistic, r.p_value, r.method), (0.0, 1.0, Method::Degenerate));
    }

    #[test]
    fn needs_two_groups() {
        assert!(kruskal_wallis(&[&[1.0, 2.0, 3.0]]).is_err());
        assert!(kruskal_wallis(&[&[1.0], &[2.0]]).is_err());
    }
}

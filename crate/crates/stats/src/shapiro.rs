//! Shapiro-Wilk W test using Royston's approximations (algorithm AS R94)
//! for the order-statistic weights and for the null distribution of W.

use crate::special::{norm_ppf, norm_sf};
use crate::{check_finite, Method, StatsError, TestResult};

const MIN_N: usize = 3;
const MAX_N: usize = 5000;

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

/// p-value reported when W is beyond the range of the small-sample fit.
const TINY_P: f64 = 1e-19;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Upper-half weights `a[0] >= a[1] >= ...`, normalized so the full
/// antisymmetric vector has unit length.
fn weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let nf = n as f64;
    // expected normal order statistics (Blom-type plotting positions), lower half
    let m: Vec<f64> = (0..half).map(|i| norm_ppf((i as f64 + 1.0 - 0.375) / (nf + 0.25))).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / nf.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first_scaled, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let num = summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1];
        let den = 1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2;
        (2, (num / den).sqrt())
    } else {
        let num = summ2 - 2.0 * m[0] * m[0];
        let den = 1.0 - 2.0 * a1 * a1;
        (1, (num / den).sqrt())
    };
    for i in first_scaled..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// Shapiro-Wilk test of normality for `3 <= n <= 5000` observations.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult, StatsError> {
    check_finite(x)?;
    let n = x.len();
    if n < MIN_N {
        return Err(StatsError::TooFew { given: n, needed: MIN_N });
    }
    if n > MAX_N {
        return Err(StatsError::TooMany { given: n, limit: MAX_N });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[n - 1] - sorted[0];
    if range < 1e-19 * sorted[n - 1].abs().max(1.0) {
        return Err(StatsError::ZeroRange);
    }

    let a = weights(n);
    // scale by the range for conditioning; W is scale-free
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let ssx: f64 = sorted.iter().map(|v| ((v - mean) / range).powi(2)).sum();
    let num: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (sorted[n - 1 - i] - sorted[i]) / range)
        .sum();
    let w = (num * num / ssx).min(1.0);

    let p = if n == 3 {
        (1.0 - 6.0 / std::f64::consts::PI * w.sqrt().acos()).max(0.0)
    } else {
        let y = (1.0 - w).ln();
        let nf = n as f64;
        if n <= 11 {
            let gamma = poly(&G, nf);
            if y >= gamma {
                TINY_P
            } else {
                let y = -(gamma - y).ln();
                let mu = poly(&C3, nf);
                let sigma = poly(&C4, nf).exp();
                norm_sf((y - mu) / sigma)
            }
        } else {
            let ln_n = nf.ln();
            let mu = poly(&C5, ln_n);
            let sigma = poly(&C6, ln_n).exp();
            norm_sf((y - mu) / sigma)
        }
    };
    Ok(TestResult { statistic: w, p_value: p.clamp(0.0, 1.0), method: Method::Asymptotic })
}

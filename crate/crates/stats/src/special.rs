use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::{erf, gamma};

/// Chi-square survival function, `Q(df/2, x/2)`.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma::gamma_ur(df / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Upper tail of the standard normal.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erf::erfc(z / std::f64::consts::SQRT_2)
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_ppf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

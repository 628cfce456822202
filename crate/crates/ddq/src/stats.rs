//! Small numeric helpers shared by the harness and the test suites.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 in the denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Chi-square statistic of observed counts against the uniform expectation.
/// Degrees of freedom are `counts.len() - 1`.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// 0.99 quantile of the chi-square distribution for 99 degrees of freedom
/// (uniformity over 100 cells at significance 0.01).
pub const CHI2_CRIT_DF99_P01: f64 = 134.642;

/// 0.99 quantile for 3 degrees of freedom (uniformity over 4 actions).
pub const CHI2_CRIT_DF3_P01: f64 = 11.345;

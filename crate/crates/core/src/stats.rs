//! Goodness-of-fit statistics used to compare samples with each other
//! and with analytic laws.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kolmogorov-Smirnov distance between a sorted sample and a CDF.
pub fn ks_statistic_one_sample<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f)
    })
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = 2.0 * (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn rejected_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Two-sample Kolmogorov-Smirnov test with the small-sample corrected
/// asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    TestResult { statistic: d, p_value: kolmogorov_sf(lambda) }
}

/// Chi-square test of homogeneity for two histograms on the same bins.
/// Bins empty in both samples are dropped.
pub fn chi2_homogeneity(a: &[u64], b: &[u64]) -> TestResult {
    assert_eq!(a.len(), b.len(), "histograms must share bins");
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let total = na + nb;
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        bins += 1;
        let ea = na * col / total;
        let eb = nb * col / total;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if bins < 2 {
        return TestResult { statistic: 0.0, p_value: 1.0 };
    }
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    TestResult { statistic: stat, p_value: dist.sf(stat) }
}

/// Standard error of a binomial proportion estimated from `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Counts of values `1..=max_bin` with everything above pooled in the last bin.
/// Values below 1 are ignored.
pub fn pooled_histogram(values: &[usize], max_bin: usize) -> Vec<u64> {
    let mut h = vec![0u64; max_bin];
    for &v in values {
        if v >= 1 {
            h[v.min(max_bin) - 1] += 1;
        }
    }
    h
}

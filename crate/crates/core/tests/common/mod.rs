#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kolmogorov-Smirnov p-value of `samples` against `cdf` (asymptotic
/// distribution with the usual small-sample correction).
pub fn ks_test(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        p += 2.0 * if j % 2.0 == 1.0 { 1.0 } else { -1.0 } * (-2.0 * j * j * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Pearson chi-square p-value of integer `samples` against `pmf` on
/// `0..pmf.len()`, pooling the tail once expected counts drop below five.
/// Expects `pmf` to be decreasing.
pub fn chi_square_test(samples: &[usize], pmf: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mut observed = vec![0usize; pmf.len()];
    for &k in samples {
        observed[k] += 1;
    }
    let cut = pmf.iter().position(|p| n * p < 5.0).unwrap_or(pmf.len());
    let mut bins: Vec<(f64, f64)> = (0..cut).map(|k| (n * pmf[k], observed[k] as f64)).collect();
    if cut < pmf.len() {
        bins.push((n * pmf[cut..].iter().sum::<f64>(), observed[cut..].iter().sum::<usize>() as f64));
    }
    let chi2: f64 = bins.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    1.0 - ChiSquared::new((bins.len() - 1) as f64).unwrap().cdf(chi2)
}

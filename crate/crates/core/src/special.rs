//! Special functions and quadrature rules used by the field and likelihood code.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

pub use libm::{erf, erfc, lgamma as ln_gamma};

/// `erf(b) - erf(a)` evaluated without catastrophic cancellation in the tails.
pub fn erf_diff(a: f64, b: f64) -> f64 {
    if a >= 0.0 && b >= 0.0 {
        erfc(a) - erfc(b)
    } else if a <= 0.0 && b <= 0.0 {
        erfc(-b) - erfc(-a)
    } else {
        erf(b) - erf(a)
    }
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma function `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..1000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut z = (core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Log of `sum(exp(x))` with max-shift; `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_p_matches_statrs() {
        use statrs::function::gamma::gamma_lr;
        for &a in &[0.5, 1.0, 2.5, 10.0, 52.0] {
            for &x in &[0.01, 0.5, 1.0, 3.0, 12.0, 60.0] {
                assert_relative_eq!(gamma_p(a, x), gamma_lr(a, x), max_relative = 1e-12, epsilon = 1e-300);
                assert_relative_eq!(gamma_p(a, x) + gamma_q(a, x), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        // exact for degree <= 13
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert_relative_eq!(integral, 2.0 / 13.0, max_relative = 1e-14);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn erf_diff_tail_accuracy() {
        let d = erf_diff(6.0, 7.0);
        assert!(d > 0.0);
        assert_relative_eq!(d, erfc(6.0) - erfc(7.0), max_relative = 1e-14);
        assert_relative_eq!(erf_diff(-7.0, -6.0), d, max_relative = 1e-14);
    }
}

//! Hierarchical prior over [`ThetaState`] with the cardinality rate, the
//! per-kernel scale locations and the amplitude variance integrated out.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::field::{Domain, KernelTerm, Point, ThetaState};
use crate::special::ln_gamma;

/// Fixed prior and sampler constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Rate of the exponential hyper-prior on the Poisson intensity.
    pub s: f64,
    pub a_tau: f64,
    pub a_mu: f64,
    /// Inverse-gamma shape/scale of the amplitude variance.
    pub a_amp: f64,
    pub b_amp: f64,
    /// Gamma shape/rate of the model-error precision.
    pub a_err: f64,
    pub b_err: f64,
    pub k_max: usize,
    pub c_move: f64,
    pub delta_x: f64,
    pub delta_a: f64,
    pub zeta: f64,
    pub ess_min_frac: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            s: 0.1,
            a_tau: 1.0,
            a_mu: 1e-4,
            a_amp: 1.0,
            b_amp: 1.0,
            a_err: 2.0,
            b_err: 1e-6,
            k_max: 100,
            c_move: 0.2,
            delta_x: 1.0,
            delta_a: 1.0,
            zeta: 0.95,
            ess_min_frac: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("s", self.s),
            ("a_tau", self.a_tau),
            ("a_mu", self.a_mu),
            ("a_amp", self.a_amp),
            ("b_amp", self.b_amp),
            ("a_err", self.a_err),
            ("b_err", self.b_err),
            ("delta_x", self.delta_x),
            ("delta_a", self.delta_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::OutOfRange { name, value: v });
            }
        }
        if !(self.c_move > 0.0 && self.c_move < 0.5) {
            return Err(ConfigError::OutOfRange { name: "c_move", value: self.c_move });
        }
        // Update moves share what the four trans-dimensional moves leave over.
        if self.trans_dimensional_mass() >= 1.0 {
            return Err(ConfigError::OutOfRange { name: "c_move", value: self.c_move });
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(ConfigError::OutOfRange { name: "zeta", value: self.zeta });
        }
        if !(self.ess_min_frac > 0.0 && self.ess_min_frac <= 1.0) {
            return Err(ConfigError::OutOfRange { name: "ess_min_frac", value: self.ess_min_frac });
        }
        Ok(())
    }

    /// `p_birth + p_death + p_split + p_merge` before any gating.
    pub fn trans_dimensional_mass(&self) -> f64 {
        2.0 * self.c_move * (1.0 / (self.s + 1.0) + 1.0)
    }
}

/// The complete prior on a fixed domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    pub hp: Hyperparams,
    pub domain: Domain,
}

impl Prior {
    pub fn new(hp: Hyperparams, domain: Domain) -> Self {
        Self { hp, domain }
    }

    /// Unnormalized log cardinality mass, `-(k+1) log(s+1)`.
    pub fn log_cardinality(&self, k: usize) -> f64 {
        if k > self.hp.k_max {
            return f64::NEG_INFINITY;
        }
        -((k + 1) as f64) * (self.hp.s + 1.0).ln()
    }

    /// Log density of one precision with its Gamma-rate location marginalized.
    pub fn log_scale_density(&self, tau: f64) -> f64 {
        if !(tau > 0.0) || !tau.is_finite() {
            return f64::NEG_INFINITY;
        }
        let a = self.hp.a_tau;
        let a_mu = self.hp.a_mu;
        ln_gamma(a + 1.0) - ln_gamma(a) + a * a.ln() + (a - 1.0) * tau.ln()
            - a_mu.ln()
            - (a + 1.0) * (a * tau + 1.0 / a_mu).ln()
    }

    /// Log joint density of `a0..a_k` with the common variance integrated out.
    pub fn log_amplitude_density<I: IntoIterator<Item = f64>>(&self, amplitudes: I) -> f64 {
        let (mut count, mut ss) = (0usize, 0.0);
        for a in amplitudes {
            count += 1;
            ss += a * a;
        }
        let half = count as f64 / 2.0;
        let shape = self.hp.a_amp + half;
        -half * (2.0 * core::f64::consts::PI).ln() + ln_gamma(shape) - ln_gamma(self.hp.a_amp)
            + self.hp.a_amp * self.hp.b_amp.ln()
            - shape * (self.hp.b_amp + 0.5 * ss).ln()
    }

    pub fn log_location_density(&self, x: &Point) -> f64 {
        if self.domain.contains(x) {
            -self.domain.measure().ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn log_prior(&self, theta: &ThetaState) -> f64 {
        let k = theta.k();
        let mut lp = self.log_cardinality(k);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        for t in &theta.terms {
            lp += self.log_scale_density(t.precision) + self.log_location_density(&t.center);
            if lp == f64::NEG_INFINITY {
                return lp;
            }
        }
        lp + self.log_amplitude_density(theta.amplitudes())
    }

    /// Normalized cardinality pmf on `0..=k_max`.
    pub fn cardinality_pmf(&self) -> Vec<f64> {
        let r = 1.0 / (self.hp.s + 1.0);
        let norm = (1.0 - r.powi(self.hp.k_max as i32 + 1)) / (1.0 - r);
        (0..=self.hp.k_max).map(|k| r.powi(k as i32) / norm).collect()
    }

    pub fn sample_cardinality<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let r = 1.0 / (self.hp.s + 1.0);
        let tail = r.powi(self.hp.k_max as i32 + 1);
        let u: f64 = rng.random();
        // Inverse CDF of the truncated geometric.
        let k = ((1.0 - u * (1.0 - tail)).ln() / r.ln()).floor();
        if k.is_finite() && k >= 0.0 {
            (k as usize).min(self.hp.k_max)
        } else {
            0
        }
    }

    pub fn sample_precision<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mu = Exp::new(1.0 / self.hp.a_mu).expect("a_mu > 0").sample(rng);
        let rate = self.hp.a_tau * mu;
        let tau = Gamma::new(self.hp.a_tau, 1.0 / rate).expect("positive gamma parameters").sample(rng);
        tau.max(f64::MIN_POSITIVE)
    }

    pub fn sample_center<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self.domain {
            Domain::UnitInterval => [rng.random::<f64>(), 0.0],
            Domain::UnitSquare => [rng.random::<f64>(), rng.random::<f64>()],
        }
    }

    /// Ancestral draw through the un-marginalized hierarchy.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ThetaState {
        let k = self.sample_cardinality(rng);
        let precision_of_amp = Gamma::new(self.hp.a_amp, 1.0 / self.hp.b_amp).expect("positive").sample(rng);
        let sd = (1.0 / precision_of_amp).sqrt();
        let normal = Normal::new(0.0, sd).expect("finite sd");
        let a0 = normal.sample(rng);
        let terms = (0..k)
            .map(|_| {
                let amplitude = normal.sample(rng);
                let precision = self.sample_precision(rng);
                let center = self.sample_center(rng);
                KernelTerm::new(amplitude, precision, center)
            })
            .collect();
        ThetaState { a0, terms }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> Prior {
        Prior::new(Hyperparams::default(), Domain::UnitSquare)
    }

    #[test]
    fn defaults_validate() {
        Hyperparams::default().validate().unwrap();
        let bad = Hyperparams { c_move: 0.45, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cardinality_ratio() {
        let p = prior();
        let ratio = (p.log_cardinality(4) - p.log_cardinality(3)).exp();
        assert_relative_eq!(ratio, 1.0 / 1.1, max_relative = 1e-14);
        assert_eq!(p.log_cardinality(101), f64::NEG_INFINITY);
    }

    #[test]
    fn amplitude_factor_single_constant() {
        let p = prior();
        // -0.5 ln 2pi + ln Gamma(1.5) - 1.5 ln 1 (the a ln b - ln Gamma(a) term is zero here)
        assert_relative_eq!(p.log_amplitude_density([0.0]), -1.039_720_770_839_917_9, max_relative = 1e-12);
    }

    #[test]
    fn outside_domain_has_no_support() {
        let p = prior();
        let theta = ThetaState { a0: 0.0, terms: vec![KernelTerm::new(1.0, 10.0, [1.2, 0.5])] };
        assert_eq!(p.log_prior(&theta), f64::NEG_INFINITY);
        let theta = ThetaState { a0: 0.0, terms: vec![KernelTerm::new(1.0, -1.0, [0.2, 0.5])] };
        assert_eq!(p.log_prior(&theta), f64::NEG_INFINITY);
    }

    #[test]
    fn scale_density_integrates_to_one() {
        // a_tau = 2.5 exercises the tau^(a-1) numerator.
        let p = Prior::new(Hyperparams { a_tau: 2.5, a_mu: 0.3, ..Default::default() }, Domain::UnitSquare);
        let (n, lo, hi) = (200_000, -20.0f64, 20.0f64);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let t = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * (p.log_scale_density(t.exp()) + t).exp()
            })
            .sum::<f64>()
            * h;
        assert_relative_eq!(total, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn huge_s_gives_empty_expansion() {
        let p = Prior::new(Hyperparams { s: 1e12, ..Default::default() }, Domain::UnitSquare);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| p.sample(&mut rng).k() == 0));
    }

    #[test]
    fn log_prior_is_exchangeable() {
        let p = prior();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let theta = p.sample(&mut rng);
            let mut rev = theta.clone();
            rev.terms.reverse();
            assert_eq!(p.log_prior(&theta).is_finite(), true);
            assert_relative_eq!(p.log_prior(&theta), p.log_prior(&rev), max_relative = 1e-12);
        }
    }

    #[test]
    fn pmf_is_normalized() {
        let pmf = prior().cardinality_pmf();
        assert_eq!(pmf.len(), 101);
        assert_relative_eq!(pmf.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
    }
}

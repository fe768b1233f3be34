//! Gaussian error model with the error precision integrated out against a
//! conjugate Gamma prior.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::field::{ThetaState, Upscale};
use crate::prior::Hyperparams;
use crate::solvers::{predict, ForwardModel, PredictedResponse, SensorLayout};
use crate::special::{gamma_q, ln_gamma};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub sensors: SensorLayout,
    pub values: Vec<f64>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean absolute observed value.
    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len().max(1) as f64
    }
}

pub fn sum_sq_residual(obs: &ObservationSet, pred: &PredictedResponse) -> f64 {
    debug_assert_eq!(obs.values.len(), pred.values.len());
    obs.values.iter().zip(&pred.values).map(|(y, f)| (y - f) * (y - f)).sum()
}

/// `ln Gamma(a + n/2) - (a + n/2) ln(b + SS/2)`; the data-independent
/// normalizer is [`log_marginal_constant`].
pub fn log_marginal_likelihood(obs: &ObservationSet, pred: &PredictedResponse, hp: &Hyperparams) -> f64 {
    log_marginal_from_ss(obs.len(), sum_sq_residual(obs, pred), hp)
}

pub fn log_marginal_from_ss(n: usize, ss: f64, hp: &Hyperparams) -> f64 {
    if !ss.is_finite() {
        return f64::NEG_INFINITY;
    }
    let shape = hp.a_err + n as f64 / 2.0;
    ln_gamma(shape) - shape * (hp.b_err + 0.5 * ss).ln()
}

/// Constant that turns [`log_marginal_likelihood`] into a normalized density
/// of the observations: `-(n/2) ln 2pi + a ln b - ln Gamma(a)`.
pub fn log_marginal_constant(n: usize, hp: &Hyperparams) -> f64 {
    -(n as f64 / 2.0) * (2.0 * core::f64::consts::PI).ln() + hp.a_err * hp.b_err.ln() - ln_gamma(hp.a_err)
}

/// Gamma posterior (shape, rate) of the error precision `sigma^-2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl SigmaPosterior {
    pub fn mean_precision(&self) -> f64 {
        self.shape / self.rate
    }

    /// `E[sigma] = Gamma(shape - 1/2) / Gamma(shape) * sqrt(rate)`.
    pub fn mean_sigma(&self) -> f64 {
        (ln_gamma(self.shape - 0.5) - ln_gamma(self.shape)).exp() * self.rate.sqrt()
    }

    /// `P(sigma <= s)`.
    pub fn sigma_cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        gamma_q(self.shape, self.rate / (s * s))
    }

    pub fn sample_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let precision = Gamma::new(self.shape, 1.0 / self.rate).expect("positive gamma parameters").sample(rng);
        1.0 / precision.sqrt()
    }
}

pub fn sigma_posterior(obs: &ObservationSet, pred: &PredictedResponse, hp: &Hyperparams) -> SigmaPosterior {
    sigma_posterior_from_ss(obs.len(), sum_sq_residual(obs, pred), hp)
}

pub fn sigma_posterior_from_ss(n: usize, ss: f64, hp: &Hyperparams) -> SigmaPosterior {
    SigmaPosterior { shape: hp.a_err + n as f64 / 2.0, rate: hp.b_err + 0.5 * ss }
}

/// Quantile of `sigma` under a weighted mixture of per-particle posteriors.
pub fn sigma_mixture_quantile(components: &[(f64, SigmaPosterior)], p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p));
    let total: f64 = components.iter().map(|(w, _)| w).sum();
    let cdf = |s: f64| components.iter().map(|(w, c)| w * c.sigma_cdf(s)).sum::<f64>() / total;
    let (mut lo, mut hi) = (1e-300f64.ln(), 0.0f64);
    while cdf(hi.exp()) < p {
        hi += 10.0;
        if hi > 700.0 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid.exp()) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// A log-likelihood over field parameterizations.
pub trait LogLikelihood: Sync {
    fn log_likelihood(&self, theta: &ThetaState) -> f64;
    /// Forward-solver calls made on behalf of this likelihood.
    fn solver_calls(&self) -> u64 {
        0
    }
}

/// Constant likelihood; the bridge from it targets the prior alone.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlatLikelihood;

impl LogLikelihood for FlatLikelihood {
    fn log_likelihood(&self, _theta: &ThetaState) -> f64 {
        0.0
    }
}

/// Marginal likelihood of the observations under one forward solver.
pub struct LevelLikelihood<'a> {
    pub model: &'a dyn ForwardModel,
    pub obs: &'a ObservationSet,
    pub hp: Hyperparams,
    pub upscale: Upscale,
    failures: AtomicU64,
}

impl<'a> LevelLikelihood<'a> {
    pub fn new(model: &'a dyn ForwardModel, obs: &'a ObservationSet, hp: Hyperparams, upscale: Upscale) -> Self {
        Self { model, obs, hp, upscale, failures: AtomicU64::new(0) }
    }

    pub fn predict(&self, theta: &ThetaState) -> Option<PredictedResponse> {
        predict(self.model, theta, self.upscale, &self.obs.sensors).ok()
    }

    /// Solver failures mapped to zero likelihood so far.
    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }
}

impl LogLikelihood for LevelLikelihood<'_> {
    fn log_likelihood(&self, theta: &ThetaState) -> f64 {
        match predict(self.model, theta, self.upscale, &self.obs.sensors) {
            Ok(pred) => log_marginal_likelihood(self.obs, &pred, &self.hp),
            Err(_) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                f64::NEG_INFINITY
            }
        }
    }

    fn solver_calls(&self) -> u64 {
        self.model.calls()
    }
}

//! Adaptive sequential Monte Carlo over a hierarchy of likelihoods.
//!
//! The ensemble starts from prior draws and is carried from each level's
//! posterior to the next along the geometric bridge
//! `pi_coarse^(1 - gamma) pi_fine^gamma`, with `gamma` chosen so that each
//! reweighing step keeps a fixed fraction of the effective sample size.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{stream_seed, ParticleExecutor};
use crate::likelihood::{FlatLikelihood, LogLikelihood};
use crate::prior::Prior;
use crate::rjmcmc::{
    adapt_step_sizes, rejuvenate, AcceptanceStats, ChainState, StepSizes, TargetDensity, BIRTH_AMPLITUDE_FLOOR,
};

const TAG_INIT: u64 = 0;
const TAG_REJUVENATE: u64 = 1;
const TAG_RESAMPLE: u64 = 2;

/// Resolution of the `gamma` search.
pub const GAMMA_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub state: ChainState,
    /// Unnormalized; `-inf` marks a particle with zero weight.
    pub log_weight: f64,
    /// Slot index; together with the seed, level and iteration it fixes the
    /// particle's random stream.
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub gamma: f64,
    /// Index of the level being bridged to; 0 is the prior.
    pub level: usize,
    pub iteration: usize,
    pub steps: StepSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Rejuvenation moves per particle per iteration.
    pub n_sweeps: usize,
    pub seed: u64,
    pub initial_steps: StepSizes,
    /// Per-level cap on bridging iterations.
    pub max_iterations: usize,
    pub adapt_steps: bool,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            n_particles: 100,
            n_sweeps: 5,
            seed: 0,
            initial_steps: StepSizes::default(),
            max_iterations: 10_000,
            adapt_steps: true,
        }
    }
}

/// One reweigh / resample / rejuvenate iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeStep {
    pub iteration: usize,
    pub gamma: f64,
    /// ESS before reweighing.
    pub ess_prev: f64,
    /// ESS right after reweighing.
    pub ess: f64,
    pub resampled: bool,
    pub acceptance: AcceptanceStats,
    /// Step sizes used during this iteration's rejuvenation.
    pub steps: StepSizes,
    pub calls_coarse: u64,
    pub calls_fine: u64,
    /// Weighted posterior mean of the number of kernels after rejuvenation.
    pub mean_k: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BridgeRecord {
    pub level: usize,
    /// Fine-level calls spent evaluating the incoming ensemble.
    pub init_calls_fine: u64,
    pub steps: Vec<BridgeStep>,
}

impl BridgeRecord {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn calls_fine(&self) -> u64 {
        self.init_calls_fine + self.steps.iter().map(|s| s.calls_fine).sum::<u64>()
    }

    pub fn calls_coarse(&self) -> u64 {
        self.steps.iter().map(|s| s.calls_coarse).sum()
    }

    pub fn final_gamma(&self) -> Option<f64> {
        self.steps.last().map(|s| s.gamma)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SmcError {
    #[error("degenerate ensemble at level {level}, iteration {iteration}: no particle has positive weight")]
    Degenerate { level: usize, iteration: usize, records: Vec<BridgeRecord> },
    #[error("level {level} did not reach gamma = 1 within {iterations} iterations")]
    IterationLimit { level: usize, iterations: usize, records: Vec<BridgeRecord> },
}

impl SmcError {
    /// Records of completed levels plus the partial record of the failing one.
    pub fn records(&self) -> &[BridgeRecord] {
        match self {
            SmcError::Degenerate { records, .. } | SmcError::IterationLimit { records, .. } => records,
        }
    }

    fn prepend(mut self, done: &[BridgeRecord]) -> Self {
        match &mut self {
            SmcError::Degenerate { records, .. } | SmcError::IterationLimit { records, .. } => {
                let mut all = done.to_vec();
                all.append(records);
                *records = all;
            }
        }
        self
    }
}

/// Normalized weights via max-shift; `None` if every weight is zero.
pub fn normalized_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

/// `1 / sum W_i^2`; `None` for a degenerate ensemble.
pub fn ess(log_weights: &[f64]) -> Option<f64> {
    normalized_weights(log_weights).map(|w| 1.0 / w.iter().map(|v| v * v).sum::<f64>())
}

fn shifted_weight(log_weight: f64, dgamma: f64, delta: f64) -> f64 {
    if dgamma == 0.0 {
        return log_weight;
    }
    let v = log_weight + dgamma * delta;
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn ess_after(log_weights: &[f64], deltas: &[f64], dgamma: f64) -> f64 {
    let lw: Vec<f64> = log_weights.iter().zip(deltas).map(|(lw, d)| shifted_weight(*lw, dgamma, *d)).collect();
    ess(&lw).unwrap_or(0.0)
}

fn level_deltas(ensemble: &Ensemble) -> Vec<f64> {
    ensemble
        .particles
        .iter()
        .map(|p| {
            let d = p.state.loglik_fine - p.state.loglik_coarse;
            if d.is_nan() {
                f64::NEG_INFINITY
            } else {
                d
            }
        })
        .collect()
}

fn log_weights(ensemble: &Ensemble) -> Vec<f64> {
    ensemble.particles.iter().map(|p| p.log_weight).collect()
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Option<Vec<f64>> {
        normalized_weights(&log_weights(self))
    }

    pub fn ess(&self) -> Option<f64> {
        ess(&log_weights(self))
    }

    /// Weighted mean of the number of kernels.
    pub fn mean_k(&self) -> Option<f64> {
        let w = self.weights()?;
        Some(w.iter().zip(&self.particles).map(|(w, p)| w * p.state.theta.k() as f64).sum())
    }

    /// `N` equally weighted prior draws targeting level 0.
    pub fn from_prior(prior: &Prior, config: &SmcConfig) -> Self {
        let particles = (0..config.n_particles)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &[TAG_INIT, i as u64]));
                let theta = prior.sample(&mut rng);
                let log_prior = prior.log_prior(&theta);
                Particle {
                    state: ChainState { theta, log_prior, loglik_coarse: 0.0, loglik_fine: 0.0 },
                    log_weight: 0.0,
                    stream: i as u64,
                }
            })
            .collect();
        Self { particles, gamma: 1.0, level: 0, iteration: 0, steps: config.initial_steps }
    }
}

/// Adds `(gamma_new - gamma) (logL_fine - logL_coarse)` to every log-weight.
pub fn reweigh(ensemble: &mut Ensemble, gamma_new: f64) {
    assert!(gamma_new >= ensemble.gamma, "gamma must not decrease");
    let dgamma = gamma_new - ensemble.gamma;
    let deltas = level_deltas(ensemble);
    for (p, d) in ensemble.particles.iter_mut().zip(deltas) {
        p.log_weight = shifted_weight(p.log_weight, dgamma, d);
    }
    ensemble.gamma = gamma_new;
}

/// Largest step keeping `ESS >= zeta * ESS_current`, or 1 when the full step does.
pub fn find_next_gamma(ensemble: &Ensemble, zeta: f64) -> f64 {
    next_gamma(&log_weights(ensemble), &level_deltas(ensemble), ensemble.gamma, zeta)
}

/// [`find_next_gamma`] on raw log-weights and log-likelihood differences.
pub fn next_gamma(log_weights: &[f64], deltas: &[f64], gamma: f64, zeta: f64) -> f64 {
    assert!(gamma < 1.0, "bridge already complete");
    let target = zeta * ess(log_weights).unwrap_or(0.0);
    let gap = |g: f64| ess_after(log_weights, deltas, g - gamma) - target;
    if gap(1.0) >= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (gamma, 1.0);
    while hi - lo > GAMMA_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if gap(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo > gamma {
        lo
    } else {
        hi
    }
}

/// Draws `N` particles with replacement in proportion to their weights and
/// resets the weights to uniform.
pub fn resample_multinomial<R: Rng + ?Sized>(ensemble: &mut Ensemble, rng: &mut R) -> Result<(), SmcError> {
    let w = ensemble.weights().ok_or(SmcError::Degenerate {
        level: ensemble.level,
        iteration: ensemble.iteration,
        records: Vec::new(),
    })?;
    let mut cumulative = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for v in &w {
        acc += v;
        cumulative.push(acc);
    }
    let n = w.len();
    let last_positive = w.iter().rposition(|v| *v > 0.0).unwrap_or(n - 1);
    let particles = (0..n)
        .map(|slot| {
            let u: f64 = rng.random::<f64>() * acc;
            let pick = cumulative.partition_point(|c| *c <= u).min(last_positive);
            let mut p = ensemble.particles[pick].clone();
            p.log_weight = 0.0;
            p.stream = slot as u64;
            p
        })
        .collect();
    ensemble.particles = particles;
    Ok(())
}

/// Spread of the kernel amplitudes across the ensemble, used as the birth
/// amplitude scale.
fn birth_amplitude_scale(ensemble: &Ensemble) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for p in &ensemble.particles {
        for t in &p.state.theta.terms {
            ss += t.amplitude * t.amplitude;
            n += 1;
        }
    }
    if n == 0 {
        for p in &ensemble.particles {
            ss += p.state.theta.a0 * p.state.theta.a0;
        }
        n = ensemble.particles.len();
    }
    (ss / n.max(1) as f64).sqrt().max(BIRTH_AMPLITUDE_FLOOR)
}

/// Bridges the ensemble from the posterior under `coarse` (its cached fine
/// values) to the posterior under `fine`.
pub fn run_level<E: ParticleExecutor>(
    ensemble: &mut Ensemble,
    prior: &Prior,
    coarse: &dyn LogLikelihood,
    fine: &dyn LogLikelihood,
    config: &SmcConfig,
    exec: &E,
) -> Result<BridgeRecord, SmcError> {
    let level = ensemble.level + 1;
    ensemble.level = level;
    ensemble.gamma = 0.0;
    ensemble.iteration = 0;

    let fine_before = fine.solver_calls();
    exec.for_each(&mut ensemble.particles, |_, p| {
        p.state.loglik_coarse = p.state.loglik_fine;
        p.state.loglik_fine = if p.state.log_prior.is_finite() {
            fine.log_likelihood(&p.state.theta)
        } else {
            f64::NEG_INFINITY
        };
    });
    let mut record = BridgeRecord { level, init_calls_fine: fine.solver_calls() - fine_before, steps: Vec::new() };

    let hp = &prior.hp;
    let n = ensemble.len() as f64;
    while ensemble.gamma < 1.0 {
        let iteration = ensemble.iteration;
        if iteration >= config.max_iterations {
            return Err(SmcError::IterationLimit { level, iterations: iteration, records: alloc::vec![record] });
        }
        let degenerate = |record: BridgeRecord| SmcError::Degenerate { level, iteration, records: alloc::vec![record] };
        let Some(ess_prev) = ensemble.ess() else {
            return Err(degenerate(record));
        };
        let (coarse_before, fine_before) = (coarse.solver_calls(), fine.solver_calls());

        let gamma = find_next_gamma(ensemble, hp.zeta);
        reweigh(ensemble, gamma);
        let Some(ess_now) = ensemble.ess() else {
            return Err(degenerate(record));
        };

        let resampled = ess_now < hp.ess_min_frac * n;
        if resampled {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                config.seed,
                &[TAG_RESAMPLE, level as u64, iteration as u64],
            ));
            if resample_multinomial(ensemble, &mut rng).is_err() {
                return Err(degenerate(record));
            }
        }

        let mut steps = ensemble.steps;
        steps.birth_amplitude = birth_amplitude_scale(ensemble);
        let target = TargetDensity::new(prior, coarse, fine, gamma);
        let mut stats: Vec<AcceptanceStats> = alloc::vec![AcceptanceStats::default(); ensemble.len()];
        {
            let mut work: Vec<(&mut Particle, &mut AcceptanceStats)> =
                ensemble.particles.iter_mut().zip(stats.iter_mut()).collect();
            exec.for_each(&mut work, |_, (p, s)| {
                let seed = stream_seed(config.seed, &[TAG_REJUVENATE, level as u64, iteration as u64, p.stream]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                **s = rejuvenate(&mut p.state, &target, &steps, &mut rng, config.n_sweeps);
            });
        }
        let mut acceptance = AcceptanceStats::default();
        for s in stats {
            acceptance += s;
        }
        if config.adapt_steps {
            ensemble.steps = adapt_step_sizes(&steps, &acceptance);
        }
        ensemble.steps.birth_amplitude = steps.birth_amplitude;

        record.steps.push(BridgeStep {
            iteration,
            gamma,
            ess_prev,
            ess: ess_now,
            resampled,
            acceptance,
            steps,
            calls_coarse: coarse.solver_calls() - coarse_before,
            calls_fine: fine.solver_calls() - fine_before,
            mean_k: ensemble.mean_k().unwrap_or(f64::NAN),
        });
        ensemble.iteration += 1;
    }
    Ok(record)
}

/// Continues a hierarchy from an ensemble that targets the posterior under
/// `previous`, bridging through `levels` in order. `observer` sees the
/// ensemble after each completed level.
pub fn continue_hierarchy<E: ParticleExecutor>(
    mut ensemble: Ensemble,
    prior: &Prior,
    previous: &dyn LogLikelihood,
    levels: &[&dyn LogLikelihood],
    config: &SmcConfig,
    exec: &E,
    observer: &mut dyn FnMut(&Ensemble, &BridgeRecord),
) -> Result<(Ensemble, Vec<BridgeRecord>), SmcError> {
    let mut records = Vec::with_capacity(levels.len());
    let mut coarse = previous;
    for &fine in levels {
        let record = run_level(&mut ensemble, prior, coarse, fine, config, exec).map_err(|e| e.prepend(&records))?;
        observer(&ensemble, &record);
        records.push(record);
        coarse = fine;
    }
    Ok((ensemble, records))
}

/// Prior draws bridged through every level in order.
pub fn run_hierarchy<E: ParticleExecutor>(
    prior: &Prior,
    levels: &[&dyn LogLikelihood],
    config: &SmcConfig,
    exec: &E,
    observer: &mut dyn FnMut(&Ensemble, &BridgeRecord),
) -> Result<(Ensemble, Vec<BridgeRecord>), SmcError> {
    let ensemble = Ensemble::from_prior(prior, config);
    continue_hierarchy(ensemble, prior, &FlatLikelihood, levels, config, exec, observer)
}

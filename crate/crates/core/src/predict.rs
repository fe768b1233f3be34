//! Posterior field statistics and predictive sampling from a weighted ensemble.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::field::{field_to_grid, Domain, FieldScale, GridField, Transform};
use crate::likelihood::{sigma_posterior, LevelLikelihood, SigmaPosterior};
use crate::smc::Ensemble;
use crate::solvers::{predict, SensorLayout};
use crate::error::SolverError;

/// Pointwise weighted statistics of the field over the ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub resolution: usize,
    pub scale: FieldScale,
    pub mean: GridField,
    pub variance: GridField,
    /// `(probability, grid)` pairs in the order requested.
    pub quantiles: Vec<(f64, GridField)>,
}

pub const DEFAULT_QUANTILES: [f64; 2] = [0.05, 0.95];

/// Weighted quantile by inversion of the empirical CDF.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i] / total;
        if acc >= p - 1e-12 {
            return values[i];
        }
    }
    values[*order.last().expect("at least one positive weight")]
}

/// Cell statistics on `resolution` cells of the physical field `exp(f)`
/// (cell average taken in log space) or of the log-field itself.
pub fn field_summary(
    ensemble: &Ensemble,
    domain: Domain,
    resolution: usize,
    quantiles: &[f64],
    scale: FieldScale,
) -> Option<FieldSummary> {
    let w = ensemble.weights()?;
    let transform = match scale {
        FieldScale::Log => Transform::Identity,
        FieldScale::Physical => Transform::Exp,
    };
    let grids: Vec<(f64, GridField)> = ensemble
        .particles
        .iter()
        .zip(&w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, w)| (*w, field_to_grid(&p.state.theta, domain, resolution, transform)))
        .collect();
    let cells = domain.cell_count(resolution);
    let mut mean = GridField::uniform(domain, resolution, scale, 0.0);
    let mut variance = mean.clone();
    let mut qs: Vec<(f64, GridField)> = quantiles.iter().map(|&q| (q, mean.clone())).collect();
    let weights: Vec<f64> = grids.iter().map(|(w, _)| *w).collect();
    let mut column = alloc::vec![0.0; grids.len()];
    for c in 0..cells {
        for (v, (_, g)) in column.iter_mut().zip(&grids) {
            *v = g.values[c];
        }
        let m: f64 = column.iter().zip(&weights).map(|(v, w)| v * w).sum();
        mean.values[c] = m;
        variance.values[c] = column.iter().zip(&weights).map(|(v, w)| w * (v - m) * (v - m)).sum();
        for (q, grid) in qs.iter_mut() {
            grid.values[c] = weighted_quantile(&column, &weights, *q);
        }
    }
    Some(FieldSummary { resolution, scale, mean, variance, quantiles: qs })
}

/// Per-particle model-error posteriors at one level, paired with the
/// particle weights.
pub fn sigma_components(
    ensemble: &Ensemble,
    level: &LevelLikelihood<'_>,
) -> Result<Vec<(f64, SigmaPosterior)>, SolverError> {
    let w = ensemble.weights().unwrap_or_default();
    ensemble
        .particles
        .iter()
        .zip(w)
        .filter(|(_, w)| *w > 0.0)
        .map(|(p, w)| {
            let pred = predict(level.model, &p.state.theta, level.upscale, &level.obs.sensors)?;
            Ok((w, sigma_posterior(level.obs, &pred, &level.hp)))
        })
        .collect()
}

/// Draws from the posterior predictive of responses at `sensors`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSamples {
    pub sensors: SensorLayout,
    pub draws: Vec<Vec<f64>>,
}

impl PredictiveSamples {
    pub fn mean(&self) -> Vec<f64> {
        let m = self.draws.len() as f64;
        let mut out = alloc::vec![0.0; self.sensors.len()];
        for d in &self.draws {
            for (o, v) in out.iter_mut().zip(d) {
                *o += v / m;
            }
        }
        out
    }

    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let m = self.draws.len() as f64;
        let mut out = alloc::vec![0.0; self.sensors.len()];
        for d in &self.draws {
            for ((o, v), mu) in out.iter_mut().zip(d).zip(&mean) {
                *o += (v - mu) * (v - mu) / m;
            }
        }
        out
    }

    /// Fraction of draws above `threshold` at each sensor.
    pub fn exceedance(&self, threshold: f64) -> Vec<f64> {
        let m = self.draws.len() as f64;
        let mut counts = alloc::vec![0usize; self.sensors.len()];
        for d in &self.draws {
            for (c, v) in counts.iter_mut().zip(d) {
                *c += usize::from(*v > threshold);
            }
        }
        counts.into_iter().map(|c| c as f64 / m).collect()
    }
}

/// `m` draws: a particle by weight, its response at `sensors` under the
/// level's solver, plus Gaussian error with variance from that particle's
/// model-error posterior.
pub fn predictive_sample<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    level: &LevelLikelihood<'_>,
    sensors: &SensorLayout,
    m: usize,
    rng: &mut R,
) -> Result<PredictiveSamples, SolverError> {
    assert!(m >= 1, "at least one draw");
    let w = ensemble.weights().expect("normalizable weights");
    let n = w.len();
    let mut cache: Vec<Option<(Vec<f64>, SigmaPosterior)>> = alloc::vec![None; n];
    let mut draws = Vec::with_capacity(m);
    for _ in 0..m {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc && *wi > 0.0 {
                pick = i;
                break;
            }
        }
        if cache[pick].is_none() {
            let theta = &ensemble.particles[pick].state.theta;
            let at_obs = predict(level.model, theta, level.upscale, &level.obs.sensors)?;
            let at_new = predict(level.model, theta, level.upscale, sensors)?;
            cache[pick] = Some((at_new.values, sigma_posterior(level.obs, &at_obs, &level.hp)));
        }
        let (mean, post) = cache[pick].as_ref().expect("filled above");
        let sigma = post.sample_sigma(rng);
        draws.push(
            mean.iter()
                .map(|f| {
                    let z: f64 = rng.sample(StandardNormal);
                    f + sigma * z
                })
                .collect(),
        );
    }
    Ok(PredictiveSamples { sensors: sensors.clone(), draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{KernelTerm, ThetaState};
    use crate::rjmcmc::{ChainState, StepSizes};
    use crate::smc::Particle;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn ensemble(thetas: Vec<ThetaState>, log_weights: Vec<f64>) -> Ensemble {
        let particles = thetas
            .into_iter()
            .zip(log_weights)
            .enumerate()
            .map(|(i, (theta, log_weight))| Particle {
                state: ChainState { theta, log_prior: 0.0, loglik_coarse: 0.0, loglik_fine: 0.0 },
                log_weight,
                stream: i as u64,
            })
            .collect();
        Ensemble { particles, gamma: 1.0, level: 1, iteration: 0, steps: StepSizes::default() }
    }

    #[test]
    fn two_constant_fields() {
        let e = ensemble(vec![ThetaState::constant(0.0), ThetaState::constant(1.0)], vec![0.0, 0.0]);
        let s = field_summary(&e, Domain::UnitSquare, 4, &DEFAULT_QUANTILES, FieldScale::Physical).unwrap();
        for v in &s.mean.values {
            assert_relative_eq!(*v, 1.859_140_914_229_522_6, max_relative = 1e-14);
        }
        let one = ensemble(vec![ThetaState::constant(0.0), ThetaState::constant(1.0)], vec![0.0, f64::NEG_INFINITY]);
        let s = field_summary(&one, Domain::UnitSquare, 4, &DEFAULT_QUANTILES, FieldScale::Physical).unwrap();
        assert!(s.mean.values.iter().all(|v| *v == 1.0));
        assert!(s.variance.values.iter().all(|v| *v == 0.0));
        assert!(s.quantiles.iter().all(|(_, g)| g.values.iter().all(|v| *v == 1.0)));
    }

    #[test]
    fn identical_particles_have_no_spread() {
        let theta = ThetaState { a0: 0.1, terms: vec![KernelTerm::new(-0.7, 12.0, [0.3, 0.6])] };
        let e = ensemble(vec![theta.clone(); 3], vec![0.0, -1.0, 2.0]);
        let s = field_summary(&e, Domain::UnitSquare, 8, &DEFAULT_QUANTILES, FieldScale::Physical).unwrap();
        let grid = field_to_grid(&theta, Domain::UnitSquare, 8, Transform::Exp);
        for c in 0..64 {
            assert_relative_eq!(s.mean.values[c], grid.values[c], max_relative = 1e-14);
            assert!(s.variance.values[c] < 1e-28);
            assert_eq!(s.quantiles[0].1.values[c], grid.values[c]);
        }
    }

    #[test]
    fn weighted_quantile_steps() {
        let v = [3.0, 1.0, 2.0];
        let w = [0.2, 0.5, 0.3];
        assert_eq!(weighted_quantile(&v, &w, 0.05), 1.0);
        assert_eq!(weighted_quantile(&v, &w, 0.5), 1.0);
        assert_eq!(weighted_quantile(&v, &w, 0.6), 2.0);
        assert_eq!(weighted_quantile(&v, &w, 0.95), 3.0);
    }
}

//! Forward models mapping a gridded coefficient field to sensor responses.

mod conduct2d;
mod rod;

use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use conduct2d::{solve_conduct2d, solve_conduct2d_nodal, CgSettings, Conduct2dSolution};
pub use rod::{node_temperatures, solve_rod1d};

use crate::error::{ConfigError, SolverError};
use crate::field::{upscale_field, Domain, GridField, Point, ThetaState, Upscale};
use crate::likelihood::ObservationSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub locations: Vec<Point>,
}

impl SensorLayout {
    pub fn new(locations: Vec<Point>) -> Self {
        Self { locations }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn validate(&self, domain: Domain) -> Result<(), ConfigError> {
        if self.is_empty() {
            return Err(ConfigError::Invalid("sensor layout is empty"));
        }
        if self.locations.iter().any(|p| !domain.contains(p)) {
            return Err(ConfigError::Invalid("sensor outside the domain"));
        }
        Ok(())
    }
}

/// Model predictions aligned with a [`SensorLayout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedResponse {
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Rod1d,
    Conduct2d,
}

impl Problem {
    pub fn domain(self) -> Domain {
        match self {
            Problem::Rod1d => Domain::UnitInterval,
            Problem::Conduct2d => Domain::UnitSquare,
        }
    }
}

/// `T = 0` on the left edge and prescribed inward flux on the right edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub flux: f64,
}

impl Default for Boundary {
    fn default() -> Self {
        Self { flux: 1.0 }
    }
}

/// Black-box forward solver at one resolution.
pub trait ForwardModel: Sync {
    fn domain(&self) -> Domain;
    fn resolution(&self) -> usize;
    fn solve(&self, field: &GridField, sensors: &SensorLayout) -> Result<PredictedResponse, SolverError>;
    /// Number of solves performed so far.
    fn calls(&self) -> u64 {
        0
    }
    fn cost_weight(&self) -> f64 {
        1.0
    }
}

/// One level of the solver hierarchy, with a call counter for cost accounting.
#[derive(Debug)]
pub struct SolverLevel {
    pub problem: Problem,
    pub resolution: usize,
    pub boundary: Boundary,
    pub cost_weight: f64,
    pub cg: CgSettings,
    calls: AtomicU64,
}

impl Clone for SolverLevel {
    fn clone(&self) -> Self {
        Self {
            problem: self.problem,
            resolution: self.resolution,
            boundary: self.boundary,
            cost_weight: self.cost_weight,
            cg: self.cg,
            calls: AtomicU64::new(self.calls()),
        }
    }
}

impl SolverLevel {
    pub fn new(problem: Problem, resolution: usize, boundary: Boundary) -> Self {
        Self { problem, resolution, boundary, cost_weight: 1.0, cg: CgSettings::default(), calls: AtomicU64::new(0) }
    }

    pub fn with_cost_weight(mut self, w: f64) -> Self {
        self.cost_weight = w;
        self
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl ForwardModel for SolverLevel {
    fn domain(&self) -> Domain {
        self.problem.domain()
    }

    fn resolution(&self) -> usize {
        self.resolution
    }

    fn solve(&self, field: &GridField, sensors: &SensorLayout) -> Result<PredictedResponse, SolverError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if field.resolution != self.resolution {
            return Err(SolverError::ResolutionMismatch { field: field.resolution, solver: self.resolution });
        }
        match self.problem {
            Problem::Rod1d => solve_rod1d(field, self.boundary.flux, sensors),
            Problem::Conduct2d => solve_conduct2d(field, self.boundary.flux, sensors, self.cg),
        }
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn cost_weight(&self) -> f64 {
        self.cost_weight
    }
}

pub(crate) fn check_conductivities(values: &[f64]) -> Result<(), SolverError> {
    match values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        Some(cell) => Err(SolverError::NonPositiveConductivity { cell, value: values[cell] }),
        None => Ok(()),
    }
}

/// Upscales `theta` to the model's grid and solves.
pub fn predict(
    model: &dyn ForwardModel,
    theta: &ThetaState,
    upscale: Upscale,
    sensors: &SensorLayout,
) -> Result<PredictedResponse, SolverError> {
    let field = upscale_field(theta, model.domain(), model.resolution(), upscale);
    model.solve(&field, sensors)
}

/// Noisy observations generated from a known field.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub observations: ObservationSet,
    pub clean: PredictedResponse,
    /// Mean absolute noiseless response.
    pub mu_a: f64,
    pub noise_std: f64,
}

pub fn make_synthetic<R: Rng + ?Sized>(
    truth: &ThetaState,
    model: &dyn ForwardModel,
    sensors: &SensorLayout,
    noise_frac: f64,
    upscale: Upscale,
    rng: &mut R,
) -> Result<SyntheticData, SolverError> {
    let field = upscale_field(truth, model.domain(), model.resolution(), upscale);
    make_synthetic_from_grid(&field, model, sensors, noise_frac, rng)
}

/// [`make_synthetic`] for a field already reduced to the model's grid.
pub fn make_synthetic_from_grid<R: Rng + ?Sized>(
    field: &GridField,
    model: &dyn ForwardModel,
    sensors: &SensorLayout,
    noise_frac: f64,
    rng: &mut R,
) -> Result<SyntheticData, SolverError> {
    assert!(noise_frac >= 0.0, "noise fraction must be nonnegative");
    let clean = model.solve(field, sensors)?;
    let mu_a = clean.values.iter().map(|v| v.abs()).sum::<f64>() / clean.values.len() as f64;
    let noise_std = noise_frac * mu_a;
    let values = if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite noise std");
        clean.values.iter().map(|v| v + normal.sample(rng)).collect()
    } else {
        clean.values.clone()
    };
    Ok(SyntheticData {
        observations: ObservationSet { sensors: sensors.clone(), values },
        clean,
        mu_a,
        noise_std,
    })
}

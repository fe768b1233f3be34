//! Multi-resolution Bayesian identification of a spatially varying
//! conductivity field.
//!
//! The log-field is a constant plus a variable number of Gaussian kernels.
//! Posteriors under a hierarchy of forward solvers are sampled with adaptive
//! sequential Monte Carlo, using a trans-dimensional Metropolis kernel for
//! rejuvenation.
//!
//! The crate is `no_std` (with `alloc`); threading is injected through
//! [`exec::ParticleExecutor`]. Float math goes through `num_traits::Float`
//! (backed by `libm`); those imports are unused whenever std is linked.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod exec;
pub mod field;
pub mod likelihood;
pub mod predict;
pub mod prior;
pub mod rjmcmc;
pub mod smc;
pub mod solvers;
pub mod special;

pub use error::{ConfigError, SolverError};
pub use field::{Domain, GridField, KernelTerm, ThetaState, Upscale};
pub use likelihood::{LevelLikelihood, LogLikelihood, ObservationSet};
pub use prior::{Hyperparams, Prior};
pub use smc::{Ensemble, SmcConfig, SmcError};
pub use solvers::{Boundary, ForwardModel, Problem, SensorLayout, SolverLevel};

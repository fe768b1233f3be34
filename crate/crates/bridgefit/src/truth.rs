//! Reference log-fields for synthetic experiments.

use bridgefit_core::field::{grid_from_fn, upscale_field, Domain, GridField, KernelTerm, Point, ThetaState};
use bridgefit_core::{Problem, Upscale};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `-exp(-10 x^2 - 2 (y - 1)^2) - exp(-2 (x - 1)^2 - 10 y^2)` on the square.
    #[serde(rename = "two-bumps-2d")]
    TwoBumps2d,
    /// `-exp(-40 (x - 0.3)^2) - exp(-40 (x - 0.7)^2)` on the rod.
    #[serde(rename = "two-bumps-1d")]
    TwoBumps1d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub amplitude: f64,
    pub precision: f64,
    pub center: Vec<f64>,
}

/// The generating log-field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    Preset { name: Preset },
    Kernels {
        #[serde(default)]
        a0: f64,
        kernels: Vec<KernelSpec>,
    },
}

impl Preset {
    pub fn problem(&self) -> Problem {
        match self {
            Preset::TwoBumps2d => Problem::Conduct2d,
            Preset::TwoBumps1d => Problem::Rod1d,
        }
    }

    pub fn log_field(&self, p: &Point) -> f64 {
        let (x, y) = (p[0], p[1]);
        match self {
            Preset::TwoBumps2d => {
                -(-10.0 * x * x - 2.0 * (y - 1.0).powi(2)).exp() - (-2.0 * (x - 1.0).powi(2) - 10.0 * y * y).exp()
            }
            Preset::TwoBumps1d => -(-40.0 * (x - 0.3).powi(2)).exp() - (-40.0 * (x - 0.7).powi(2)).exp(),
        }
    }
}

impl TruthSpec {
    pub fn theta(&self) -> Result<Option<ThetaState>, CliError> {
        match self {
            TruthSpec::Preset { .. } => Ok(None),
            TruthSpec::Kernels { a0, kernels } => {
                let terms = kernels
                    .iter()
                    .map(|k| {
                        let center = match k.center.as_slice() {
                            [x] => [*x, 0.0],
                            [x, y] => [*x, *y],
                            _ => return Err(CliError::Config("kernel center needs 1 or 2 coordinates".into())),
                        };
                        if !(k.precision > 0.0) {
                            return Err(CliError::Config("kernel precision must be positive".into()));
                        }
                        Ok(KernelTerm::new(k.amplitude, k.precision, center))
                    })
                    .collect::<Result<_, _>>()?;
                Ok(Some(ThetaState { a0: *a0, terms }))
            }
        }
    }

    pub fn check_problem(&self, problem: Problem) -> Result<(), CliError> {
        if let TruthSpec::Preset { name } = self {
            if name.problem() != problem {
                return Err(CliError::Config(format!("preset {name:?} does not belong to problem {problem:?}")));
            }
        }
        Ok(())
    }

    /// Physical per-cell coefficients at `resolution`.
    pub fn grid(&self, domain: Domain, resolution: usize, upscale: Upscale) -> Result<GridField, CliError> {
        Ok(match (self, self.theta()?) {
            (_, Some(theta)) => upscale_field(&theta, domain, resolution, upscale),
            (TruthSpec::Preset { name }, None) => grid_from_fn(domain, resolution, upscale, |p| name.log_field(p)),
            (TruthSpec::Kernels { .. }, None) => unreachable!("kernel truths always have a parameterization"),
        })
    }
}

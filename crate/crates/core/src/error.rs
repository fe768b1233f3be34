use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parameter `{name}` out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("nonpositive or non-finite conductivity {value} in cell {cell}")]
    NonPositiveConductivity { cell: usize, value: f64 },
    #[error("field resolution {field} does not match solver resolution {solver}")]
    ResolutionMismatch { field: usize, solver: usize },
    #[error("field dimension {field} does not match solver dimension {solver}")]
    DimensionMismatch { field: usize, solver: usize },
    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("sensor {index} lies outside the domain")]
    SensorOutsideDomain { index: usize },
}

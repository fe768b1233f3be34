use alloc::vec::Vec;

use super::{check_conductivities, PredictedResponse, SensorLayout};
use crate::error::SolverError;
use crate::field::GridField;

/// Steady 1D conduction on `[0, 1]` with `T(0) = 0` and flux `q` at `x = 1`.
///
/// With per-cell constant conductivity the exact solution is piecewise linear:
/// the temperature at cell boundary `m` is `q * sum_{i<m} dx / c_i`.
pub fn solve_rod1d(field: &GridField, q: f64, sensors: &SensorLayout) -> Result<PredictedResponse, SolverError> {
    if field.dim != 1 {
        return Err(SolverError::DimensionMismatch { field: field.dim, solver: 1 });
    }
    check_conductivities(&field.values)?;
    let nodes = node_temperatures(&field.values, q);
    let m = field.resolution;
    let dx = 1.0 / m as f64;
    let values = sensors
        .locations
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let x = p[0];
            if !(0.0..=1.0).contains(&x) {
                return Err(SolverError::SensorOutsideDomain { index });
            }
            let cell = ((x / dx) as usize).min(m - 1);
            Ok(nodes[cell] + q * (x - cell as f64 * dx) / field.values[cell])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictedResponse { values })
}

/// Temperatures at the `m + 1` cell boundaries.
pub fn node_temperatures(conductivity: &[f64], q: f64) -> Vec<f64> {
    let dx = 1.0 / conductivity.len() as f64;
    let mut nodes = Vec::with_capacity(conductivity.len() + 1);
    let mut t = 0.0;
    nodes.push(t);
    for c in conductivity {
        t += q * dx / c;
        nodes.push(t);
    }
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Domain, FieldScale};
    use alloc::vec;
    use approx::assert_relative_eq;

    fn sensors(xs: &[f64]) -> SensorLayout {
        SensorLayout::new(xs.iter().map(|&x| [x, 0.0]).collect())
    }

    #[test]
    fn homogeneous_rod_is_linear() {
        let field = GridField::uniform(Domain::UnitInterval, 8, FieldScale::Physical, 1.0);
        let out = solve_rod1d(&field, 1.0, &sensors(&[0.5, 0.0, 1.0, 0.33])).unwrap();
        assert_relative_eq!(out.values[0], 0.5, max_relative = 1e-14);
        assert_eq!(out.values[1], 0.0);
        assert_relative_eq!(out.values[2], 1.0, max_relative = 1e-14);
        assert_relative_eq!(out.values[3], 0.33, max_relative = 1e-14);
    }

    #[test]
    fn two_cell_harmonic_sum() {
        let field = GridField { dim: 1, resolution: 2, scale: FieldScale::Physical, values: vec![1.0, 2.0] };
        let out = solve_rod1d(&field, 1.0, &sensors(&[0.5, 1.0])).unwrap();
        assert_relative_eq!(out.values[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(out.values[1], 0.75, max_relative = 1e-14);
    }

    #[test]
    fn scaling_conductivity_and_flux_together() {
        let field = GridField { dim: 1, resolution: 3, scale: FieldScale::Physical, values: vec![0.7, 2.0, 1.3] };
        let doubled = GridField { values: field.values.iter().map(|c| 2.0 * c).collect(), ..field.clone() };
        let s = sensors(&[0.1, 0.45, 0.9]);
        let a = solve_rod1d(&field, 1.5, &s).unwrap();
        let b = solve_rod1d(&doubled, 3.0, &s).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let field = GridField { dim: 1, resolution: 2, scale: FieldScale::Physical, values: vec![1.0, 0.0] };
        assert!(matches!(
            solve_rod1d(&field, 1.0, &sensors(&[0.5])),
            Err(SolverError::NonPositiveConductivity { cell: 1, .. })
        ));
    }
}

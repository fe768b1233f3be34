//! Bilinear finite elements for `-div(c grad T) = 0` on the unit square.
//!
//! Boundary conditions: `T = 0` on `x = 0`, uniform flux `q` entering through
//! `x = 1`, insulated top and bottom. The assembled operator is never stored;
//! conjugate gradients apply it element by element.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use super::{check_conductivities, PredictedResponse, SensorLayout};
use crate::error::SolverError;
use crate::field::GridField;

/// Element stiffness for a square Q1 element with unit conductivity; node
/// order is counterclockwise from the lower-left corner.
const STIFFNESS: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 20_000 }
    }
}

/// Nodal temperatures on the `(res + 1)^2` grid, row-major in `y`.
#[derive(Clone, Debug)]
pub struct Conduct2dSolution {
    pub resolution: usize,
    pub nodal: Vec<f64>,
    pub iterations: usize,
    conductivity: Vec<f64>,
}

struct Operator<'a> {
    res: usize,
    conductivity: &'a [f64],
}

impl Operator<'_> {
    fn nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        let w = self.res + 1;
        let n0 = ey * w + ex;
        [n0, n0 + 1, n0 + w + 1, n0 + w]
    }

    /// `out = K x` over all nodes, including Dirichlet rows.
    fn apply_full(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ey in 0..self.res {
            for ex in 0..self.res {
                let c = self.conductivity[ey * self.res + ex];
                let nodes = self.nodes(ex, ey);
                let local = nodes.map(|n| x[n]);
                for (row, &n) in nodes.iter().enumerate() {
                    let k = &STIFFNESS[row];
                    out[n] += c * (k[0] * local[0] + k[1] * local[1] + k[2] * local[2] + k[3] * local[3]);
                }
            }
        }
    }

    fn is_dirichlet(&self, n: usize) -> bool {
        n % (self.res + 1) == 0
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_full(x, out);
        for (n, v) in out.iter_mut().enumerate() {
            if self.is_dirichlet(n) {
                *v = 0.0;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut diag = alloc::vec![0.0; (self.res + 1) * (self.res + 1)];
        for ey in 0..self.res {
            for ex in 0..self.res {
                let c = self.conductivity[ey * self.res + ex];
                for (row, n) in self.nodes(ex, ey).into_iter().enumerate() {
                    diag[n] += c * STIFFNESS[row][row];
                }
            }
        }
        diag
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the conduction problem on the field's uniform grid.
pub fn solve_conduct2d_nodal(field: &GridField, q: f64, settings: CgSettings) -> Result<Conduct2dSolution, SolverError> {
    if field.dim != 2 {
        return Err(SolverError::DimensionMismatch { field: field.dim, solver: 2 });
    }
    check_conductivities(&field.values)?;
    let res = field.resolution;
    let w = res + 1;
    let n = w * w;
    let op = Operator { res, conductivity: &field.values };

    // Consistent load for uniform flux on the x = 1 edge.
    let h = 1.0 / res as f64;
    let mut rhs = alloc::vec![0.0; n];
    for j in 0..res {
        rhs[j * w + res] += 0.5 * q * h;
        rhs[(j + 1) * w + res] += 0.5 * q * h;
    }

    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| if op.is_dirichlet(i) { 0.0 } else { 1.0 / d })
        .collect();

    let mut x = alloc::vec![0.0; n];
    let mut r = rhs.clone();
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(Conduct2dSolution { resolution: res, nodal: x, iterations: 0, conductivity: field.values.clone() });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = alloc::vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    for it in 0..settings.max_iterations {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt() / rhs_norm;
        if residual <= settings.tolerance {
            return Ok(Conduct2dSolution {
                resolution: res,
                nodal: x,
                iterations: it + 1,
                conductivity: field.values.clone(),
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::NotConverged { iterations: settings.max_iterations, residual })
}

impl Conduct2dSolution {
    /// Bilinear interpolation of the nodal solution.
    pub fn temperature_at(&self, x: f64, y: f64) -> f64 {
        let res = self.resolution;
        let w = res + 1;
        let (fx, fy) = (x * res as f64, y * res as f64);
        let ex = (fx as usize).min(res - 1);
        let ey = (fy as usize).min(res - 1);
        let (s, t) = (fx - ex as f64, fy - ey as f64);
        let n0 = ey * w + ex;
        let v = [self.nodal[n0], self.nodal[n0 + 1], self.nodal[n0 + w + 1], self.nodal[n0 + w]];
        (1.0 - s) * (1.0 - t) * v[0] + s * (1.0 - t) * v[1] + s * t * v[2] + (1.0 - s) * t * v[3]
    }

    /// Total heat leaving through the `x = 0` edge (discrete reaction sum).
    pub fn outflow_x0(&self) -> f64 {
        let op = Operator { res: self.resolution, conductivity: &self.conductivity };
        let mut kx = alloc::vec![0.0; self.nodal.len()];
        op.apply_full(&self.nodal, &mut kx);
        -(0..=self.resolution).map(|j| kx[j * (self.resolution + 1)]).sum::<f64>()
    }
}

pub fn solve_conduct2d(
    field: &GridField,
    q: f64,
    sensors: &SensorLayout,
    settings: CgSettings,
) -> Result<PredictedResponse, SolverError> {
    let sol = solve_conduct2d_nodal(field, q, settings)?;
    let values = sensors
        .locations
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(SolverError::SensorOutsideDomain { index });
            }
            Ok(sol.temperature_at(p[0], p[1]))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictedResponse { values })
}

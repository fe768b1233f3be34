//! Kernel expansion of the unknown log-coefficient field.
//!
//! A field is a constant plus a variable number of isotropic Gaussian bumps,
//! `f(x) = a0 + sum_j a_j exp(-tau_j |x - x_j|^2)`. The representation is
//! independent of any solver grid; [`field_to_grid`] maps it to per-cell
//! constants at a requested resolution by exact cell averaging.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::special::{erf_diff, gauss_legendre};

/// A point in the unit interval or unit square. In one dimension the second
/// coordinate is always zero.
pub type Point = [f64; 2];

/// Spatial domain of the unknown field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    UnitInterval,
    UnitSquare,
}

impl Domain {
    pub fn dim(self) -> usize {
        match self {
            Domain::UnitInterval => 1,
            Domain::UnitSquare => 2,
        }
    }

    /// Length or area of the domain.
    pub fn measure(self) -> f64 {
        1.0
    }

    pub fn contains(self, p: &Point) -> bool {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            Domain::UnitInterval => inside(p[0]) && p[1] == 0.0,
            Domain::UnitSquare => inside(p[0]) && inside(p[1]),
        }
    }

    /// Number of cells of a uniform grid with `resolution` cells per side.
    pub fn cell_count(self, resolution: usize) -> usize {
        match self {
            Domain::UnitInterval => resolution,
            Domain::UnitSquare => resolution * resolution,
        }
    }
}

/// Functional form of a kernel term. Only isotropic Gaussians for now.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    #[default]
    Gaussian,
}

impl KernelShape {
    fn eval(self, precision: f64, dist2: f64) -> f64 {
        match self {
            KernelShape::Gaussian => (-precision * dist2).exp(),
        }
    }

    /// Mean over `[lo, hi]` of the 1D factor `exp(-precision (t - center)^2)`.
    fn axis_mean(self, precision: f64, center: f64, lo: f64, hi: f64) -> f64 {
        match self {
            KernelShape::Gaussian => {
                let root = precision.sqrt();
                let integral = 0.5 * core::f64::consts::PI.sqrt() / root
                    * erf_diff(root * (lo - center), root * (hi - center));
                integral / (hi - lo)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub amplitude: f64,
    pub precision: f64,
    pub center: Point,
    #[serde(default, skip_serializing_if = "is_gaussian")]
    pub shape: KernelShape,
}

fn is_gaussian(shape: &KernelShape) -> bool {
    *shape == KernelShape::Gaussian
}

impl KernelTerm {
    pub fn new(amplitude: f64, precision: f64, center: Point) -> Self {
        Self { amplitude, precision, center, shape: KernelShape::Gaussian }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.amplitude * self.shape.eval(self.precision, dist2(x, &self.center))
    }
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Variable-dimension field parameterization: constant term plus `k` kernels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThetaState {
    pub a0: f64,
    pub terms: Vec<KernelTerm>,
}

impl ThetaState {
    pub fn constant(a0: f64) -> Self {
        Self { a0, terms: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.terms.len()
    }

    /// Number of real parameters: `1 + (2 + dim) k`.
    pub fn dimension(&self, domain: Domain) -> usize {
        1 + (2 + domain.dim()) * self.k()
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = f64> + '_ {
        core::iter::once(self.a0).chain(self.terms.iter().map(|t| t.amplitude))
    }
}

/// Field value at `x`.
pub fn eval_field(theta: &ThetaState, x: &Point) -> f64 {
    theta.a0 + theta.terms.iter().map(|t| t.eval(x)).sum::<f64>()
}

/// Axis-aligned box; in one dimension only the first coordinate is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub lo: Point,
    pub hi: Point,
}

impl Cell {
    /// Cell `(ix, iy)` of the uniform grid with `resolution` cells per side.
    pub fn of_grid(domain: Domain, resolution: usize, ix: usize, iy: usize) -> Self {
        let h = 1.0 / resolution as f64;
        match domain {
            Domain::UnitInterval => Cell { lo: [ix as f64 * h, 0.0], hi: [(ix + 1) as f64 * h, 0.0] },
            Domain::UnitSquare => Cell {
                lo: [ix as f64 * h, iy as f64 * h],
                hi: [(ix + 1) as f64 * h, (iy + 1) as f64 * h],
            },
        }
    }
}

/// Exact mean of the field over `cell`, using the separable erf form.
pub fn cell_average(theta: &ThetaState, domain: Domain, cell: &Cell) -> f64 {
    let mut total = theta.a0;
    for t in &theta.terms {
        let mut factor = t.shape.axis_mean(t.precision, t.center[0], cell.lo[0], cell.hi[0]);
        if domain.dim() == 2 {
            factor *= t.shape.axis_mean(t.precision, t.center[1], cell.lo[1], cell.hi[1]);
        }
        total += t.amplitude * factor;
    }
    total
}

/// Whether grid values hold the log-field or the physical (exponentiated) field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldScale {
    Log,
    Physical,
}

/// Transform applied after cell averaging in log space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Exp,
}

/// How a continuous log-field is reduced to per-cell physical values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upscale {
    /// Average the log-field over the cell, then exponentiate.
    #[default]
    LogMean,
    /// Average the physical field `exp(f)` over the cell (quadrature).
    PhysMean,
}

/// Per-cell field values on a uniform grid, stored row-major (`iy * res + ix`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub dim: usize,
    pub resolution: usize,
    pub scale: FieldScale,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn uniform(domain: Domain, resolution: usize, scale: FieldScale, value: f64) -> Self {
        Self { dim: domain.dim(), resolution, scale, values: alloc::vec![value; domain.cell_count(resolution)] }
    }

    pub fn domain(&self) -> Domain {
        if self.dim == 1 {
            Domain::UnitInterval
        } else {
            Domain::UnitSquare
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.resolution + ix]
    }

    /// Averages `factor`-sized blocks of cells into a coarser grid.
    pub fn coarsen(&self, factor: usize) -> GridField {
        assert!(factor >= 1 && self.resolution % factor == 0);
        let res = self.resolution / factor;
        let domain = self.domain();
        let mut values = alloc::vec![0.0; domain.cell_count(res)];
        let ny = if self.dim == 2 { self.resolution } else { 1 };
        for iy in 0..ny {
            for ix in 0..self.resolution {
                let (cx, cy) = (ix / factor, iy / factor);
                values[cy * res + cx] += self.get(ix, iy);
            }
        }
        let per = (factor as f64).powi(self.dim as i32);
        values.iter_mut().for_each(|v| *v /= per);
        GridField { dim: self.dim, resolution: res, scale: self.scale, values }
    }
}

/// Cell averages of the log-field on a uniform grid, optionally exponentiated.
pub fn field_to_grid(theta: &ThetaState, domain: Domain, resolution: usize, transform: Transform) -> GridField {
    assert!(resolution >= 1, "grid resolution must be positive");
    let res = resolution;
    let ny = if domain.dim() == 2 { res } else { 1 };
    let h = 1.0 / res as f64;
    let mut values = alloc::vec![theta.a0; domain.cell_count(res)];
    let mut mx = alloc::vec![0.0; res];
    let mut my = alloc::vec![1.0; ny];
    for t in &theta.terms {
        for (i, m) in mx.iter_mut().enumerate() {
            *m = t.amplitude * t.shape.axis_mean(t.precision, t.center[0], i as f64 * h, (i + 1) as f64 * h);
        }
        if domain.dim() == 2 {
            for (j, m) in my.iter_mut().enumerate() {
                *m = t.shape.axis_mean(t.precision, t.center[1], j as f64 * h, (j + 1) as f64 * h);
            }
        }
        for (j, &fy) in my.iter().enumerate() {
            let row = &mut values[j * res..(j + 1) * res];
            for (v, &fx) in row.iter_mut().zip(&mx) {
                *v += fx * fy;
            }
        }
    }
    let scale = match transform {
        Transform::Identity => FieldScale::Log,
        Transform::Exp => {
            values.iter_mut().for_each(|v| *v = v.exp());
            FieldScale::Physical
        }
    };
    GridField { dim: domain.dim(), resolution: res, scale, values }
}

const PHYS_MEAN_NODES: usize = 8;

/// Physical per-cell coefficients (`exp` of the log-field) under `upscale`.
pub fn upscale_field(theta: &ThetaState, domain: Domain, resolution: usize, upscale: Upscale) -> GridField {
    match upscale {
        Upscale::LogMean => field_to_grid(theta, domain, resolution, Transform::Exp),
        Upscale::PhysMean => grid_from_fn(domain, resolution, upscale, |p| eval_field(theta, p)),
    }
}

/// Per-cell physical coefficients of an arbitrary log-field `f`, averaged
/// with tensor Gauss-Legendre quadrature.
pub fn grid_from_fn(domain: Domain, resolution: usize, upscale: Upscale, f: impl Fn(&Point) -> f64) -> GridField {
    let (nodes, weights) = gauss_legendre(PHYS_MEAN_NODES);
    let res = resolution;
    let ny = if domain.dim() == 2 { res } else { 1 };
    let mut values = Vec::with_capacity(domain.cell_count(res));
    for iy in 0..ny {
        for ix in 0..res {
            let cell = Cell::of_grid(domain, res, ix, iy);
            values.push(match upscale {
                Upscale::LogMean => quadrature_mean(domain, &cell, &nodes, &weights, &f).exp(),
                Upscale::PhysMean => quadrature_mean(domain, &cell, &nodes, &weights, |p| f(p).exp()),
            });
        }
    }
    GridField { dim: domain.dim(), resolution: res, scale: FieldScale::Physical, values }
}

fn quadrature_mean(domain: Domain, cell: &Cell, nodes: &[f64], weights: &[f64], f: impl Fn(&Point) -> f64) -> f64 {
    let map = |z: f64, lo: f64, hi: f64| 0.5 * (hi - lo) * z + 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (zx, wx) in nodes.iter().zip(weights) {
        let x = map(*zx, cell.lo[0], cell.hi[0]);
        if domain.dim() == 1 {
            acc += wx * f(&[x, 0.0]);
        } else {
            for (zy, wy) in nodes.iter().zip(weights) {
                let y = map(*zy, cell.lo[1], cell.hi[1]);
                acc += wx * wy * f(&[x, y]);
            }
        }
    }
    acc / 2f64.powi(domain.dim() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn empty_expansion_is_zero() {
        let theta = ThetaState::constant(0.0);
        assert_eq!(eval_field(&theta, &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn kernel_at_center_and_unit_distance() {
        let theta = ThetaState { a0: 0.0, terms: vec![KernelTerm::new(1.0, 7.3, [0.4, 0.2])] };
        assert_eq!(eval_field(&theta, &[0.4, 0.2]), 1.0);
        let theta = ThetaState { a0: 0.0, terms: vec![KernelTerm::new(1.0, 1.0, [0.0, 0.0])] };
        assert_relative_eq!(eval_field(&theta, &[0.6, 0.8]), 0.367_879_441_171_442_3, max_relative = 1e-14);
    }

    #[test]
    fn dimension_counts() {
        let mut theta = ThetaState::constant(0.0);
        assert_eq!(theta.dimension(Domain::UnitSquare), 1);
        for _ in 0..5 {
            theta.terms.push(KernelTerm::new(1.0, 1.0, [0.5, 0.5]));
        }
        assert_eq!(theta.dimension(Domain::UnitSquare), 21);
        theta.terms.truncate(3);
        theta.terms.iter_mut().for_each(|t| t.center[1] = 0.0);
        assert_eq!(theta.dimension(Domain::UnitInterval), 10);
    }

    #[test]
    fn constant_field_cell_average() {
        let theta = ThetaState::constant(-2.5);
        let cell = Cell::of_grid(Domain::UnitSquare, 4, 1, 3);
        assert_eq!(cell_average(&theta, Domain::UnitSquare, &cell), -2.5);
    }

    #[test]
    fn centered_kernel_over_wide_cell() {
        // Mean of exp(-t^2) over [-1, 1] is (sqrt(pi)/2) erf(1); shift into D by
        // scaling: precision 4 on [0, 1] centered at 0.5 is the same integral.
        let theta = ThetaState { a0: 0.0, terms: vec![KernelTerm::new(1.0, 4.0, [0.5, 0.0])] };
        let cell = Cell { lo: [0.0, 0.0], hi: [1.0, 0.0] };
        assert_relative_eq!(cell_average(&theta, Domain::UnitInterval, &cell), 0.746_824_132_812_427, max_relative = 1e-13);
        let grid = field_to_grid(&theta, Domain::UnitInterval, 1, Transform::Identity);
        assert_relative_eq!(grid.values[0], 0.746_824_132_812_427, max_relative = 1e-13);
    }

    #[test]
    fn symmetric_cells_have_equal_averages() {
        let theta = ThetaState { a0: 0.1, terms: vec![KernelTerm::new(-0.7, 30.0, [0.5, 0.5])] };
        let left = Cell { lo: [0.2, 0.4], hi: [0.3, 0.6] };
        let right = Cell { lo: [0.7, 0.4], hi: [0.8, 0.6] };
        assert_relative_eq!(
            cell_average(&theta, Domain::UnitSquare, &left),
            cell_average(&theta, Domain::UnitSquare, &right),
            max_relative = 1e-14
        );
    }

    #[test]
    fn exp_of_zero_field_is_one() {
        let grid = field_to_grid(&ThetaState::constant(0.0), Domain::UnitSquare, 5, Transform::Exp);
        assert_eq!(grid.values.len(), 25);
        assert!(grid.values.iter().all(|&v| v == 1.0));
        assert_eq!(grid.scale, FieldScale::Physical);
    }

    #[test]
    fn nested_means_are_consistent() {
        let theta = ThetaState {
            a0: 0.3,
            terms: vec![KernelTerm::new(1.2, 15.0, [0.3, 0.8]), KernelTerm::new(-0.4, 200.0, [0.61, 0.12])],
        };
        for domain in [Domain::UnitInterval, Domain::UnitSquare] {
            let mut theta = theta.clone();
            if domain == Domain::UnitInterval {
                theta.terms.iter_mut().for_each(|t| t.center[1] = 0.0);
            }
            let coarse = field_to_grid(&theta, domain, 8, Transform::Identity);
            let fine = field_to_grid(&theta, domain, 32, Transform::Identity);
            for (a, b) in coarse.values.iter().zip(&fine.coarsen(4).values) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn phys_mean_of_constant_matches_log_mean() {
        let theta = ThetaState::constant(0.4);
        let a = upscale_field(&theta, Domain::UnitSquare, 4, Upscale::PhysMean);
        let b = upscale_field(&theta, Domain::UnitSquare, 4, Upscale::LogMean);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    #[test]
    fn phys_mean_dominates_log_mean() {
        // Jensen: mean of exp >= exp of mean.
        let theta = ThetaState { a0: 0.0, terms: vec![KernelTerm::new(2.0, 50.0, [0.5, 0.5])] };
        let a = upscale_field(&theta, Domain::UnitSquare, 2, Upscale::PhysMean);
        let b = upscale_field(&theta, Domain::UnitSquare, 2, Upscale::LogMean);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(x >= y);
        }
    }
}

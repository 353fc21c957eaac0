//! Uniform 1-D grids and the fields that live on them.
//!
//! All quadrature is the trapezoidal rule and all gradients use the same
//! stencil: central differences at interior nodes, second-order one-sided
//! differences at the two boundary nodes.

use crate::error::{FlowError, Result};

/// Default tolerance for asserting that a grid function is a probability density.
pub const MASS_TOL: f64 = 1e-8;

/// Uniform grid `x_i = lower + i*h`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(FlowError::InvalidGrid(format!("need n >= 3 nodes, got {n}")));
        }
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(FlowError::InvalidGrid(format!(
                "need finite lower < upper, got [{lower}, {upper}]"
            )));
        }
        let h = (upper - lower) / (n - 1) as f64;
        Ok(Self { lower, upper, n, h })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoidal weights: `h` at interior nodes, `h/2` at the ends.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.n];
        w[0] = 0.5 * self.h;
        w[self.n - 1] = 0.5 * self.h;
        w
    }

    /// Trapezoidal integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let interior: f64 = values[1..self.n - 1].iter().sum();
        self.h * (interior + 0.5 * (values[0] + values[self.n - 1]))
    }

    /// Gradient with the shared stencil (see module docs).
    pub fn gradient(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.n);
        let n = self.n;
        let h = self.h;
        let mut g = vec![0.0; n];
        for i in 1..n - 1 {
            g[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
        }
        g[0] = (4.0 * (values[1] - values[0]) - (values[2] - values[0])) / (2.0 * h);
        g[n - 1] = (4.0 * (values[n - 1] - values[n - 2]) - (values[n - 1] - values[n - 3])) / (2.0 * h);
        g
    }

    /// Cubic (Catmull-Rom) interpolation of nodal values at `x`.
    ///
    /// Points outside the window are clamped to the boundary value.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.n;
        if x <= self.lower {
            return values[0];
        }
        if x >= self.upper {
            return values[n - 1];
        }
        let s = (x - self.lower) / self.h;
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let p1 = values[i];
        let p2 = values[i + 1];
        let p0 = if i > 0 { values[i - 1] } else { 2.0 * p1 - p2 };
        let p3 = if i + 2 < n { values[i + 2] } else { 2.0 * p2 - p1 };
        let t2 = t * t;
        let t3 = t2 * t;
        0.5 * (2.0 * p1
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3)
    }

    /// Linear interpolation of nodal values at `x`, clamped at the ends.
    pub fn interpolate_linear(&self, values: &[f64], x: f64) -> f64 {
        if x <= self.lower {
            return values[0];
        }
        if x >= self.upper {
            return values[self.n - 1];
        }
        let s = (x - self.lower) / self.h;
        let i = (s.floor() as usize).min(self.n - 2);
        let t = s - i as f64;
        values[i] * (1.0 - t) + values[i + 1] * t
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(FlowError::GridMismatch(format!(
                "[{}, {}] n={} vs [{}, {}] n={}",
                self.lower, self.upper, self.n, other.lower, other.upper, other.n
            )))
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n {
            Ok(())
        } else {
            Err(FlowError::LengthMismatch {
                expected: self.n,
                actual: len,
            })
        }
    }
}

/// Nonnegative density heights on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Wraps nonnegative finite values; mass is not checked.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        let bad: Vec<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !(v.is_finite() && **v >= 0.0))
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(FlowError::InvalidParameter {
                name: "values",
                reason: format!("density must be finite and nonnegative, bad nodes {bad:?}"),
            });
        }
        Ok(Self { grid, values })
    }

    /// Like [`GridDensity::new`] but also requires `|mass - 1| <= mass_tol`.
    pub fn probability(grid: Grid, values: Vec<f64>, mass_tol: f64) -> Result<Self> {
        let d = Self::new(grid, values)?;
        let mass = d.mass();
        if (mass - 1.0).abs() > mass_tol {
            return Err(FlowError::InvalidParameter {
                name: "values",
                reason: format!("mass {mass} differs from 1 by more than {mass_tol:e}"),
            });
        }
        Ok(d)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Rescaled copy with unit trapezoidal mass.
    pub fn normalized(&self) -> Result<Self> {
        let mass = self.mass();
        if !(mass > 0.0) {
            return Err(FlowError::InvalidParameter {
                name: "values",
                reason: "cannot normalize a density with zero mass".into(),
            });
        }
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v / mass).collect(),
        })
    }
}

/// Ratio `v = u / rho_d` of a density to the target density.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioField {
    grid: Grid,
    values: Vec<f64>,
}

impl RatioField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FlowError::InvalidParameter {
                name: "ratio",
                reason: format!("ratio must be finite and nonnegative, node {i} = {}", values[i]),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    /// `u / rho_d` node-wise; `rho_d` must be positive everywhere.
    pub fn from_densities(u: &GridDensity, rho_d: &GridDensity) -> Result<Self> {
        u.grid.check_same(&rho_d.grid)?;
        check_positive(rho_d)?;
        let values = u
            .values
            .iter()
            .zip(&rho_d.values)
            .map(|(a, b)| a / b)
            .collect();
        Self::new(u.grid, values)
    }

    /// `rho_d * v` as a density.
    pub fn to_density(&self, rho_d: &GridDensity) -> Result<GridDensity> {
        self.grid.check_same(&rho_d.grid)?;
        GridDensity::new(
            self.grid,
            self.values
                .iter()
                .zip(&rho_d.values)
                .map(|(v, r)| v * r)
                .collect(),
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫ v dμ_d` by the trapezoidal rule.
    pub fn weighted_mass(&self, rho_d: &GridDensity) -> f64 {
        weighted_integral(&self.grid, &self.values, rho_d.values())
    }
}

/// Drift values `b(x_i)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSample {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorFieldSample {
    pub(crate) fn new(grid: Grid, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `∫ a dμ_d = Σ w_i ρ_d,i a_i` with trapezoidal weights.
pub fn weighted_integral(grid: &Grid, a: &[f64], rho_d: &[f64]) -> f64 {
    let prod: Vec<f64> = a.iter().zip(rho_d).map(|(x, r)| x * r).collect();
    grid.integrate(&prod)
}

pub(crate) fn check_positive(rho_d: &GridDensity) -> Result<()> {
    let nodes: Vec<usize> = rho_d
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v > 0.0))
        .map(|(i, _)| i)
        .collect();
    if nodes.is_empty() {
        Ok(())
    } else {
        Err(FlowError::PositivityViolation { nodes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_inverted_grids() {
        assert!(Grid::new(0.0, 1.0, 2).is_err());
        assert!(Grid::new(1.0, 0.0, 10).is_err());
        assert!(Grid::new(0.0, f64::NAN, 10).is_err());
        let g = Grid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.node(4), 1.0);
    }

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let g = Grid::new(0.0, 2.0, 11).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((g.integrate(&f) - 8.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_is_exact_for_quadratics() {
        let g = Grid::new(-1.0, 2.0, 31).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|x| x * x - x).collect();
        let d = g.gradient(&f);
        for (x, di) in g.nodes().iter().zip(&d) {
            assert!((di - (2.0 * x - 1.0)).abs() < 1e-12, "{x} {di}");
        }
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics_in_interior() {
        let g = Grid::new(0.0, 1.0, 21).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        for &x in &[0.11, 0.37, 0.5, 0.93] {
            assert!((g.interpolate(&f, x) - x * x).abs() < 1e-12);
        }
        assert_eq!(g.interpolate(&f, -3.0), 0.0);
        assert_eq!(g.interpolate_linear(&f, 5.0), 1.0);
    }

    #[test]
    fn density_validation() {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        assert!(GridDensity::new(g, vec![1.0, -1.0, 1.0]).is_err());
        assert!(GridDensity::new(g, vec![1.0, 1.0]).is_err());
        assert!(GridDensity::probability(g, vec![1.0, 1.0, 1.0], 1e-12).is_ok());
        assert!(GridDensity::probability(g, vec![2.0, 2.0, 2.0], 1e-8).is_err());
    }
}

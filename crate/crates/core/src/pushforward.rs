//! Densities transported by `T = I + εξ` on a 1-D grid.
//!
//! `ξ` is extended between nodes by the same Catmull-Rom cubic used for
//! densities, so `T` is C¹ and its Jacobian is the exact derivative of the
//! interpolant. The inverse at each node is found by bisection on the whole
//! window.

use crate::divergence::{functional_derivative_j, jsd};
use crate::error::{FlowError, Result};
use crate::grid::{Grid, GridDensity};

/// Bisection stops once the bracket is this narrow.
pub const INVERSE_TOL: f64 = 1e-12;

/// Catmull-Rom control values for cell `i`, extrapolated linearly at the ends.
fn controls(values: &[f64], i: usize) -> [f64; 4] {
    let n = values.len();
    let p1 = values[i];
    let p2 = values[i + 1];
    let p0 = if i > 0 { values[i - 1] } else { 2.0 * p1 - p2 };
    let p3 = if i + 2 < n { values[i + 2] } else { 2.0 * p2 - p1 };
    [p0, p1, p2, p3]
}

/// Coefficients of `dξ/dt = a + b t + c t²` on one cell.
fn slope_coefficients([p0, p1, p2, p3]: [f64; 4]) -> (f64, f64, f64) {
    (
        0.5 * (p2 - p0),
        2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3,
        1.5 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3),
    )
}

fn locate(grid: &Grid, x: f64) -> (usize, f64) {
    let s = ((x - grid.lower()) / grid.spacing()).max(0.0);
    let i = (s.floor() as usize).min(grid.len() - 2);
    (i, (s - i as f64).min(1.0))
}

/// `ξ'(x)` from the cubic interpolant.
fn slope(grid: &Grid, xi: &[f64], x: f64) -> f64 {
    let (i, t) = locate(grid, x);
    let (a, b, c) = slope_coefficients(controls(xi, i));
    (a + t * (b + t * c)) / grid.spacing()
}

fn check_map(grid: &Grid, xi: &[f64], eps: f64) -> Result<()> {
    grid.check_len(xi.len())?;
    if !eps.is_finite() {
        return Err(FlowError::InvalidParameter {
            name: "eps",
            reason: format!("must be finite, got {eps}"),
        });
    }
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(FlowError::InvalidParameter {
            name: "xi",
            reason: "non-finite value".into(),
        });
    }
    let h = grid.spacing();
    // minimum of 1 + ε ξ' over each cell: endpoints and the vertex of the quadratic
    let bad: Vec<usize> = (0..xi.len() - 1)
        .filter(|&i| {
            let (a, b, c) = slope_coefficients(controls(xi, i));
            let slope = |t: f64| 1.0 + eps * (a + t * (b + t * c)) / h;
            let mut lowest = slope(0.0).min(slope(1.0));
            if c != 0.0 {
                let vertex = -b / (2.0 * c);
                if vertex > 0.0 && vertex < 1.0 {
                    lowest = lowest.min(slope(vertex));
                }
            }
            !(lowest > 0.0)
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(FlowError::InvalidTransport { nodes: bad })
    }
}

fn transport(grid: &Grid, xi: &[f64], eps: f64, x: f64) -> f64 {
    x + eps * grid.interpolate(xi, x)
}

fn invert(grid: &Grid, xi: &[f64], eps: f64, y: f64) -> f64 {
    let mut lo = grid.lower();
    let mut hi = grid.upper();
    while hi - lo > INVERSE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if transport(grid, xi, eps, mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Density of `(I + εξ)_# ρ`: `ρ(x) / (1 + εξ'(x))` at `x = (I + εξ)⁻¹(y)`.
///
/// Nodes outside the image of the window receive zero.
pub fn pushforward_density(rho: &GridDensity, xi: &[f64], eps: f64) -> Result<GridDensity> {
    let grid = *rho.grid();
    check_map(&grid, xi, eps)?;
    if eps == 0.0 || xi.iter().all(|x| *x == 0.0) {
        return Ok(rho.clone());
    }
    let left = transport(&grid, xi, eps, grid.lower());
    let right = transport(&grid, xi, eps, grid.upper());
    let values = grid
        .nodes()
        .into_iter()
        .map(|y| {
            if y < left || y > right {
                return 0.0;
            }
            let x = invert(&grid, xi, eps, y);
            let r = grid.interpolate(rho.values(), x).max(0.0);
            r / (1.0 + eps * slope(&grid, xi, x))
        })
        .collect();
    GridDensity::new(grid, values)
}

/// First-variation check for `J = JSD(·, ρ_d)` along `ξ`.
///
/// Returns `((J(ρ^ξ_ε) - J(ρ))/ε, ∫ ∇(δJ/δρ)·ξ ρ dy)`.
pub fn directional_derivative_check(
    rho: &GridDensity,
    rho_d: &GridDensity,
    xi: &[f64],
    eps: f64,
) -> Result<(f64, f64)> {
    rho.grid().check_same(rho_d.grid())?;
    if !(eps > 0.0) {
        return Err(FlowError::InvalidParameter {
            name: "eps",
            reason: format!("must be positive, got {eps}"),
        });
    }
    let grid = *rho.grid();
    let moved = pushforward_density(rho, xi, eps)?;
    let lhs = (jsd(&moved, rho_d)? - jsd(rho, rho_d)?) / eps;

    let dj = functional_derivative_j(rho, rho_d)?;
    let grad = grid.gradient(&dj);
    let integrand: Vec<f64> = (0..grid.len())
        .map(|i| {
            let weight = xi[i] * rho.values()[i];
            if weight == 0.0 {
                0.0
            } else {
                grad[i] * weight
            }
        })
        .collect();
    if integrand.iter().any(|x| !x.is_finite()) {
        return Err(FlowError::InvalidParameter {
            name: "rho",
            reason: "δJ/δρ is not differentiable where ξρ is nonzero".into(),
        });
    }
    Ok((lhs, grid.integrate(&integrand)))
}

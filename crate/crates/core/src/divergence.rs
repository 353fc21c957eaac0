//! Divergences between grid densities and the first variation of the
//! Jensen-Shannon objective `J(ρ) = JSD(ρ, ρ_d)`.

use std::f64::consts::LN_2;

use crate::error::Result;
use crate::grid::{check_positive, GridDensity};

/// `∫ p ln(p/q)` with `0 ln 0 = 0`; `+∞` when `p > 0` somewhere `q = 0`.
pub fn kl_divergence(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.grid().check_same(q.grid())?;
    let mut integrand = Vec::with_capacity(p.values().len());
    for (&a, &b) in p.values().iter().zip(q.values()) {
        if a == 0.0 {
            integrand.push(0.0);
        } else if b == 0.0 {
            return Ok(f64::INFINITY);
        } else {
            integrand.push(a * (a / b).ln());
        }
    }
    Ok(p.grid().integrate(&integrand))
}

/// `p ln(2p/(p+q))` integrand without forming the midpoint explicitly.
fn half_kl_to_midpoint(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a == 0.0 {
                0.0
            } else {
                a * (2.0 * a / (a + b)).ln()
            }
        })
        .collect()
}

/// Jensen-Shannon divergence `½KL(p‖m) + ½KL(q‖m)`, `m = (p+q)/2`.
///
/// Finite for every admissible pair and symmetric to the last bit.
pub fn jsd(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.grid().check_same(q.grid())?;
    let grid = p.grid();
    let a = grid.integrate(&half_kl_to_midpoint(p.values(), q.values()));
    let b = grid.integrate(&half_kl_to_midpoint(q.values(), p.values()));
    Ok(0.5 * a + 0.5 * b)
}

/// `∫ |p - q|` by the trapezoidal rule.
pub fn l1_distance(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.grid().check_same(q.grid())?;
    let diff: Vec<f64> = p
        .values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(p.grid().integrate(&diff))
}

/// Total variation distance, `½‖p - q‖₁`.
pub fn tv_distance(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// `δJ/δρ = ½ ln(2ρ / (ρ_d + ρ))` node-wise; `-∞` where `ρ = 0`.
pub fn functional_derivative_j(rho: &GridDensity, rho_d: &GridDensity) -> Result<Vec<f64>> {
    rho.grid().check_same(rho_d.grid())?;
    check_positive(rho_d)?;
    Ok(rho
        .values()
        .iter()
        .zip(rho_d.values())
        .map(|(&r, &d)| {
            if r == 0.0 {
                f64::NEG_INFINITY
            } else {
                0.5 * (2.0 * r / (d + r)).ln()
            }
        })
        .collect())
}

/// Upper end of the JSD range.
pub const JSD_MAX: f64 = LN_2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::FlowError;

    fn gauss(mu: f64, s: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x - mu).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn grid() -> Grid {
        Grid::new(-10.0, 10.0, 2001).unwrap()
    }

    #[test]
    fn kl_identity_and_gaussian_shift() {
        let g = grid();
        let p = GridDensity::from_fn(g, gauss(0.0, 1.0)).unwrap();
        let q = GridDensity::from_fn(g, gauss(1.0, 1.0)).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!((kl_divergence(&p, &q).unwrap() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn kl_infinite_sentinel() {
        let g = Grid::new(0.0, 1.0, 5).unwrap();
        let p = GridDensity::new(g, vec![1.0; 5]).unwrap();
        let q = GridDensity::new(g, vec![1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(kl_divergence(&p, &q).unwrap(), f64::INFINITY);
        // zero p where q is zero contributes nothing
        assert!(kl_divergence(&q, &p).unwrap().is_finite());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let p = GridDensity::new(Grid::new(0.0, 1.0, 5).unwrap(), vec![1.0; 5]).unwrap();
        let q = GridDensity::new(Grid::new(0.0, 2.0, 5).unwrap(), vec![0.5; 5]).unwrap();
        for r in [
            kl_divergence(&p, &q),
            jsd(&p, &q),
            tv_distance(&p, &q),
            l1_distance(&p, &q),
        ] {
            assert!(matches!(r, Err(FlowError::GridMismatch(_))));
        }
    }

    #[test]
    fn disjoint_supports_saturate_jsd_and_tv() {
        let g = Grid::new(0.0, 4.0, 401).unwrap();
        // two hat functions of unit mass on [0.5,1.5] and [2.5,3.5]
        let hat = |c: f64| move |x: f64| (1.0 - (x - c).abs()).max(0.0) / 1.0;
        let p = GridDensity::from_fn(g, hat(1.0)).unwrap();
        let q = GridDensity::from_fn(g, hat(3.0)).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-12);
        assert!((jsd(&p, &q).unwrap() - LN_2).abs() < 1e-8);
        assert!((tv_distance(&p, &q).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn functional_derivative_closed_forms() {
        let g = grid();
        let d = GridDensity::from_fn(g, gauss(0.0, 1.0)).unwrap();
        assert!(functional_derivative_j(&d, &d)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let three = GridDensity::new(g, d.values().iter().map(|v| 3.0 * v).collect()).unwrap();
        let want = 0.5 * 1.5f64.ln();
        assert!((want - 0.202_733).abs() < 1e-6);
        for v in functional_derivative_j(&three, &d).unwrap() {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn functional_derivative_rejects_nonpositive_target_and_flags_zero_rho() {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        let rho = GridDensity::new(g, vec![0.0, 1.0, 1.0]).unwrap();
        let bad = GridDensity::new(g, vec![1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            functional_derivative_j(&rho, &bad),
            Err(FlowError::PositivityViolation { nodes }) if nodes == vec![1]
        ));
        let good = GridDensity::new(g, vec![1.0; 3]).unwrap();
        let d = functional_derivative_j(&rho, &good).unwrap();
        assert_eq!(d[0], f64::NEG_INFINITY);
        assert_eq!(d[1], 0.0);
    }
}

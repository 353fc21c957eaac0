//! The descent drift of the JSD gradient flow in its two algebraic forms.
//!
//! With `v = ρ/ρ_d` the drift is `-½ ∇v / (v(1+v))`. Writing the optimal
//! discriminator as `D = ρ_d/(ρ_d+ρ) = 1/(1+v)` the same field reads
//! `∇D / (2(1-D))`.

use crate::error::{FlowError, Result};
use crate::grid::{Grid, RatioField, VectorFieldSample};

/// Smallest ratio value at which the drift is evaluated.
pub const V_FLOOR: f64 = 1e-12;
/// Discriminator values must stay below `1 - D_CEILING`.
pub const D_CEILING: f64 = 1e-12;

/// `b = -½ ∇v / (v(1+v))` using the shared grid gradient stencil.
pub fn descent_drift(v: &RatioField, v_floor: f64) -> Result<VectorFieldSample> {
    let values = v.values();
    let nodes: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, x)| **x < v_floor)
        .map(|(i, _)| i)
        .collect();
    if !nodes.is_empty() {
        return Err(FlowError::DriftSingularity {
            floor: v_floor,
            nodes,
        });
    }
    let grad = v.grid().gradient(values);
    let drift = values
        .iter()
        .zip(&grad)
        .map(|(&x, &g)| -0.5 * g / (x * (1.0 + x)))
        .collect();
    Ok(VectorFieldSample::new(*v.grid(), drift))
}

/// Point form `∇D / (2(1-D))`, shared with the particle integrator.
#[inline]
pub fn discriminator_drift(d: f64, grad_d: f64) -> f64 {
    grad_d / (2.0 * (1.0 - d))
}

/// Whether `d` is saturated with respect to `ceiling`.
#[inline]
pub fn is_saturated(d: f64, ceiling: f64) -> bool {
    !(d <= 1.0 - ceiling)
}

/// `∇D / (2(1-D))` node-wise.
pub fn drift_from_discriminator(
    grid: &Grid,
    d: &[f64],
    grad_d: &[f64],
    d_ceiling: f64,
) -> Result<VectorFieldSample> {
    grid.check_len(d.len())?;
    grid.check_len(grad_d.len())?;
    if let Some(i) = d.iter().position(|x| !(*x >= 0.0)) {
        return Err(FlowError::InvalidParameter {
            name: "D",
            reason: format!("discriminator must lie in [0, 1], node {i} = {}", d[i]),
        });
    }
    let indices: Vec<usize> = d
        .iter()
        .enumerate()
        .filter(|(_, x)| is_saturated(**x, d_ceiling))
        .map(|(i, _)| i)
        .collect();
    if !indices.is_empty() {
        return Err(FlowError::DiscriminatorSaturation {
            ceiling: d_ceiling,
            indices,
        });
    }
    let values = d
        .iter()
        .zip(grad_d)
        .map(|(&x, &g)| discriminator_drift(x, g))
        .collect();
    Ok(VectorFieldSample::new(*grid, values))
}

/// Optimal discriminator `D = 1/(1+v)` and its gradient by the chain rule
/// applied to the grid gradient of `v`, so both drift forms share one stencil.
pub fn discriminator_from_ratio(v: &RatioField) -> (Vec<f64>, Vec<f64>) {
    let grad_v = v.grid().gradient(v.values());
    let d = v.values().iter().map(|x| 1.0 / (1.0 + x)).collect();
    let grad_d = v
        .values()
        .iter()
        .zip(&grad_v)
        .map(|(x, g)| -g / ((1.0 + x) * (1.0 + x)))
        .collect();
    (d, grad_d)
}

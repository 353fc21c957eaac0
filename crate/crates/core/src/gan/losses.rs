//! Minibatch objectives and their exact parameter gradients.
//!
//! Point sets are flat row-major arrays whose row length is the input (or
//! output) dimension of the network they feed.

use crate::drift::D_CEILING;
use crate::error::{FlowError, Result};

use super::mlp::Mlp;

/// A minibatch objective for [`mlp_gradient`].
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// `(1/m) Σ [ln D(x_i) + ln(1 - D(y_i))]`, to be ascended by `D`.
    DiscriminatorLogistic { data: &'a [f64], fake: &'a [f64] },
    /// `(1/m) Σ |G(z_i) - y_i|²`.
    GeneratorMse { z: &'a [f64], targets: &'a [f64] },
    /// `(1/m) Σ ln(1 - D(G(z_i)))`.
    GeneratorVanilla { z: &'a [f64], discriminator: &'a Mlp },
}

fn rows(flat: &[f64], width: usize) -> Result<std::slice::ChunksExact<'_, f64>> {
    if flat.is_empty() || flat.len() % width != 0 {
        return Err(FlowError::LengthMismatch {
            expected: width,
            actual: flat.len(),
        });
    }
    Ok(flat.chunks_exact(width))
}

fn check_log_arguments(values: &[(usize, f64)]) -> Result<()> {
    // each entry is the argument of a logarithm; it must stay above the ceiling
    let indices: Vec<usize> = values
        .iter()
        .filter(|(_, a)| !(*a >= D_CEILING))
        .map(|(i, _)| *i)
        .collect();
    if indices.is_empty() {
        Ok(())
    } else {
        Err(FlowError::DiscriminatorSaturation {
            ceiling: D_CEILING,
            indices,
        })
    }
}

/// Value of `loss` and its exact gradient with respect to `net`'s parameters.
pub fn mlp_gradient(net: &Mlp, loss: &Loss<'_>) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.param_count()];
    let value = match *loss {
        Loss::DiscriminatorLogistic { data, fake } => {
            let width = net.input_dim();
            let m = rows(data, width)?.len();
            if rows(fake, width)?.len() != m {
                return Err(FlowError::LengthMismatch {
                    expected: data.len(),
                    actual: fake.len(),
                });
            }
            let inv_m = 1.0 / m as f64;
            let mut logs = Vec::with_capacity(2 * m);
            let mut value = 0.0;
            for (i, x) in rows(data, width)?.enumerate() {
                let (out, tape) = net.forward(x)?;
                let d = out[0];
                logs.push((i, d));
                value += d.ln() * inv_m;
                net.backward(&tape, &[inv_m / d], &mut grad);
            }
            for (i, y) in rows(fake, width)?.enumerate() {
                let (out, tape) = net.forward(y)?;
                let d = out[0];
                logs.push((m + i, 1.0 - d));
                value += (1.0 - d).ln() * inv_m;
                net.backward(&tape, &[-inv_m / (1.0 - d)], &mut grad);
            }
            check_log_arguments(&logs)?;
            value
        }
        Loss::GeneratorMse { z, targets } => {
            let zs = rows(z, net.input_dim())?;
            let m = zs.len();
            let ts = rows(targets, net.output_dim())?;
            if ts.len() != m {
                return Err(FlowError::LengthMismatch {
                    expected: m * net.output_dim(),
                    actual: targets.len(),
                });
            }
            let inv_m = 1.0 / m as f64;
            let mut value = 0.0;
            for (zi, yi) in zs.zip(ts) {
                let (out, tape) = net.forward(zi)?;
                let diff: Vec<f64> = out.iter().zip(yi).map(|(a, b)| a - b).collect();
                value += diff.iter().map(|d| d * d).sum::<f64>() * inv_m;
                let g: Vec<f64> = diff.iter().map(|d| 2.0 * d * inv_m).collect();
                net.backward(&tape, &g, &mut grad);
            }
            value
        }
        Loss::GeneratorVanilla { z, discriminator } => {
            if discriminator.input_dim() != net.output_dim() {
                return Err(FlowError::LengthMismatch {
                    expected: net.output_dim(),
                    actual: discriminator.input_dim(),
                });
            }
            let zs = rows(z, net.input_dim())?;
            let inv_m = 1.0 / zs.len() as f64;
            let mut value = 0.0;
            let mut logs = Vec::new();
            let mut scratch = vec![0.0; discriminator.param_count()];
            for (i, zi) in zs.enumerate() {
                let (x, g_tape) = net.forward(zi)?;
                let (d_out, d_tape) = discriminator.forward(&x)?;
                let d = d_out[0];
                logs.push((i, 1.0 - d));
                value += (1.0 - d).ln() * inv_m;
                let dx = discriminator.backward(&d_tape, &[-inv_m / (1.0 - d)], &mut scratch);
                net.backward(&g_tape, &dx, &mut grad);
            }
            check_log_arguments(&logs)?;
            value
        }
    };
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(FlowError::Divergence(format!("gradient entry {i} is not finite")));
    }
    Ok((value, grad))
}

/// `D(y)` and `∇_y D(y)` by reverse mode to the input.
pub fn discriminator_input_gradient(d: &Mlp, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (out, tape) = d.forward(y)?;
    let mut scratch = vec![0.0; d.param_count()];
    let g = d.backward(&tape, &[1.0], &mut scratch);
    Ok((out[0], g))
}

/// Generator outputs `G(z_i)` and transported points
/// `y_i = G(z_i) + ε ∇D(G(z_i)) / (2(1 - D(G(z_i))))`.
pub fn transport_targets(g: &Mlp, d: &Mlp, z: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let zs = rows(z, g.input_dim())?;
    let mut outputs = Vec::with_capacity(zs.len() * g.output_dim());
    let mut targets = Vec::with_capacity(outputs.capacity());
    let mut saturated = Vec::new();
    for (i, zi) in zs.enumerate() {
        let x = g.output(zi)?;
        let (dv, grad) = discriminator_input_gradient(d, &x)?;
        if !(1.0 - dv >= D_CEILING) {
            saturated.push(i);
            continue;
        }
        let scale = eps / (2.0 * (1.0 - dv));
        for (xk, gk) in x.iter().zip(&grad) {
            outputs.push(*xk);
            targets.push(xk + scale * gk);
        }
    }
    if !saturated.is_empty() {
        return Err(FlowError::DiscriminatorSaturation {
            ceiling: D_CEILING,
            indices: saturated,
        });
    }
    Ok((outputs, targets))
}

/// Both sides of the generator-update identity on one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// `∇_θ (1/m) Σ |G(z_i) - y_i|²` with `y_i` held fixed.
    pub grad_mse_path: Vec<f64>,
    /// `∇_θ (1/m) Σ ln(1 - D(G(z_i)))`.
    pub grad_vanilla: Vec<f64>,
    pub eps: f64,
    /// `‖grad_mse_path - ε grad_vanilla‖∞ / max(‖ε grad_vanilla‖∞, 1e-30)`.
    pub rel_error: f64,
}

impl GradReport {
    /// Compares the MSE gradient toward the given `targets` with `ε` times the
    /// vanilla gradient.
    pub fn from_targets(g: &Mlp, d: &Mlp, z: &[f64], targets: &[f64], eps: f64) -> Result<Self> {
        let (_, grad_mse_path) = mlp_gradient(g, &Loss::GeneratorMse { z, targets })?;
        let (_, grad_vanilla) = mlp_gradient(g, &Loss::GeneratorVanilla { z, discriminator: d })?;
        let scale = grad_vanilla.iter().map(|x| (eps * x).abs()).fold(0.0, f64::max);
        let diff = grad_mse_path
            .iter()
            .zip(&grad_vanilla)
            .map(|(a, b)| (a - eps * b).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            grad_mse_path,
            grad_vanilla,
            eps,
            rel_error: diff / scale.max(1e-30),
        })
    }
}

/// Gradient of the MSE toward transported points against `ε` times the vanilla
/// generator gradient, on the shared noise batch `z`.
pub fn equivalence_report(g: &Mlp, d: &Mlp, z: &[f64], eps: f64) -> Result<GradReport> {
    let (_, targets) = transport_targets(g, d, z, eps)?;
    GradReport::from_targets(g, d, z, &targets, eps)
}

/// Reorders `targets` so the `k`-th smallest output is paired with the `k`-th
/// smallest target.
pub fn sorted_matching_targets(outputs: &[f64], targets: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim != 1 {
        return Err(FlowError::UnsupportedDimension(dim));
    }
    if outputs.len() != targets.len() {
        return Err(FlowError::LengthMismatch {
            expected: outputs.len(),
            actual: targets.len(),
        });
    }
    let mut order: Vec<usize> = (0..outputs.len()).collect();
    order.sort_by(|&a, &b| outputs[a].total_cmp(&outputs[b]).then(a.cmp(&b)));
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut matched = vec![0.0; targets.len()];
    for (rank, &i) in order.iter().enumerate() {
        matched[i] = sorted[rank];
    }
    Ok(matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::mlp::Activation;
    use crate::rng::Stream;

    #[test]
    fn rank_matching_example() {
        let m = sorted_matching_targets(&[3.0, 1.0, 2.0], &[10.0, 20.0, 30.0], 1).unwrap();
        assert_eq!(m, vec![30.0, 10.0, 20.0]);
        let id = sorted_matching_targets(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], 1).unwrap();
        assert_eq!(id, vec![4.0, 5.0, 6.0]);
        assert!(sorted_matching_targets(&[1.0, 2.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn one_neuron_discriminator_gradient() {
        // D(x) = σ(w x + b): ∂V/∂b = mean(1 - D(x)) - mean(D(y)),
        // ∂V/∂w = mean((1 - D(x)) x) - mean(D(y) y)
        let (w, b) = (0.7, -0.2);
        let net = Mlp::zeros(vec![1, 1], Activation::Tanh, Activation::Sigmoid)
            .unwrap()
            .with_params(vec![w, b])
            .unwrap();
        let data = [0.5, -1.0, 2.0];
        let fake = [1.5, 0.1, -0.3];
        let s = |x: f64| 1.0 / (1.0 + (-(w * x + b)).exp());
        let gb = data.iter().map(|x| 1.0 - s(*x)).sum::<f64>() / 3.0 - fake.iter().map(|y| s(*y)).sum::<f64>() / 3.0;
        let gw = data.iter().map(|x| (1.0 - s(*x)) * x).sum::<f64>() / 3.0
            - fake.iter().map(|y| s(*y) * y).sum::<f64>() / 3.0;
        let (_, g) = mlp_gradient(&net, &Loss::DiscriminatorLogistic { data: &data, fake: &fake }).unwrap();
        assert!((g[0] - gw).abs() < 1e-15 && (g[1] - gb).abs() < 1e-15);
    }

    #[test]
    fn saturated_discriminator_is_an_error() {
        let net = Mlp::zeros(vec![1, 1], Activation::Tanh, Activation::Sigmoid)
            .unwrap()
            .with_params(vec![0.0, 40.0])
            .unwrap();
        let r = mlp_gradient(&net, &Loss::DiscriminatorLogistic { data: &[0.0], fake: &[1.0] });
        assert!(matches!(r, Err(FlowError::DiscriminatorSaturation { .. })));
    }

    #[test]
    fn mse_at_its_minimum_has_zero_gradient() {
        let mut s = Stream::new(8);
        let g = Mlp::random(vec![1, 8, 1], Activation::Tanh, Activation::Identity, &mut s).unwrap();
        let z = s.normals(16);
        let targets: Vec<f64> = z.iter().map(|zi| g.output(&[*zi]).unwrap()[0]).collect();
        let (v, grad) = mlp_gradient(&g, &Loss::GeneratorMse { z: &z, targets: &targets }).unwrap();
        assert_eq!(v, 0.0);
        assert!(grad.iter().all(|x| *x == 0.0));
    }
}

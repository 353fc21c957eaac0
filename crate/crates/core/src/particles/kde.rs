//! Gaussian kernel density estimates of an ensemble.
//!
//! [`KdeDensity`] sums the kernel over all particles, which is exact but costs
//! `O(m)` per evaluation. [`BinnedKde`] spreads the particles onto a lattice by
//! linear binning, convolves once with the kernel and its derivative, and then
//! interpolates, which makes refits over `10⁵` particles cheap.

use std::f64::consts::PI;

use crate::error::{FlowError, Result};

use super::ensemble::{ParticleEnsemble, ProductTarget};

/// Kernel support is truncated at this many bandwidths in the binned estimate.
pub const KERNEL_CUTOFF: f64 = 7.0;
/// Lattice size cap for [`BinnedKde`].
pub const MAX_LATTICE_NODES: usize = 1 << 20;

/// A density on `ℝ^d` that can report its value and gradient.
pub trait DensityModel: Sync {
    fn dim(&self) -> usize;
    /// Returns the density at `y` and writes its gradient into `grad`.
    fn density_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64;

    fn density(&self, y: &[f64]) -> f64 {
        let mut g = [0.0; 2];
        self.density_and_gradient(y, &mut g[..self.dim()])
    }
}

impl DensityModel for ProductTarget {
    fn dim(&self) -> usize {
        ProductTarget::dim(self)
    }

    fn density_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        self.pdf_and_gradient(y, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `1.06 σ̂ m^{-1/5}` in 1-D, `σ̂ m^{-1/6}` per axis in 2-D (pooled `σ̂`).
    Silverman,
    Fixed(f64),
}

/// Bandwidth selected by `rule` for `ens`.
pub fn select_bandwidth(ens: &ParticleEnsemble, rule: Bandwidth) -> Result<f64> {
    match rule {
        Bandwidth::Fixed(h) => {
            if h.is_finite() && h > 0.0 {
                Ok(h)
            } else {
                Err(FlowError::InvalidParameter {
                    name: "bandwidth",
                    reason: format!("must be positive, got {h}"),
                })
            }
        }
        Bandwidth::Silverman => {
            let m = ens.len();
            if m < 2 {
                return Err(FlowError::DegenerateEnsemble(
                    "silverman bandwidth needs at least two particles".into(),
                ));
            }
            let var = ens.variance();
            let sigma = (var.iter().sum::<f64>() / var.len() as f64).sqrt();
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(FlowError::DegenerateEnsemble(format!(
                    "sample standard deviation {sigma} gives no bandwidth"
                )));
            }
            Ok(match ens.dim() {
                1 => 1.06 * sigma * (m as f64).powf(-0.2),
                _ => sigma * (m as f64).powf(-1.0 / 6.0),
            })
        }
    }
}

/// Exact Gaussian KDE.
#[derive(Debug, Clone)]
pub struct KdeDensity {
    source: ParticleEnsemble,
    bandwidth: f64,
}

impl KdeDensity {
    pub fn new(source: ParticleEnsemble, rule: Bandwidth) -> Result<Self> {
        let bandwidth = select_bandwidth(&source, rule)?;
        Ok(Self { source, bandwidth })
    }

    pub fn source(&self) -> &ParticleEnsemble {
        &self.source
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl DensityModel for KdeDensity {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn density_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.source.dim();
        let h = self.bandwidth;
        let norm = (2.0 * PI * h * h).powf(-0.5 * d as f64) / self.source.len() as f64;
        let mut value = 0.0;
        grad[..d].iter_mut().for_each(|g| *g = 0.0);
        for p in self.source.points() {
            let mut r2 = 0.0;
            for k in 0..d {
                r2 += (y[k] - p[k]).powi(2);
            }
            let k_val = (-0.5 * r2 / (h * h)).exp();
            value += k_val;
            for k in 0..d {
                grad[k] -= k_val * (y[k] - p[k]) / (h * h);
            }
        }
        grad[..d].iter_mut().for_each(|g| *g *= norm);
        value * norm
    }
}

/// Lattice-binned Gaussian KDE with tabulated value and gradient.
#[derive(Debug, Clone)]
pub struct BinnedKde {
    dim: usize,
    bandwidth: f64,
    lower: [f64; 2],
    delta: f64,
    shape: [usize; 2],
    value: Vec<f64>,
    grad: [Vec<f64>; 2],
}

impl BinnedKde {
    /// Lattice spacing is `bandwidth / nodes_per_bandwidth`.
    pub fn new(source: &ParticleEnsemble, rule: Bandwidth, nodes_per_bandwidth: usize) -> Result<Self> {
        let bandwidth = select_bandwidth(source, rule)?;
        if nodes_per_bandwidth == 0 {
            return Err(FlowError::InvalidParameter {
                name: "nodes_per_bandwidth",
                reason: "must be at least 1".into(),
            });
        }
        let d = source.dim();
        let delta = bandwidth / nodes_per_bandwidth as f64;
        let pad = KERNEL_CUTOFF * bandwidth + delta;
        let mut lower = [0.0; 2];
        let mut shape = [1usize; 2];
        for k in 0..d {
            let (lo, hi) = source
                .points()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
            lower[k] = lo - pad;
            shape[k] = ((hi + pad - lower[k]) / delta).ceil() as usize + 1;
        }
        let total: usize = shape[..d].iter().product();
        if total > MAX_LATTICE_NODES {
            return Err(FlowError::InvalidParameter {
                name: "nodes_per_bandwidth",
                reason: format!("lattice of {total} nodes exceeds {MAX_LATTICE_NODES}"),
            });
        }

        // linear binning: each particle splits unit weight over its cell corners
        let mut counts = vec![0.0; total];
        let inv_m = 1.0 / source.len() as f64;
        for p in source.points() {
            let mut base = [0usize; 2];
            let mut frac = [0.0; 2];
            for k in 0..d {
                let s = (p[k] - lower[k]) / delta;
                let i = (s.floor() as usize).min(shape[k] - 2);
                base[k] = i;
                frac[k] = s - i as f64;
            }
            if d == 1 {
                counts[base[0]] += (1.0 - frac[0]) * inv_m;
                counts[base[0] + 1] += frac[0] * inv_m;
            } else {
                for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                    for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                        counts[(base[0] + di) * shape[1] + base[1] + dj] += wi * wj * inv_m;
                    }
                }
            }
        }

        let radius = (KERNEL_CUTOFF * bandwidth / delta).ceil() as usize;
        let offsets: Vec<f64> = (0..=2 * radius)
            .map(|j| (j as f64 - radius as f64) * delta)
            .collect();
        let kern: Vec<f64> = offsets
            .iter()
            .map(|s| (-0.5 * (s / bandwidth).powi(2)).exp() / (bandwidth * (2.0 * PI).sqrt()))
            .collect();
        // derivative of the kernel in its argument, evaluated at x - x_c = s
        let dkern: Vec<f64> = offsets
            .iter()
            .zip(&kern)
            .map(|(s, k)| -s / (bandwidth * bandwidth) * k)
            .collect();

        let (value, grad) = if d == 1 {
            let v = convolve_axis(&counts, shape, 1, 0, &kern, radius);
            let g = convolve_axis(&counts, shape, 1, 0, &dkern, radius);
            (v, [g, Vec::new()])
        } else {
            let along0 = convolve_axis(&counts, shape, 2, 0, &kern, radius);
            let dalong0 = convolve_axis(&counts, shape, 2, 0, &dkern, radius);
            let v = convolve_axis(&along0, shape, 2, 1, &kern, radius);
            let g0 = convolve_axis(&dalong0, shape, 2, 1, &kern, radius);
            let g1 = convolve_axis(&along0, shape, 2, 1, &dkern, radius);
            (v, [g0, g1])
        };
        Ok(Self {
            dim: d,
            bandwidth,
            lower,
            delta,
            shape,
            value,
            grad,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn spacing(&self) -> f64 {
        self.delta
    }
}

fn convolve_axis(
    data: &[f64],
    shape: [usize; 2],
    dim: usize,
    axis: usize,
    kernel: &[f64],
    radius: usize,
) -> Vec<f64> {
    let (n_axis, stride, n_other, other_stride) = if dim == 1 {
        (shape[0], 1, 1, 0)
    } else if axis == 0 {
        (shape[0], shape[1], shape[1], 1)
    } else {
        (shape[1], 1, shape[0], shape[1])
    };
    let mut out = vec![0.0; data.len()];
    for o in 0..n_other {
        let base = o * other_stride;
        for i in 0..n_axis {
            let c = data[base + i * stride];
            if c == 0.0 {
                continue;
            }
            // node j receives c * kernel(x_j - x_i)
            let j_lo = i.saturating_sub(radius);
            let j_hi = (i + radius).min(n_axis - 1);
            for j in j_lo..=j_hi {
                out[base + j * stride] += c * kernel[j + radius - i];
            }
        }
    }
    out
}

impl DensityModel for BinnedKde {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Linear (bilinear in 2-D) interpolation of the tabulated fields; zero
    /// outside the lattice.
    fn density_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..d {
            let s = (y[k] - self.lower[k]) / self.delta;
            if !(s >= 0.0 && s <= (self.shape[k] - 1) as f64) {
                grad[..d].iter_mut().for_each(|g| *g = 0.0);
                return 0.0;
            }
            let i = (s.floor() as usize).min(self.shape[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        if d == 1 {
            let (i, t) = (base[0], frac[0]);
            let lerp = |f: &[f64]| f[i] * (1.0 - t) + f[i + 1] * t;
            grad[0] = lerp(&self.grad[0]);
            lerp(&self.value)
        } else {
            let n1 = self.shape[1];
            let (i, j) = (base[0], base[1]);
            let (s, t) = (frac[0], frac[1]);
            let bilerp = |f: &[f64]| {
                f[i * n1 + j] * (1.0 - s) * (1.0 - t)
                    + f[(i + 1) * n1 + j] * s * (1.0 - t)
                    + f[i * n1 + j + 1] * (1.0 - s) * t
                    + f[(i + 1) * n1 + j + 1] * s * t
            };
            grad[0] = bilerp(&self.grad[0]);
            grad[1] = bilerp(&self.grad[1]);
            bilerp(&self.value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::init_ensemble;
    use crate::target::TargetModel;

    #[test]
    fn repeated_point_gives_the_kernel() {
        let ens = ParticleEnsemble::new(1, vec![0.3; 7], 0.0, 0).unwrap();
        let kde = KdeDensity::new(ens.clone(), Bandwidth::Fixed(0.5)).unwrap();
        for y in [-1.0, 0.3, 1.7] {
            let want = crate::target::normal_pdf(y, 0.3, 0.5);
            assert!((kde.density(&[y]) - want).abs() < 1e-15);
        }
        match KdeDensity::new(ens, Bandwidth::Silverman) {
            Err(FlowError::DegenerateEnsemble(_)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binned_matches_exact() {
        let ens = init_ensemble(&TargetModel::gaussian(0.0, 1.0).unwrap(), 2000, 9).unwrap();
        let exact = KdeDensity::new(ens.clone(), Bandwidth::Silverman).unwrap();
        let binned = BinnedKde::new(&ens, Bandwidth::Silverman, 16).unwrap();
        let (mut g1, mut g2) = ([0.0], [0.0]);
        for i in 0..41 {
            let y = -3.0 + 0.15 * i as f64;
            let a = exact.density_and_gradient(&[y], &mut g1);
            let b = binned.density_and_gradient(&[y], &mut g2);
            assert!((a - b).abs() < 2e-3 * a.max(0.05), "y={y}: {a} vs {b}");
            assert!((g1[0] - g2[0]).abs() < 5e-3, "y={y}: {} vs {}", g1[0], g2[0]);
        }
    }

    #[test]
    fn binned_plane_matches_exact() {
        let g = TargetModel::gaussian(0.0, 1.0).unwrap();
        let t = ProductTarget::new(vec![g.clone(), g]).unwrap();
        let ens = crate::particles::init_product_ensemble(&t, 1500, 4).unwrap();
        let exact = KdeDensity::new(ens.clone(), Bandwidth::Silverman).unwrap();
        let binned = BinnedKde::new(&ens, Bandwidth::Silverman, 8).unwrap();
        let (mut g1, mut g2) = ([0.0; 2], [0.0; 2]);
        for y in [[0.0, 0.0], [0.5, -1.0], [-1.2, 0.7]] {
            let a = exact.density_and_gradient(&y, &mut g1);
            let b = binned.density_and_gradient(&y, &mut g2);
            assert!((a - b).abs() < 5e-3 * a, "{y:?}: {a} vs {b}");
            for k in 0..2 {
                assert!((g1[k] - g2[k]).abs() < 5e-3, "{y:?}");
            }
        }
    }
}

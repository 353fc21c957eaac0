//! Analytic data distributions with exact density, score and sampler.

use std::f64::consts::PI;

use crate::error::{FlowError, Result};
use crate::grid::{Grid, GridDensity};
use crate::rng::Stream;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Captured analytic mass below which discretization refuses the window.
pub const MIN_WINDOW_MASS: f64 = 1.0 - 1e-3;
/// Heavy-tailed families only need this much mass inside the window; the
/// remainder is absorbed by the recorded renormalization.
pub const MIN_WINDOW_MASS_HEAVY_TAIL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// A one-dimensional density that is positive on the whole real line.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    Gaussian { mean: f64, std: f64 },
    GaussianMixture(Vec<MixtureComponent>),
    Logistic { location: f64, scale: f64 },
    Cauchy { location: f64, scale: f64 },
}

/// A target discretized on a window, with the factor used to renormalize it.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub density: GridDensity,
    /// Multiplier applied to the raw pdf values.
    pub renormalization: f64,
    /// Analytic probability of the window.
    pub captured_mass: f64,
}

impl TargetModel {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        let m = TargetModel::Gaussian { mean, std };
        m.validate()?;
        Ok(m)
    }

    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let m = TargetModel::GaussianMixture(components);
        m.validate()?;
        Ok(m)
    }

    pub fn logistic(location: f64, scale: f64) -> Result<Self> {
        let m = TargetModel::Logistic { location, scale };
        m.validate()?;
        Ok(m)
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self> {
        let m = TargetModel::Cauchy { location, scale };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let scale_ok = |name: &'static str, loc: f64, s: f64| -> Result<()> {
            if !loc.is_finite() || !(s.is_finite() && s > 0.0) {
                return Err(FlowError::InvalidParameter {
                    name,
                    reason: format!("need finite location and positive scale, got ({loc}, {s})"),
                });
            }
            Ok(())
        };
        match self {
            TargetModel::Gaussian { mean, std } => scale_ok("gaussian", *mean, *std),
            TargetModel::Logistic { location, scale } => scale_ok("logistic", *location, *scale),
            TargetModel::Cauchy { location, scale } => scale_ok("cauchy", *location, *scale),
            TargetModel::GaussianMixture(cs) => {
                if cs.is_empty() {
                    return Err(FlowError::InvalidParameter {
                        name: "mixture",
                        reason: "no components".into(),
                    });
                }
                for c in cs {
                    scale_ok("mixture", c.mean, c.std)?;
                    if !(c.weight > 0.0) {
                        return Err(FlowError::InvalidParameter {
                            name: "mixture",
                            reason: format!("weights must be positive, got {}", c.weight),
                        });
                    }
                }
                let total: f64 = cs.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(FlowError::InvalidParameter {
                        name: "mixture",
                        reason: format!("weights sum to {total}, not 1"),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            TargetModel::Gaussian { mean, std } => normal_pdf(y, *mean, *std),
            TargetModel::GaussianMixture(cs) => cs
                .iter()
                .map(|c| c.weight * normal_pdf(y, c.mean, c.std))
                .sum(),
            TargetModel::Logistic { location, scale } => {
                // symmetric form avoids overflow for large |z|
                let z = ((y - location) / scale).abs();
                let e = (-z).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
            TargetModel::Cauchy { location, scale } => {
                let z = (y - location) / scale;
                1.0 / (PI * scale * (1.0 + z * z))
            }
        }
    }

    /// `d/dy ln pdf(y)`.
    pub fn grad_log_pdf(&self, y: f64) -> f64 {
        match self {
            TargetModel::Gaussian { mean, std } => -(y - mean) / (std * std),
            TargetModel::GaussianMixture(cs) => {
                // responsibilities in log space so far tails stay finite
                let logs: Vec<f64> = cs
                    .iter()
                    .map(|c| c.weight.ln() + log_normal_pdf(y, c.mean, c.std))
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut num = 0.0;
                let mut den = 0.0;
                for (c, l) in cs.iter().zip(&logs) {
                    let r = (l - top).exp();
                    num += r * (-(y - c.mean) / (c.std * c.std));
                    den += r;
                }
                num / den
            }
            TargetModel::Logistic { location, scale } => {
                -((y - location) / (2.0 * scale)).tanh() / scale
            }
            TargetModel::Cauchy { location, scale } => {
                let z = (y - location) / scale;
                -2.0 * z / (scale * (1.0 + z * z))
            }
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            TargetModel::Gaussian { mean, std } => normal_cdf((y - mean) / std),
            TargetModel::GaussianMixture(cs) => cs
                .iter()
                .map(|c| c.weight * normal_cdf((y - c.mean) / c.std))
                .sum(),
            TargetModel::Logistic { location, scale } => {
                1.0 / (1.0 + (-(y - location) / scale).exp())
            }
            TargetModel::Cauchy { location, scale } => 0.5 + ((y - location) / scale).atan() / PI,
        }
    }

    /// Draws `m` i.i.d. samples from a fresh stream seeded by `seed`.
    pub fn sample(&self, seed: u64, m: usize) -> Vec<f64> {
        let mut s = Stream::new(seed);
        self.sample_with(&mut s, m)
    }

    pub fn sample_with(&self, s: &mut Stream, m: usize) -> Vec<f64> {
        (0..m).map(|_| self.draw(s)).collect()
    }

    fn draw(&self, s: &mut Stream) -> f64 {
        match self {
            TargetModel::Gaussian { mean, std } => mean + std * s.normal(),
            TargetModel::GaussianMixture(cs) => {
                let u = s.uniform();
                let mut acc = 0.0;
                let mut pick = cs.len() - 1;
                for (k, c) in cs.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                let c = cs[pick];
                c.mean + c.std * s.normal()
            }
            TargetModel::Logistic { location, scale } => {
                let u = s.uniform_open();
                location + scale * (u / (1.0 - u)).ln()
            }
            TargetModel::Cauchy { location, scale } => {
                let u = s.uniform_open();
                location + scale * (PI * (u - 0.5)).tan()
            }
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            TargetModel::Gaussian { mean, .. } => Some(*mean),
            TargetModel::GaussianMixture(cs) => Some(cs.iter().map(|c| c.weight * c.mean).sum()),
            TargetModel::Logistic { location, .. } => Some(*location),
            TargetModel::Cauchy { .. } => None,
        }
    }

    /// Evaluates the pdf on `grid` and rescales to unit trapezoidal mass.
    pub fn discretize(&self, grid: &Grid) -> Result<Discretization> {
        let captured_mass = self.cdf(grid.upper()) - self.cdf(grid.lower());
        let floor = match self {
            TargetModel::Cauchy { .. } => MIN_WINDOW_MASS_HEAVY_TAIL,
            _ => MIN_WINDOW_MASS,
        };
        if captured_mass < floor {
            return Err(FlowError::WindowTooNarrow {
                mass: captured_mass,
            });
        }
        let raw: Vec<f64> = grid.nodes().iter().map(|y| self.pdf(*y)).collect();
        let renormalization = 1.0 / grid.integrate(&raw);
        let values = raw.iter().map(|v| v * renormalization).collect();
        Ok(Discretization {
            density: GridDensity::new(*grid, values)?,
            renormalization,
            captured_mass,
        })
    }

    /// `∫ (∇ρ)²/ρ dy` over the window.
    pub fn fisher_information(&self, grid: &Grid) -> f64 {
        let integrand: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|y| {
                let s = self.grad_log_pdf(*y);
                s * s * self.pdf(*y)
            })
            .collect();
        grid.integrate(&integrand)
    }
}

pub fn normal_pdf(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    (-0.5 * z * z).exp() / (std * SQRT_2PI)
}

fn log_normal_pdf(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    -0.5 * z * z - (std * SQRT_2PI).ln()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

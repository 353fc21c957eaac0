//! Gradient flows of probability densities toward a data distribution.
//!
//! The objective is `J(ρ) = JSD(ρ, ρ_d)`. Its steepest-descent flow is
//! realized three ways:
//!
//! - [`fokker_planck`]: the nonlinear Fokker-Planck equation for the ratio
//!   `v = ρ/ρ_d`, stepped by implicit resolvents on a 1-D grid;
//! - [`particles`]: an ensemble transported by explicit Euler along the
//!   drift `∇D/(2(1-D))` with `D = ρ_d/(ρ_d+ρ)`;
//! - [`gan`]: small neural generator/discriminator pairs trained by the
//!   transport-then-regress iteration, which coincides with vanilla GAN
//!   generator updates.

pub mod divergence;
pub mod drift;
pub mod error;
pub mod fokker_planck;
pub mod gan;
pub mod grid;
pub mod particles;
pub mod pushforward;
pub mod rng;
pub mod target;
pub mod tridiag;

pub use error::{FlowError, Result};
pub use grid::{Grid, GridDensity, RatioField, VectorFieldSample, MASS_TOL};
pub use target::{MixtureComponent, TargetModel};

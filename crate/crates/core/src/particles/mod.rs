//! Ensembles transported along `∇D / (2(1-D))` by explicit Euler steps.

mod ensemble;
mod flow;
mod kde;

pub use ensemble::{init_ensemble, init_product_ensemble, ParticleEnsemble, ProductTarget};
pub use flow::{
    bin_averages, discrete_jsd, euler_step, exact_discriminator, histogram_density, histogram_jsd,
    histogram_probabilities, run_from, simulate, target_bin_probabilities, Discriminator, Estimator,
    ExactDiscriminator, HistogramSpec, ParticleTrace, SimulationParams, SimulationRun,
};
pub use kde::{select_bandwidth, Bandwidth, BinnedKde, DensityModel, KdeDensity, KERNEL_CUTOFF, MAX_LATTICE_NODES};

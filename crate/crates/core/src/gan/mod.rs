//! Small generator/discriminator networks trained by transporting generator
//! samples along the discriminator drift and regressing onto the result.

mod losses;
mod mlp;
mod training;

pub use losses::{
    discriminator_input_gradient, equivalence_report, mlp_gradient, sorted_matching_targets, transport_targets,
    GradReport, Loss,
};
pub use mlp::{Activation, Mlp, Tape};
pub use training::{
    algorithm1_iteration, divergence_experiment, Assignment, DivergenceConfig, DivergenceOutcome, GanTrace,
    GanTrainer, IterationDiagnostics, Optimizer, TrainParams,
};

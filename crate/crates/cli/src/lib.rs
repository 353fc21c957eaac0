//! Reproducible experiment runs for `densflow`: configuration, dispatch,
//! CSV and SVG artifacts, and run manifests.

pub mod config;
pub mod run;
pub mod svg;

pub use config::{parse_config, parse_with, ConfigError, ConfigIssue, Experiment, ExperimentConfig, Overrides};
pub use run::{run, RunError, RunManifest, RunOptions, RunReport, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PASS};
pub use svg::{emit_svg, PlotSpec, SvgError};

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use densflow_cli::{parse_with, run, Experiment, Overrides, RunOptions, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "densflow", version, about = "Gradient-flow experiments on probability densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Nonlinear Fokker-Planck flow on a grid
    PdeFlow(Common),
    /// Particle simulation of the drift ODE
    ParticleFlow(Common),
    /// Train a generator/discriminator pair
    GanTrain(Common),
    /// Check the MSE-step / vanilla-gradient identity
    GanEquivalence(Common),
    /// Point-wise vs rank-matched fitting
    MseDivergence(Common),
    /// Divergence inequalities and the first variation
    MetricsAudit(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed, overriding `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG plots
    #[arg(long)]
    no_svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::PdeFlow(a) => (Experiment::PdeFlow, a),
        Command::ParticleFlow(a) => (Experiment::ParticleFlow, a),
        Command::GanTrain(a) => (Experiment::GanTrain, a),
        Command::GanEquivalence(a) => (Experiment::GanEquivalence, a),
        Command::MseDivergence(a) => (Experiment::MseDivergence, a),
        Command::MetricsAudit(a) => (Experiment::MetricsAudit, a),
    };
    let text = match &args.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        None => String::new(),
    };
    let overrides = Overrides {
        experiment: Some(experiment),
        seed: args.seed,
        output_dir: args.output,
    };
    let config = match parse_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(&config, &RunOptions { svg: !args.no_svg }) {
        Ok(report) => {
            for a in &report.manifest.audits {
                let verdict = if a.passed { "pass" } else { "FAIL" };
                println!("{verdict} {}: {:e} (threshold {:e})", a.name, a.value, a.threshold);
            }
            if let Some(e) = &report.manifest.error {
                eprintln!("error: {}", e.message);
            }
            println!("manifest: {}", report.manifest_path.display());
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

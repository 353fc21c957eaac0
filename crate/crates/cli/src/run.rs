//! Dispatch of a validated configuration to the numerical modules, and the
//! artifacts each experiment leaves on disk.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use densflow::divergence::{jsd, l1_distance, tv_distance};
use densflow::fokker_planck::{crandall_liggett_evolve, jsd_descent_audit, WeightedOperator};
use densflow::gan::{divergence_experiment, equivalence_report, Activation, DivergenceConfig, GanTrainer, Mlp};
use densflow::particles::{simulate, ProductTarget};
use densflow::pushforward::directional_derivative_check;
use densflow::rng::Stream;
use densflow::{FlowError, Grid, GridDensity, RatioField};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{Experiment, ExperimentConfig};
use crate::svg::{emit_svg, PlotSpec, SvgError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub svg: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { svg: true }
    }
}

/// Outcome of one invariant audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

/// Machine-readable form of a module error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub step: Option<usize>,
    pub message: String,
}

impl ErrorRecord {
    fn from_flow(e: &FlowError) -> Self {
        let kind = match e.root() {
            FlowError::GridMismatch(_) => "grid_mismatch",
            FlowError::InvalidGrid(_) => "invalid_grid",
            FlowError::LengthMismatch { .. } => "length_mismatch",
            FlowError::InvalidParameter { .. } => "invalid_parameter",
            FlowError::PositivityViolation { .. } => "positivity_violation",
            FlowError::DriftSingularity { .. } => "drift_singularity",
            FlowError::DiscriminatorSaturation { .. } => "discriminator_saturation",
            FlowError::InvalidTransport { .. } => "invalid_transport",
            FlowError::WindowTooNarrow { .. } => "window_too_narrow",
            FlowError::NonConvergence { .. } => "non_convergence",
            FlowError::MonotonicityViolation { .. } => "monotonicity_violation",
            FlowError::AtStep { .. } => unreachable!("root strips step annotations"),
            FlowError::UnsupportedDimension(_) => "unsupported_dimension",
            FlowError::DegenerateEnsemble(_) => "degenerate_ensemble",
            FlowError::Divergence(_) => "divergence",
        };
        Self {
            kind: kind.into(),
            step: e.step(),
            message: e.to_string(),
        }
    }

    /// Exit code: bad inputs are configuration errors, everything else is numerical.
    fn exit_code(&self) -> i32 {
        match self.kind.as_str() {
            "invalid_grid" | "invalid_parameter" | "window_too_narrow" | "unsupported_dimension" | "positivity_violation" => {
                EXIT_CONFIG
            }
            _ => EXIT_NUMERICAL,
        }
    }
}

/// Record of one run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub derived: BTreeMap<String, Value>,
    pub audits: Vec<AuditRecord>,
    pub error: Option<ErrorRecord>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub exit_code: i32,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let io_err = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

struct Artifacts<'a> {
    dir: &'a Path,
    svg: bool,
    outputs: Vec<String>,
    derived: BTreeMap<String, Value>,
    audits: Vec<AuditRecord>,
}

impl Artifacts<'_> {
    fn file(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn plot(&mut self, name: &str, csv_text: &str, spec: PlotSpec) -> Result<(), RunError> {
        if self.svg {
            let svg = emit_svg(csv_text, &spec)?;
            self.file(name, &svg)?;
        }
        Ok(())
    }

    fn derive(&mut self, key: &str, value: impl Into<Value>) {
        self.derived.insert(key.to_string(), value.into());
    }

    /// Passes when `value <= threshold`.
    fn audit(&mut self, name: &str, value: f64, threshold: f64) {
        self.audits.push(AuditRecord {
            name: name.to_string(),
            passed: value <= threshold,
            value,
            threshold,
        });
    }

    /// Passes when `value >= threshold`.
    fn audit_at_least(&mut self, name: &str, value: f64, threshold: f64) {
        self.audits.push(AuditRecord {
            name: name.to_string(),
            passed: value >= threshold,
            value,
            threshold,
        });
    }
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("CSV of ASCII numbers")
}

fn plot(title: &str, x: &str, series: &[&str]) -> PlotSpec {
    PlotSpec {
        title: title.into(),
        x: x.into(),
        series: series.iter().map(|s| s.to_string()).collect(),
    }
}

/// Runs the experiment and writes its CSVs, plots and manifest into the
/// configured output directory.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut art = Artifacts {
        dir: &dir,
        svg: options.svg,
        outputs: Vec::new(),
        derived: BTreeMap::new(),
        audits: Vec::new(),
    };
    art.file("config.resolved", &config.to_text())?;

    let outcome = match config.experiment {
        Experiment::PdeFlow => pde_flow(config, &mut art),
        Experiment::ParticleFlow => particle_flow(config, &mut art),
        Experiment::GanTrain => gan_train(config, &mut art),
        Experiment::GanEquivalence => gan_equivalence(config, &mut art),
        Experiment::MseDivergence => mse_divergence(config, &mut art),
        Experiment::MetricsAudit => metrics_audit(config, &mut art),
    };
    let error = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(ErrorRecord::from_flow(&e)),
        Err(e) => return Err(e),
    };
    let exit_code = match &error {
        Some(e) => e.exit_code(),
        None if art.audits.iter().all(|a| a.passed) => EXIT_PASS,
        None => EXIT_AUDIT,
    };
    let manifest = RunManifest {
        experiment: config.experiment,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        derived: art.derived,
        audits: art.audits,
        error,
        outputs: art.outputs,
        exit_code,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(RunReport {
        exit_code,
        manifest,
        manifest_path,
    })
}

// Each experiment returns `Err` for I/O problems and `Ok(Err)` for module errors.
type Stage = Result<Result<(), FlowError>, RunError>;

macro_rules! flow {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return Ok(Err(e)),
        }
    };
}

fn pde_flow(cfg: &ExperimentConfig, art: &mut Artifacts<'_>) -> Stage {
    let grid = flow!(cfg.grid());
    let r0 = flow!(flow!(cfg.rho0.model()).discretize(&grid));
    let rd = flow!(flow!(cfg.rho_d.model()).discretize(&grid));
    art.derive("rho0_renormalization", r0.renormalization);
    art.derive("rho_d_renormalization", rd.renormalization);
    art.derive("rho0_captured_mass", r0.captured_mass);
    art.derive("rho_d_captured_mass", rd.captured_mass);
    let v0 = flow!(RatioField::from_densities(&r0.density, &rd.density));
    let op = flow!(WeightedOperator::new(rd.density.clone()));
    let run = flow!(crandall_liggett_evolve(
        &v0,
        &op,
        cfg.pde.t_final,
        cfg.pde.n_steps,
        &cfg.resolvent_options()
    ));
    let t = &run.trace;
    art.derive("beta", t.beta);
    art.derive("lambda", t.lambda);
    art.derive("final_jsd", *t.jsd_values.last().expect("initial state is recorded"));
    let u = flow!(run.v.to_density(&rd.density));
    art.derive("final_l1", flow!(l1_distance(&u, &rd.density)));
    art.derive(
        "resolvent_iterations",
        run.steps.iter().map(|s| s.iterations).sum::<usize>(),
    );

    let trace_csv = t.to_csv();
    art.file("trace.csv", &trace_csv)?;
    let nodes = grid.nodes();
    let profile = csv_rows(
        &["y", "u", "rho_d", "v"],
        (0..grid.len()).map(|i| {
            vec![
                nodes[i].to_string(),
                u.values()[i].to_string(),
                rd.density.values()[i].to_string(),
                run.v.values()[i].to_string(),
            ]
        }),
    );
    art.file("final.csv", &profile)?;
    art.plot("jsd.svg", &trace_csv, plot("JSD(u(t), rho_d)", "time", &["jsd"]))?;
    art.plot("final.svg", &profile, plot("final density", "y", &["u", "rho_d"]))?;

    let a = &cfg.audit;
    let rise = t.jsd_values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    art.audit("jsd_nonincreasing", rise.max(0.0), a.jsd_slack);
    art.audit("dissipation", jsd_descent_audit(t).dissipation_check.max(0.0), a.dissipation_tol);
    let mass = run.steps.iter().map(|s| s.mass_change).fold(0.0, f64::max);
    art.audit("mass_conservation", mass, a.mass_tol);
    art.audit("lower_bound", t.inf_v.iter().map(|x| -x).fold(0.0, f64::max), 0.0);
    art.audit(
        "upper_bound",
        t.sup_v.iter().map(|x| x - t.beta).fold(0.0, f64::max),
        a.bound_slack,
    );
    let energy = t.energy_partial_sums.last().copied().unwrap_or(0.0);
    art.audit("energy_bound", energy, a.energy_factor * t.energy_bound());
    let bracket = run
        .steps
        .iter()
        .map(|s| s.lower_decrease.max(s.upper_increase).max(s.max_inversion).max(s.bracket_gap))
        .fold(0.0, f64::max);
    art.audit("monotone_bracket", bracket, a.bracket_tol);
    Ok(Ok(()))
}

fn particle_flow(cfg: &ExperimentConfig, art: &mut Artifacts<'_>) -> Stage {
    let rho0 = ProductTarget::from(flow!(cfg.rho0.model()));
    let rho_d = ProductTarget::from(flow!(cfg.rho_d.model()));
    let params = cfg.simulation_params();
    let run = flow!(simulate(&rho0, &rho_d, &params));
    let trace_csv = run.trace.to_csv();
    art.file("trace.csv", &trace_csv)?;
    art.file("ensemble.csv", &run.ensemble.to_csv())?;
    art.plot("jsd.svg", &trace_csv, plot("histogram JSD to rho_d", "time", &["hist_jsd"]))?;
    art.derive("final_time", run.ensemble.time());
    art.derive("final_hist_jsd", *run.trace.hist_jsd.last().expect("initial state is recorded"));
    let nonfinite = run.ensemble.positions().iter().filter(|x| !x.is_finite()).count();
    art.audit("finite_positions", nonfinite as f64, 0.0);
    art.audit(
        "particle_count",
        (run.ensemble.len() as f64 - params.m as f64).abs(),
        0.0,
    );
    let jsd_excess = run
        .trace
        .hist_jsd
        .iter()
        .map(|j| if j.is_finite() { (j - LN_2).max(-j) } else { f64::INFINITY })
        .fold(0.0, f64::max);
    art.audit("jsd_range", jsd_excess, 1e-12);
    Ok(Ok(()))
}

fn networks(cfg: &ExperimentConfig, stream: &mut Stream) -> Result<(Mlp, Mlp), FlowError> {
    let mut sizes = vec![1];
    sizes.extend(&cfg.gan.hidden);
    sizes.push(1);
    let g = Mlp::random(sizes.clone(), Activation::Tanh, Activation::Identity, stream)?;
    let d = Mlp::random(sizes, Activation::Tanh, Activation::Sigmoid, stream)?;
    Ok((g, d))
}

fn noise() -> ProductTarget {
    ProductTarget::from(densflow::TargetModel::gaussian(0.0, 1.0).expect("standard normal"))
}

fn gan_train(cfg: &ExperimentConfig, art: &mut Artifacts<'_>) -> Stage {
    let (g, d) = flow!(networks(cfg, &mut Stream::child(cfg.seed, "nets", 0)));
    let data = ProductTarget::from(flow!(cfg.rho_d.model()));
    let mut trainer = flow!(GanTrainer::new(g, d, noise(), data, cfg.train_params(), cfg.seed));
    let trace = flow!(trainer.train(cfg.gan.iterations, cfg.gan.record_every));
    let trace_csv = trace.to_csv();
    art.file("trace.csv", &trace_csv)?;
    art.file("generator.txt", &trainer.g.to_text())?;
    art.file("discriminator.txt", &trainer.d.to_text())?;
    art.plot("jsd.svg", &trace_csv, plot("generator histogram JSD", "iteration", &["jsd_hist"]))?;
    let last = trace.final_jsd().expect("initial state is recorded");
    art.derive("final_jsd", last);
    art.derive("parameters_g", trainer.g.param_count());
    art.derive("parameters_d", trainer.d.param_count());
    let excess = trace
        .rows
        .iter()
        .map(|r| if r.jsd_hist.is_finite() { (r.jsd_hist - LN_2).max(-r.jsd_hist) } else { f64::INFINITY })
        .fold(0.0, f64::max);
    art.audit("jsd_range", excess, 1e-12);
    Ok(Ok(()))
}

fn gan_equivalence(cfg: &ExperimentConfig, art: &mut Artifacts<'_>) -> Stage {
    let eq = &cfg.equivalence;
    let mut rows = Vec::with_capacity(eq.trials);
    let mut worst: f64 = 0.0;
    for trial in 0..eq.trials {
        let mut s = Stream::child(cfg.seed, "equivalence", trial as u64);
        let (g, d) = flow!(networks(cfg, &mut s));
        let z = s.normals(eq.batch);
        let eps = eq.eps[trial % eq.eps.len()];
        let report = flow!(equivalence_report(&g, &d, &z, eps));
        worst = worst.max(report.rel_error);
        rows.push(vec![trial.to_string(), eps.to_string(), report.rel_error.to_string()]);
    }
    let text = csv_rows(&["trial", "eps", "rel_error"], rows);
    art.file("equivalence.csv", &text)?;
    art.plot("equivalence.svg", &text, plot("relative gradient mismatch", "trial", &["rel_error"]))?;
    art.derive("max_rel_error", worst);
    art.audit("equivalence", worst, cfg.audit.equivalence_tol);
    Ok(Ok(()))
}

fn mse_divergence(cfg: &ExperimentConfig, art: &mut Artifacts<'_>) -> Stage {
    let (g, d) = flow!(networks(cfg, &mut Stream::child(cfg.seed, "nets", 0)));
    let config = DivergenceConfig {
        g,
        d,
        noise: noise(),
        data: ProductTarget::from(flow!(cfg.rho_d.model())),
        params: cfg.train_params(),
        iterations: cfg.gan.iterations,
        record_every: cfg.gan.record_every,
        seed: cfg.seed,
    };
    let out = flow!(divergence_experiment(&config));
    let text = out.to_csv();
    art.file("divergence.csv", &text)?;
    art.file("pointwise.csv", &out.pointwise.to_csv())?;
    art.file("sorted.csv", &out.sorted.to_csv())?;
    art.plot(
        "divergence.svg",
        &text,
        plot("point-wise vs rank-matched fitting", "iteration", &["jsd_pointwise", "jsd_sorted"]),
    )?;
    let p = out.pointwise.final_jsd().expect("initial state is recorded");
    let s = out.sorted.final_jsd().expect("initial state is recorded");
    art.derive("final_jsd_pointwise", p);
    art.derive("final_jsd_sorted", s);
    art.derive("sorted_below_pointwise", json!(s < p));
    let finite = out.pointwise.rows.iter().chain(&out.sorted.rows).all(|r| r.jsd_hist.is_finite());
    art.audit("finite_traces", if finite { 0.0 } else { 1.0 }, 0.0);
    Ok(Ok(()))
}

/// A positive density made of a few Gaussian bumps, normalized on `grid`.
fn random_density(grid: Grid, s: &mut Stream) -> Result<GridDensity, FlowError> {
    let k = 1 + s.index(3);
    let bumps: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| (0.2 + s.uniform(), 6.0 * s.uniform() - 3.0, 0.3 + 1.5 * s.uniform()))
        .collect();
    GridDensity::from_fn(grid, |y| {
        bumps
            .iter()
            .map(|(w, m, sd)| w * densflow::target::normal_pdf(y, *m, *sd))
            .sum::<f64>()
    })?
    .normalized()
}

fn metrics_audit(cfg: &ExperimentConfig, art: &mut Artifacts<'_>) -> Stage {
    let grid = flow!(cfg.grid());
    let mut s = Stream::child(cfg.seed, "metrics", 0);
    let mut rows = Vec::with_capacity(cfg.metrics.pairs);
    let (mut asym, mut range, mut tv_gap, mut slack) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for k in 0..cfg.metrics.pairs {
        let p = flow!(random_density(grid, &mut s));
        let q = flow!(random_density(grid, &mut s));
        let j = flow!(jsd(&p, &q));
        let j_swap = flow!(jsd(&q, &p));
        let tv = flow!(tv_distance(&p, &q));
        let l1 = flow!(l1_distance(&p, &q));
        asym = asym.max((j - j_swap).abs());
        range = range.max((j - LN_2).max(-j));
        tv_gap = tv_gap.max((l1 - 2.0 * tv).abs());
        slack = slack.max(2.0 * j - LN_2 * l1);
        rows.push(vec![k.to_string(), j.to_string(), j_swap.to_string(), tv.to_string(), l1.to_string()]);
    }
    art.file("metrics.csv", &csv_rows(&["pair", "jsd", "jsd_swapped", "tv", "l1"], rows))?;
    let tol = cfg.audit.metric_tol;
    art.audit("jsd_symmetry", asym, tol);
    art.audit("jsd_range", range.max(0.0), tol);
    art.audit("tv_half_l1", tv_gap, tol);
    art.audit("jsd_l1_inequality", slack.max(0.0), tol);

    // first variation along a smooth compactly supported displacement
    let fine = flow!(Grid::new(cfg.grid.lower, cfg.grid.upper, cfg.metrics.first_variation_n));
    let rho = flow!(flow!(cfg.rho0.model()).discretize(&fine)).density;
    let rd = flow!(flow!(cfg.rho_d.model()).discretize(&fine)).density;
    let center = 0.5 * (cfg.grid.lower + cfg.grid.upper);
    let radius = 0.375 * (cfg.grid.upper - cfg.grid.lower);
    let xi: Vec<f64> = fine
        .nodes()
        .iter()
        .map(|y| {
            let r = (y - center) / radius;
            if r.abs() >= 1.0 {
                0.0
            } else {
                (1.0 - 1.0 / (1.0 - r * r)).exp()
            }
        })
        .collect();
    let mut gaps = Vec::new();
    let mut fv_rows = Vec::new();
    for &eps in &cfg.metrics.first_variation_eps {
        let (lhs, rhs) = flow!(directional_derivative_check(&rho, &rd, &xi, eps));
        gaps.push((lhs - rhs).abs());
        fv_rows.push(vec![eps.to_string(), lhs.to_string(), rhs.to_string(), (lhs - rhs).abs().to_string()]);
    }
    let fv_csv = csv_rows(&["eps", "difference_quotient", "first_variation", "gap"], fv_rows);
    art.file("first_variation.csv", &fv_csv)?;
    art.plot("first_variation.svg", &fv_csv, plot("first-variation gap", "eps", &["gap"]))?;
    // successive eps ratios normalize the observed shrinkage to a halving
    let eps = &cfg.metrics.first_variation_eps;
    let worst_order = gaps
        .windows(2)
        .zip(eps.windows(2))
        .map(|(g, e)| (g[0] / g[1]).ln() / (e[0] / e[1]).ln())
        .fold(f64::INFINITY, f64::min);
    art.derive("first_variation_order", worst_order);
    art.audit_at_least("first_variation_shrinkage", 2f64.powf(worst_order), cfg.audit.shrink_ratio);
    Ok(Ok(()))
}

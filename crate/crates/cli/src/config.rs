//! Line-oriented `key = value` configuration with dotted section keys.
//!
//! Parsing never stops at the first problem: every unknown key, malformed
//! value and failed precondition is collected with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use densflow::fokker_planck::{ResolventOptions, ShiftRule, BETA_MAX, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use densflow::gan::{Assignment, Optimizer, TrainParams};
use densflow::particles::{Bandwidth, Estimator, HistogramSpec, SimulationParams};
use densflow::{Grid, MixtureComponent, TargetModel};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    PdeFlow,
    ParticleFlow,
    GanTrain,
    GanEquivalence,
    MseDivergence,
    MetricsAudit,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::PdeFlow,
        Experiment::ParticleFlow,
        Experiment::GanTrain,
        Experiment::GanEquivalence,
        Experiment::MseDivergence,
        Experiment::MetricsAudit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::PdeFlow => "pde_flow",
            Experiment::ParticleFlow => "particle_flow",
            Experiment::GanTrain => "gan_train",
            Experiment::GanEquivalence => "gan_equivalence",
            Experiment::MseDivergence => "mse_divergence",
            Experiment::MetricsAudit => "metrics_audit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One problem found while loading a configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigIssue {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` is also set on line {first}")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: `{key}` expects {expected}, found `{value}`")]
    TypeMismatch {
        line: usize,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("line {line}: `{key}` {reason}")]
    Precondition { line: usize, key: String, reason: String },
    #[error("line {line}: `{key}` conflicts with `{other}` on line {other_line}")]
    Conflict {
        line: usize,
        key: String,
        other: String,
        other_line: usize,
    },
    #[error("missing required key `{key}`")]
    Missing { key: String },
}

/// All problems found in one configuration text.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s)", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// A one-dimensional target family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Gaussian { mean: f64, std: f64 },
    Logistic { location: f64, scale: f64 },
    Cauchy { location: f64, scale: f64 },
    Mixture { components: Vec<ComponentSpec> },
}

impl ModelSpec {
    pub fn model(&self) -> densflow::Result<TargetModel> {
        match self {
            ModelSpec::Gaussian { mean, std } => TargetModel::gaussian(*mean, *std),
            ModelSpec::Logistic { location, scale } => TargetModel::logistic(*location, *scale),
            ModelSpec::Cauchy { location, scale } => TargetModel::cauchy(*location, *scale),
            ModelSpec::Mixture { components } => TargetModel::mixture(
                components
                    .iter()
                    .map(|c| MixtureComponent {
                        weight: c.weight,
                        mean: c.mean,
                        std: c.std,
                    })
                    .collect(),
            ),
        }
    }

    fn family(&self) -> &'static str {
        match self {
            ModelSpec::Gaussian { .. } => "gaussian",
            ModelSpec::Logistic { .. } => "logistic",
            ModelSpec::Cauchy { .. } => "cauchy",
            ModelSpec::Mixture { .. } => "mixture",
        }
    }

    fn echo(&self, prefix: &str, out: &mut Vec<(String, String)>) {
        out.push((format!("{prefix}.family"), self.family().into()));
        match self {
            ModelSpec::Gaussian { mean, std } => {
                out.push((format!("{prefix}.mean"), mean.to_string()));
                out.push((format!("{prefix}.std"), std.to_string()));
            }
            ModelSpec::Logistic { location, scale } | ModelSpec::Cauchy { location, scale } => {
                out.push((format!("{prefix}.location"), location.to_string()));
                out.push((format!("{prefix}.scale"), scale.to_string()));
            }
            ModelSpec::Mixture { components } => {
                let text: Vec<String> = components.iter().map(|c| format!("{}:{}:{}", c.weight, c.mean, c.std)).collect();
                out.push((format!("{prefix}.components"), text.join(", ")));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeSpec {
    pub t_final: f64,
    pub n_steps: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub shift: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleSpec {
    pub m: usize,
    pub eps: f64,
    pub n_steps: usize,
    pub refit_every: usize,
    pub record_every: usize,
    /// `silverman`, or a positive fixed width.
    pub bandwidth: String,
    pub estimator: String,
    pub nodes_per_bandwidth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramConfig {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GanSpec {
    pub hidden: Vec<usize>,
    pub m: usize,
    pub eps: f64,
    pub lr_d: f64,
    pub lr_g: f64,
    pub k_d: usize,
    pub g_steps: usize,
    pub iterations: usize,
    pub record_every: usize,
    pub eval_m: usize,
    pub assignment: String,
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceSpec {
    pub trials: usize,
    pub batch: usize,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSpec {
    pub pairs: usize,
    pub first_variation_n: usize,
    pub first_variation_eps: Vec<f64>,
}

/// Thresholds of the invariant audits that decide the exit status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSpec {
    pub jsd_slack: f64,
    pub dissipation_tol: f64,
    pub mass_tol: f64,
    pub bound_slack: f64,
    pub energy_factor: f64,
    pub bracket_tol: f64,
    pub equivalence_tol: f64,
    pub metric_tol: f64,
    pub shrink_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub rho0: ModelSpec,
    pub rho_d: ModelSpec,
    pub grid: GridSpec,
    pub pde: PdeSpec,
    pub particle: ParticleSpec,
    pub histogram: HistogramConfig,
    pub gan: GanSpec,
    pub equivalence: EquivalenceSpec,
    pub metrics: MetricsSpec,
    pub audit: AuditSpec,
}

fn bimodal() -> ModelSpec {
    let c = |mean| ComponentSpec {
        weight: 0.5,
        mean,
        std: 0.5,
    };
    ModelSpec::Mixture {
        components: vec![c(-3.0), c(3.0)],
    }
}

impl ExperimentConfig {
    /// Defaults for `experiment`; `seed` still has to be supplied.
    pub fn defaults(experiment: Experiment, seed: u64) -> Self {
        let train = TrainParams::default();
        let divergence = experiment == Experiment::MseDivergence;
        Self {
            experiment,
            seed,
            output_dir: PathBuf::from("runs").join(experiment.name()),
            rho0: ModelSpec::Gaussian { mean: 2.0, std: 0.7 },
            rho_d: if divergence {
                bimodal()
            } else {
                ModelSpec::Gaussian { mean: 0.0, std: 1.0 }
            },
            grid: GridSpec {
                lower: -8.0,
                upper: 8.0,
                n: 401,
            },
            pde: PdeSpec {
                t_final: 6.0,
                n_steps: 600,
                tol: DEFAULT_TOL,
                max_iters: DEFAULT_MAX_ITERS,
                shift: "adaptive".into(),
            },
            particle: ParticleSpec {
                m: 100_000,
                eps: 0.01,
                n_steps: 600,
                refit_every: 1,
                record_every: 10,
                bandwidth: "silverman".into(),
                estimator: "binned".into(),
                nodes_per_bandwidth: 16,
            },
            histogram: HistogramConfig {
                lower: -8.0,
                upper: 8.0,
                bins: if matches!(experiment, Experiment::GanTrain | Experiment::MseDivergence) {
                    train.histogram.bins
                } else {
                    200
                },
            },
            gan: GanSpec {
                hidden: vec![32, 32],
                m: if divergence { 512 } else { train.m },
                eps: if divergence { 50.0 } else { train.eps },
                lr_d: train.lr_d,
                lr_g: if divergence { 0.02 } else { train.lr_g },
                k_d: train.k_d,
                g_steps: train.g_steps,
                iterations: if divergence { 500 } else { 2000 },
                record_every: if divergence { 10 } else { 100 },
                eval_m: train.eval_m,
                assignment: "pointwise".into(),
                optimizer: "sgd".into(),
                beta1: 0.5,
                beta2: 0.999,
                adam_epsilon: 1e-8,
            },
            equivalence: EquivalenceSpec {
                trials: 50,
                batch: 32,
                eps: vec![1e-3, 0.1, 1.0],
            },
            metrics: MetricsSpec {
                pairs: 1000,
                first_variation_n: 4001,
                first_variation_eps: vec![0.04, 0.02, 0.01],
            },
            audit: AuditSpec {
                jsd_slack: 1e-10,
                dissipation_tol: 1e-6,
                mass_tol: 1e-9,
                bound_slack: 1e-12,
                energy_factor: 1.05,
                bracket_tol: 1e-10,
                equivalence_tol: 1e-10,
                metric_tol: 1e-8,
                shrink_ratio: 1.7,
            },
        }
    }

    pub fn grid(&self) -> densflow::Result<Grid> {
        Grid::new(self.grid.lower, self.grid.upper, self.grid.n)
    }

    pub fn histogram_spec(&self) -> HistogramSpec {
        HistogramSpec {
            lower: self.histogram.lower,
            upper: self.histogram.upper,
            bins: self.histogram.bins,
        }
    }

    pub fn resolvent_options(&self) -> ResolventOptions {
        ResolventOptions {
            tol: self.pde.tol,
            max_iters: self.pde.max_iters,
            shift: if self.pde.shift == "fixed" {
                ShiftRule::Fixed
            } else {
                ShiftRule::Adaptive
            },
        }
    }

    pub fn simulation_params(&self) -> SimulationParams {
        let p = &self.particle;
        SimulationParams {
            m: p.m,
            eps: p.eps,
            n_steps: p.n_steps,
            refit_every: p.refit_every,
            seed: self.seed,
            bandwidth: match p.bandwidth.parse::<f64>() {
                Ok(h) => Bandwidth::Fixed(h),
                Err(_) => Bandwidth::Silverman,
            },
            estimator: if p.estimator == "exact" {
                Estimator::Exact
            } else {
                Estimator::Binned(p.nodes_per_bandwidth)
            },
            histogram: self.histogram_spec(),
            record_every: p.record_every,
        }
    }

    pub fn train_params(&self) -> TrainParams {
        let g = &self.gan;
        TrainParams {
            m: g.m,
            eps: g.eps,
            lr_d: g.lr_d,
            lr_g: g.lr_g,
            k_d: g.k_d,
            g_steps: g.g_steps,
            assignment: if g.assignment == "sorted" {
                Assignment::Sorted
            } else {
                Assignment::Pointwise
            },
            optimizer: if g.optimizer == "adam" {
                Optimizer::Adam {
                    beta1: g.beta1,
                    beta2: g.beta2,
                    epsilon: g.adam_epsilon,
                }
            } else {
                Optimizer::Sgd
            },
            freeze_discriminator: false,
            eval_m: g.eval_m,
            histogram: self.histogram_spec(),
        }
    }

    /// Every setting as `key = value` lines, accepted back by [`parse_config`].
    pub fn to_text(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            ("experiment".into(), self.experiment.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("output_dir".into(), self.output_dir.display().to_string()),
        ];
        self.rho0.echo("rho0", &mut kv);
        self.rho_d.echo("rho_d", &mut kv);
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let g = &self.gan;
        let p = &self.particle;
        let a = &self.audit;
        let rest: Vec<(&str, String)> = vec![
            ("grid.lower", self.grid.lower.to_string()),
            ("grid.upper", self.grid.upper.to_string()),
            ("grid.n", self.grid.n.to_string()),
            ("pde.t_final", self.pde.t_final.to_string()),
            ("pde.n_steps", self.pde.n_steps.to_string()),
            ("pde.tol", self.pde.tol.to_string()),
            ("pde.max_iters", self.pde.max_iters.to_string()),
            ("pde.shift", self.pde.shift.clone()),
            ("particle.m", p.m.to_string()),
            ("particle.eps", p.eps.to_string()),
            ("particle.n_steps", p.n_steps.to_string()),
            ("particle.refit_every", p.refit_every.to_string()),
            ("particle.record_every", p.record_every.to_string()),
            ("particle.bandwidth", p.bandwidth.clone()),
            ("particle.estimator", p.estimator.clone()),
            ("particle.nodes_per_bandwidth", p.nodes_per_bandwidth.to_string()),
            ("histogram.lower", self.histogram.lower.to_string()),
            ("histogram.upper", self.histogram.upper.to_string()),
            ("histogram.bins", self.histogram.bins.to_string()),
            (
                "gan.hidden",
                g.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
            ),
            ("gan.m", g.m.to_string()),
            ("gan.eps", g.eps.to_string()),
            ("gan.lr_d", g.lr_d.to_string()),
            ("gan.lr_g", g.lr_g.to_string()),
            ("gan.k_d", g.k_d.to_string()),
            ("gan.g_steps", g.g_steps.to_string()),
            ("gan.iterations", g.iterations.to_string()),
            ("gan.record_every", g.record_every.to_string()),
            ("gan.eval_m", g.eval_m.to_string()),
            ("gan.assignment", g.assignment.clone()),
            ("gan.optimizer", g.optimizer.clone()),
            ("gan.beta1", g.beta1.to_string()),
            ("gan.beta2", g.beta2.to_string()),
            ("gan.adam_epsilon", g.adam_epsilon.to_string()),
            ("equivalence.trials", self.equivalence.trials.to_string()),
            ("equivalence.batch", self.equivalence.batch.to_string()),
            ("equivalence.eps", list(&self.equivalence.eps)),
            ("metrics.pairs", self.metrics.pairs.to_string()),
            ("metrics.first_variation_n", self.metrics.first_variation_n.to_string()),
            ("metrics.first_variation_eps", list(&self.metrics.first_variation_eps)),
            ("audit.jsd_slack", a.jsd_slack.to_string()),
            ("audit.dissipation_tol", a.dissipation_tol.to_string()),
            ("audit.mass_tol", a.mass_tol.to_string()),
            ("audit.bound_slack", a.bound_slack.to_string()),
            ("audit.energy_factor", a.energy_factor.to_string()),
            ("audit.bracket_tol", a.bracket_tol.to_string()),
            ("audit.equivalence_tol", a.equivalence_tol.to_string()),
            ("audit.metric_tol", a.metric_tol.to_string()),
            ("audit.shrink_ratio", a.shrink_ratio.to_string()),
        ];
        kv.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// Overrides applied on top of the file, typically from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Parses a self-contained configuration; `experiment` and `seed` must be set.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_with(text, &Overrides::default())
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

enum Bad {
    Type(&'static str),
    Reason(String),
}

fn number(raw: &str) -> Result<f64, Bad> {
    raw.parse::<f64>().map_err(|_| Bad::Type("a number"))
}

fn count(raw: &str) -> Result<usize, Bad> {
    raw.parse::<usize>().map_err(|_| Bad::Type("a nonnegative integer"))
}

fn numbers(raw: &str) -> Result<Vec<f64>, Bad> {
    raw.split(',').map(|s| number(s.trim())).collect::<Result<_, _>>().map_err(|_| Bad::Type("a comma-separated list of numbers"))
}

fn choice(raw: &str, options: &[&str]) -> Result<String, Bad> {
    if options.contains(&raw) {
        Ok(raw.to_string())
    } else {
        Err(Bad::Reason(format!("must be one of {}", options.join(", "))))
    }
}

fn positive(x: f64) -> Result<f64, Bad> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Bad::Reason(format!("must be positive, got {x}")))
    }
}

fn nonnegative(x: f64) -> Result<f64, Bad> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(Bad::Reason(format!("must be nonnegative, got {x}")))
    }
}

fn at_least(n: usize, min: usize) -> Result<usize, Bad> {
    if n >= min {
        Ok(n)
    } else {
        Err(Bad::Reason(format!("must be at least {min}, got {n}")))
    }
}

fn components(raw: &str) -> Result<Vec<ComponentSpec>, Bad> {
    let expected = "components written as weight:mean:std, separated by commas";
    raw.split(',')
        .map(|part| {
            let f: Vec<&str> = part.trim().split(':').collect();
            if f.len() != 3 {
                return Err(Bad::Type(expected));
            }
            let v: Vec<f64> = f.iter().map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| Bad::Type(expected))?;
            Ok(ComponentSpec {
                weight: v[0],
                mean: v[1],
                std: v[2],
            })
        })
        .collect()
}

/// Keys read by a model section, with the families that use each.
const MODEL_KEYS: [(&str, &[&str]); 5] = [
    ("family", &["gaussian", "logistic", "cauchy", "mixture"]),
    ("mean", &["gaussian"]),
    ("std", &["gaussian"]),
    ("location", &["logistic", "cauchy"]),
    ("scale", &["logistic", "cauchy"]),
];

fn model_section(
    prefix: &str,
    entries: &BTreeMap<String, Entry>,
    default: &ModelSpec,
    issues: &mut Vec<ConfigIssue>,
) -> ModelSpec {
    let key = |k: &str| format!("{prefix}.{k}");
    let get = |k: &str| entries.get(&key(k));
    let family = match get("family") {
        Some(e) => e.value.clone(),
        None => default.family().to_string(),
    };
    let mut num = |k: &str, fallback: f64| -> f64 {
        match get(k) {
            Some(e) => match number(&e.value) {
                Ok(x) => x,
                Err(_) => {
                    issues.push(ConfigIssue::TypeMismatch {
                        line: e.line,
                        key: key(k),
                        expected: "a number",
                        value: e.value.clone(),
                    });
                    fallback
                }
            },
            None => fallback,
        }
    };
    let spec = match family.as_str() {
        "gaussian" => {
            let (m, s) = match default {
                ModelSpec::Gaussian { mean, std } if get("family").is_none() => (*mean, *std),
                _ => (0.0, 1.0),
            };
            ModelSpec::Gaussian {
                mean: num("mean", m),
                std: num("std", s),
            }
        }
        "logistic" | "cauchy" => {
            let (location, scale) = (num("location", 0.0), num("scale", 1.0));
            if family == "logistic" {
                ModelSpec::Logistic { location, scale }
            } else {
                ModelSpec::Cauchy { location, scale }
            }
        }
        "mixture" => match get("components") {
            Some(e) => match components(&e.value) {
                Ok(c) => ModelSpec::Mixture { components: c },
                Err(_) => {
                    issues.push(ConfigIssue::TypeMismatch {
                        line: e.line,
                        key: key("components"),
                        expected: "components written as weight:mean:std, separated by commas",
                        value: e.value.clone(),
                    });
                    default.clone()
                }
            },
            None if matches!(default, ModelSpec::Mixture { .. }) && get("family").is_none() => default.clone(),
            None => {
                issues.push(ConfigIssue::Missing { key: key("components") });
                default.clone()
            }
        },
        other => {
            let e = get("family").expect("non-default family comes from the file");
            issues.push(ConfigIssue::Precondition {
                line: e.line,
                key: key("family"),
                reason: format!("must be one of gaussian, logistic, cauchy, mixture, got `{other}`"),
            });
            return default.clone();
        }
    };
    // parameters that the chosen family does not read
    for (k, families) in MODEL_KEYS.iter().skip(1) {
        if let Some(e) = get(k) {
            if !families.contains(&spec.family()) {
                issues.push(ConfigIssue::Precondition {
                    line: e.line,
                    key: key(k),
                    reason: format!("is not a parameter of the {} family", spec.family()),
                });
            }
        }
    }
    if let (Some(e), false) = (get("components"), spec.family() == "mixture") {
        issues.push(ConfigIssue::Precondition {
            line: e.line,
            key: key("components"),
            reason: format!("is not a parameter of the {} family", spec.family()),
        });
    }
    if let Err(err) = spec.model() {
        let line = get("family").or_else(|| entries.iter().find(|(k, _)| k.starts_with(prefix)).map(|(_, e)| e)).map_or(0, |e| e.line);
        issues.push(ConfigIssue::Precondition {
            line,
            key: prefix.to_string(),
            reason: err.to_string(),
        });
    }
    spec
}

/// Parses `text`, applying `overrides` before validation.
pub fn parse_with(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut issues = Vec::new();
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            issues.push(ConfigIssue::Syntax {
                line,
                text: content.to_string(),
            });
            continue;
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            issues.push(ConfigIssue::Syntax {
                line,
                text: content.to_string(),
            });
            continue;
        }
        if let Some(first) = entries.get(&k) {
            issues.push(ConfigIssue::Duplicate {
                line,
                key: k,
                first: first.line,
            });
            continue;
        }
        entries.insert(k, Entry { line, value: v });
    }

    let file_experiment = entries.get("experiment").map(|e| (e.line, Experiment::from_name(&e.value), e.value.clone()));
    let experiment = match (&file_experiment, overrides.experiment) {
        (Some((line, None, value)), _) => {
            issues.push(ConfigIssue::Precondition {
                line: *line,
                key: "experiment".into(),
                reason: format!("unknown experiment `{value}`"),
            });
            overrides.experiment
        }
        (Some((line, Some(e), _)), Some(o)) if *e != o => {
            issues.push(ConfigIssue::Precondition {
                line: *line,
                key: "experiment".into(),
                reason: format!("names `{e}` but the command runs `{o}`"),
            });
            Some(o)
        }
        (Some((_, Some(e), _)), _) => Some(*e),
        (None, o) => o,
    };
    let seed = match (entries.get("seed"), overrides.seed) {
        (_, Some(s)) => Some(s),
        (Some(e), None) => match e.value.parse::<u64>() {
            Ok(s) => Some(s),
            Err(_) => {
                issues.push(ConfigIssue::TypeMismatch {
                    line: e.line,
                    key: "seed".into(),
                    expected: "a nonnegative integer",
                    value: e.value.clone(),
                });
                None
            }
        },
        (None, None) => None,
    };
    let Some(experiment) = experiment else {
        issues.push(ConfigIssue::Missing { key: "experiment".into() });
        return Err(ConfigError { issues });
    };
    if seed.is_none() && !entries.contains_key("seed") {
        issues.push(ConfigIssue::Missing { key: "seed".into() });
    }
    let mut cfg = ExperimentConfig::defaults(experiment, seed.unwrap_or(0));
    let defaults = cfg.clone();

    cfg.rho0 = model_section("rho0", &entries, &defaults.rho0, &mut issues);
    cfg.rho_d = model_section("rho_d", &entries, &defaults.rho_d, &mut issues);

    for (key, entry) in &entries {
        let raw = entry.value.as_str();
        let (section, _) = key.split_once('.').unwrap_or((key.as_str(), ""));
        if matches!(section, "rho0" | "rho_d") {
            let field = &key[section.len() + 1..];
            if !(MODEL_KEYS.iter().any(|(k, _)| *k == field) || field == "components") {
                issues.push(ConfigIssue::UnknownKey {
                    line: entry.line,
                    key: key.clone(),
                });
            }
            continue;
        }
        let outcome: Result<(), Bad> = (|| {
            match key.as_str() {
                "experiment" | "seed" => {}
                "output_dir" => cfg.output_dir = PathBuf::from(raw),
                "grid.lower" => cfg.grid.lower = number(raw)?,
                "grid.upper" => cfg.grid.upper = number(raw)?,
                "grid.n" => cfg.grid.n = at_least(count(raw)?, 3)?,
                "pde.t_final" => cfg.pde.t_final = positive(number(raw)?)?,
                "pde.n_steps" => cfg.pde.n_steps = at_least(count(raw)?, 1)?,
                "pde.tol" => cfg.pde.tol = positive(number(raw)?)?,
                "pde.max_iters" => cfg.pde.max_iters = at_least(count(raw)?, 1)?,
                "pde.shift" => cfg.pde.shift = choice(raw, &["adaptive", "fixed"])?,
                "particle.m" => cfg.particle.m = at_least(count(raw)?, 2)?,
                "particle.eps" => cfg.particle.eps = positive(number(raw)?)?,
                "particle.n_steps" => cfg.particle.n_steps = count(raw)?,
                "particle.refit_every" => cfg.particle.refit_every = at_least(count(raw)?, 1)?,
                "particle.record_every" => cfg.particle.record_every = at_least(count(raw)?, 1)?,
                "particle.bandwidth" => cfg.particle.bandwidth = choice(raw, &["silverman"])?,
                "particle.fixed_bandwidth" => cfg.particle.bandwidth = positive(number(raw)?)?.to_string(),
                "particle.estimator" => cfg.particle.estimator = choice(raw, &["exact", "binned"])?,
                "particle.nodes_per_bandwidth" => cfg.particle.nodes_per_bandwidth = at_least(count(raw)?, 2)?,
                "histogram.lower" => cfg.histogram.lower = number(raw)?,
                "histogram.upper" => cfg.histogram.upper = number(raw)?,
                "histogram.bins" => cfg.histogram.bins = at_least(count(raw)?, 1)?,
                "gan.hidden" => {
                    let sizes: Vec<usize> = raw
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| Bad::Type("a comma-separated list of layer widths"))?;
                    if sizes.contains(&0) {
                        return Err(Bad::Reason("layer widths must be positive".into()));
                    }
                    cfg.gan.hidden = sizes;
                }
                "gan.m" => cfg.gan.m = at_least(count(raw)?, 1)?,
                "gan.eps" => cfg.gan.eps = nonnegative(number(raw)?)?,
                "gan.lr_d" => cfg.gan.lr_d = positive(number(raw)?)?,
                "gan.lr_g" => cfg.gan.lr_g = positive(number(raw)?)?,
                "gan.k_d" => cfg.gan.k_d = at_least(count(raw)?, 1)?,
                "gan.g_steps" => cfg.gan.g_steps = at_least(count(raw)?, 1)?,
                "gan.iterations" => cfg.gan.iterations = count(raw)?,
                "gan.record_every" => cfg.gan.record_every = at_least(count(raw)?, 1)?,
                "gan.eval_m" => cfg.gan.eval_m = at_least(count(raw)?, 1)?,
                "gan.assignment" => cfg.gan.assignment = choice(raw, &["pointwise", "sorted"])?,
                "gan.optimizer" => cfg.gan.optimizer = choice(raw, &["sgd", "adam"])?,
                "gan.beta1" => cfg.gan.beta1 = nonnegative(number(raw)?)?,
                "gan.beta2" => cfg.gan.beta2 = nonnegative(number(raw)?)?,
                "gan.adam_epsilon" => cfg.gan.adam_epsilon = positive(number(raw)?)?,
                "equivalence.trials" => cfg.equivalence.trials = at_least(count(raw)?, 1)?,
                "equivalence.batch" => cfg.equivalence.batch = at_least(count(raw)?, 1)?,
                "equivalence.eps" => {
                    let eps = numbers(raw)?;
                    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                        return Err(Bad::Reason("step sizes must be nonnegative".into()));
                    }
                    cfg.equivalence.eps = eps;
                }
                "metrics.pairs" => cfg.metrics.pairs = at_least(count(raw)?, 1)?,
                "metrics.first_variation_n" => cfg.metrics.first_variation_n = at_least(count(raw)?, 3)?,
                "metrics.first_variation_eps" => {
                    let eps = numbers(raw)?;
                    if eps.len() < 2 || eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                        return Err(Bad::Reason("needs at least two positive step sizes".into()));
                    }
                    cfg.metrics.first_variation_eps = eps;
                }
                "audit.jsd_slack" => cfg.audit.jsd_slack = positive(number(raw)?)?,
                "audit.dissipation_tol" => cfg.audit.dissipation_tol = positive(number(raw)?)?,
                "audit.mass_tol" => cfg.audit.mass_tol = positive(number(raw)?)?,
                "audit.bound_slack" => cfg.audit.bound_slack = positive(number(raw)?)?,
                "audit.energy_factor" => cfg.audit.energy_factor = positive(number(raw)?)?,
                "audit.bracket_tol" => cfg.audit.bracket_tol = positive(number(raw)?)?,
                "audit.equivalence_tol" => cfg.audit.equivalence_tol = positive(number(raw)?)?,
                "audit.metric_tol" => cfg.audit.metric_tol = positive(number(raw)?)?,
                "audit.shrink_ratio" => cfg.audit.shrink_ratio = positive(number(raw)?)?,
                _ => return Err(Bad::Reason(String::new())),
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => {}
            Err(Bad::Reason(r)) if r.is_empty() => issues.push(ConfigIssue::UnknownKey {
                line: entry.line,
                key: key.clone(),
            }),
            Err(Bad::Type(expected)) => issues.push(ConfigIssue::TypeMismatch {
                line: entry.line,
                key: key.clone(),
                expected,
                value: raw.to_string(),
            }),
            Err(Bad::Reason(reason)) => issues.push(ConfigIssue::Precondition {
                line: entry.line,
                key: key.clone(),
                reason,
            }),
        }
    }
    if let Some(dir) = &overrides.output_dir {
        cfg.output_dir = dir.clone();
    }

    if let (Some(a), Some(b)) = (entries.get("particle.bandwidth"), entries.get("particle.fixed_bandwidth")) {
        issues.push(ConfigIssue::Conflict {
            line: b.line.max(a.line),
            key: if b.line > a.line { "particle.fixed_bandwidth" } else { "particle.bandwidth" }.into(),
            other: if b.line > a.line { "particle.bandwidth" } else { "particle.fixed_bandwidth" }.into(),
            other_line: a.line.min(b.line),
        });
    }
    cross_checks(&cfg, &entries, &mut issues);

    if issues.is_empty() {
        Ok(cfg)
    } else {
        issues.sort_by_key(|i| i.line().unwrap_or(usize::MAX));
        Err(ConfigError { issues })
    }
}

impl ConfigIssue {
    /// Line the issue points at; `None` for keys that are missing altogether.
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigIssue::Syntax { line, .. }
            | ConfigIssue::UnknownKey { line, .. }
            | ConfigIssue::Duplicate { line, .. }
            | ConfigIssue::TypeMismatch { line, .. }
            | ConfigIssue::Precondition { line, .. }
            | ConfigIssue::Conflict { line, .. } => Some(*line),
            ConfigIssue::Missing { .. } => None,
        }
    }

    /// The key the issue is about.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigIssue::Syntax { .. } => None,
            ConfigIssue::UnknownKey { key, .. }
            | ConfigIssue::Duplicate { key, .. }
            | ConfigIssue::TypeMismatch { key, .. }
            | ConfigIssue::Precondition { key, .. }
            | ConfigIssue::Conflict { key, .. }
            | ConfigIssue::Missing { key } => Some(key),
        }
    }
}

fn line_of(entries: &BTreeMap<String, Entry>, keys: &[&str]) -> usize {
    keys.iter().filter_map(|k| entries.get(*k)).map(|e| e.line).max().unwrap_or(0)
}

/// Preconditions that involve several keys or a module's own validation.
fn cross_checks(cfg: &ExperimentConfig, entries: &BTreeMap<String, Entry>, issues: &mut Vec<ConfigIssue>) {
    let mut fail = |keys: &[&str], reason: String| {
        issues.push(ConfigIssue::Precondition {
            line: line_of(entries, keys),
            key: keys[0].to_string(),
            reason,
        });
    };
    let uses_grid = matches!(cfg.experiment, Experiment::PdeFlow | Experiment::MetricsAudit);
    if uses_grid {
        match cfg.grid() {
            Err(e) => fail(&["grid.lower", "grid.upper", "grid.n"], e.to_string()),
            Ok(grid) => {
                for (name, spec) in [("rho0", &cfg.rho0), ("rho_d", &cfg.rho_d)] {
                    if let Ok(model) = spec.model() {
                        if let Err(e) = model.discretize(&grid) {
                            fail(&[name, "grid.lower", "grid.upper"], e.to_string());
                        }
                    }
                }
            }
        }
    }
    if cfg.experiment == Experiment::PdeFlow {
        if let (Ok(grid), Ok(r0), Ok(rd)) = (cfg.grid(), cfg.rho0.model(), cfg.rho_d.model()) {
            if let (Ok(a), Ok(b)) = (r0.discretize(&grid), rd.discretize(&grid)) {
                if let Ok(v) = densflow::RatioField::from_densities(&a.density, &b.density) {
                    if v.max() > BETA_MAX {
                        fail(&["rho0", "grid.lower", "grid.upper"], format!("initial ratio bound {:e} exceeds {BETA_MAX:e}", v.max()));
                    }
                }
            }
        }
    }
    if !(cfg.histogram.lower < cfg.histogram.upper) {
        fail(&["histogram.lower", "histogram.upper"], "lower edge must be below the upper edge".into());
    }
    if cfg.experiment == Experiment::ParticleFlow {
        if let Err(e) = cfg.simulation_params().validate() {
            fail(&["particle.m", "particle.eps", "particle.n_steps"], e.to_string());
        }
    }
    if matches!(cfg.experiment, Experiment::GanTrain | Experiment::MseDivergence) {
        if let Err(e) = cfg.train_params().validate() {
            fail(&["gan.m", "gan.eps", "gan.lr_d", "gan.lr_g"], e.to_string());
        }
        if cfg.gan.beta1 >= 1.0 || cfg.gan.beta2 >= 1.0 {
            fail(&["gan.beta1", "gan.beta2"], "Adam decay rates must lie in [0, 1)".into());
        }
    }
}

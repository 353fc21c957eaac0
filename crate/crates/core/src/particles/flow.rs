use std::fmt::Write as _;

use crate::drift::{is_saturated, D_CEILING};
use crate::error::{FlowError, Result};
use crate::grid::Grid;

use super::ensemble::{init_product_ensemble, ParticleEnsemble, ProductTarget};
use super::kde::{Bandwidth, BinnedKde, DensityModel, KdeDensity};

/// Anything that returns `D(y)` and writes `∇D(y)` into `grad`.
pub trait Discriminator: Sync {
    fn evaluate(&self, y: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Discriminator for F
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn evaluate(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        self(y, grad)
    }
}

/// `D = ρ_d/(ρ_d + ρ̂)` built from two densities.
pub struct ExactDiscriminator<'a, E: DensityModel + ?Sized> {
    pub rho_d: &'a ProductTarget,
    pub rho_hat: &'a E,
}

impl<E: DensityModel + ?Sized> Discriminator for ExactDiscriminator<'_, E> {
    fn evaluate(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        exact_discriminator_into(self.rho_d, self.rho_hat, y, grad)
    }
}

fn exact_discriminator_into<E: DensityModel + ?Sized>(
    rho_d: &ProductTarget,
    rho_hat: &E,
    y: &[f64],
    grad: &mut [f64],
) -> f64 {
    let d = rho_d.dim();
    let mut g_hat = [0.0; 2];
    let p = rho_d.pdf(y);
    let q = rho_hat.density_and_gradient(y, &mut g_hat[..d]);
    let s = p + q;
    // ∇D = ρ_d (ρ̂ ∇ln ρ_d - ∇ρ̂) / s²; exactly 0 when ρ̂ is ρ_d itself
    for (k, model) in rho_d.marginals().iter().enumerate() {
        let score = model.grad_log_pdf(y[k]);
        grad[k] = p * (score * q - g_hat[k]) / (s * s);
    }
    p / s
}

/// `(D(y), ∇D(y))` with the analytic kernel derivative.
pub fn exact_discriminator<E: DensityModel + ?Sized>(
    rho_d: &ProductTarget,
    rho_hat: &E,
    y: &[f64],
) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; rho_d.dim()];
    let d = exact_discriminator_into(rho_d, rho_hat, y, &mut g);
    (d, g)
}

/// `y ← y + ε ∇D(y) / (2(1 - D(y)))` for every particle.
pub fn euler_step<D: Discriminator + ?Sized>(
    ens: &ParticleEnsemble,
    disc: &D,
    eps: f64,
) -> Result<ParticleEnsemble> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(FlowError::InvalidParameter {
            name: "eps",
            reason: format!("must be positive, got {eps}"),
        });
    }
    let dim = ens.dim();
    let mut next = ens.positions().to_vec();
    let mut saturated = Vec::new();
    let mut grad = [0.0; 2];
    for (i, y) in next.chunks_exact_mut(dim).enumerate() {
        let d = disc.evaluate(y, &mut grad[..dim]);
        if !(d >= 0.0) {
            return Err(FlowError::InvalidParameter {
                name: "D",
                reason: format!("discriminator value {d} at particle {i} is outside [0, 1]"),
            });
        }
        if is_saturated(d, D_CEILING) {
            saturated.push(i);
            continue;
        }
        let scale = eps / (2.0 * (1.0 - d));
        for k in 0..dim {
            y[k] += scale * grad[k];
        }
    }
    if !saturated.is_empty() {
        return Err(FlowError::DiscriminatorSaturation {
            ceiling: D_CEILING,
            indices: saturated,
        });
    }
    if let Some(i) = next.iter().position(|x| !x.is_finite()) {
        return Err(FlowError::Divergence(format!("particle {} left the reals", i / dim)));
    }
    ParticleEnsemble::new(dim, next, ens.time() + eps, ens.seed())
}

/// Axis-aligned histogram window, shared by all axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl HistogramSpec {
    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.bins as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || self.bins == 0 {
            return Err(FlowError::InvalidParameter {
                name: "histogram",
                reason: format!("bad window [{}, {}] with {} bins", self.lower, self.upper, self.bins),
            });
        }
        Ok(())
    }

    fn bin(&self, x: f64) -> Option<usize> {
        let s = (x - self.lower) / self.width();
        if s >= 0.0 && s < self.bins as f64 {
            Some((s as usize).min(self.bins - 1))
        } else if x == self.upper {
            Some(self.bins - 1)
        } else {
            None
        }
    }
}

/// Fraction of particles per bin (row-major over axes). Particles outside the
/// window are dropped, so the total may fall short of 1.
pub fn histogram_probabilities(ens: &ParticleEnsemble, spec: &HistogramSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let d = ens.dim();
    let mut counts = vec![0.0; spec.bins.pow(d as u32)];
    let w = 1.0 / ens.len() as f64;
    for p in ens.points() {
        let mut idx = 0;
        let mut inside = true;
        for &x in p {
            match spec.bin(x) {
                Some(b) => idx = idx * spec.bins + b,
                None => inside = false,
            }
        }
        if inside {
            counts[idx] += w;
        }
    }
    Ok(counts)
}

/// Normalized 1-D histogram heights (probability / bin width).
pub fn histogram_density(ens: &ParticleEnsemble, spec: &HistogramSpec) -> Result<Vec<f64>> {
    if ens.dim() != 1 {
        return Err(FlowError::UnsupportedDimension(ens.dim()));
    }
    let w = spec.width();
    Ok(histogram_probabilities(ens, spec)?.into_iter().map(|p| p / w).collect())
}

/// Bin probabilities of `target` on the histogram lattice.
pub fn target_bin_probabilities(target: &ProductTarget, spec: &HistogramSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let d = target.dim();
    let w = spec.width();
    let edge = |b: usize| spec.lower + b as f64 * w;
    let total = spec.bins.pow(d as u32);
    Ok((0..total)
        .map(|flat| {
            let mut a = [0.0; 2];
            let mut b = [0.0; 2];
            let mut rest = flat;
            for k in (0..d).rev() {
                let bin = rest % spec.bins;
                rest /= spec.bins;
                a[k] = edge(bin);
                b[k] = edge(bin + 1);
            }
            target.box_probability(&a[..d], &b[..d])
        })
        .collect())
}

/// Discrete JSD between two bin-probability vectors.
pub fn discrete_jsd(p: &[f64], q: &[f64]) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (2.0 * a / (a + b)).ln() } else { 0.0 };
    p.iter()
        .zip(q)
        .map(|(&a, &b)| 0.5 * term(a, b) + 0.5 * term(b, a))
        .sum()
}

/// Histogram JSD of the ensemble against `target`.
pub fn histogram_jsd(ens: &ParticleEnsemble, target: &ProductTarget, spec: &HistogramSpec) -> Result<f64> {
    if ens.dim() != target.dim() {
        return Err(FlowError::UnsupportedDimension(ens.dim()));
    }
    let p = histogram_probabilities(ens, spec)?;
    let q = target_bin_probabilities(target, spec)?;
    Ok(discrete_jsd(&p, &q))
}

/// Bin averages of the piecewise-linear interpolant of grid values.
pub fn bin_averages(grid: &Grid, values: &[f64], spec: &HistogramSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    grid.check_len(values.len())?;
    let h = grid.spacing();
    let n = grid.len();
    let mut cumulative = vec![0.0; n];
    for i in 1..n {
        cumulative[i] = cumulative[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
    }
    let primitive = |x: f64| {
        let x = x.clamp(grid.lower(), grid.upper());
        let s = (x - grid.lower()) / h;
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        cumulative[i] + h * (values[i] * t + 0.5 * (values[i + 1] - values[i]) * t * t)
    };
    let w = spec.width();
    Ok((0..spec.bins)
        .map(|b| {
            let a = spec.lower + b as f64 * w;
            (primitive(a + w) - primitive(a)) / w
        })
        .collect())
}

/// How the density of the moving ensemble is estimated at each refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// Direct kernel sum, `O(m²)` per refit.
    Exact,
    /// Lattice-binned kernel sum with this many nodes per bandwidth.
    Binned(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    pub m: usize,
    pub eps: f64,
    pub n_steps: usize,
    pub refit_every: usize,
    pub seed: u64,
    pub bandwidth: Bandwidth,
    pub estimator: Estimator,
    pub histogram: HistogramSpec,
    /// Trace rows are written every `record_every` steps and at the end.
    pub record_every: usize,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            m: 100_000,
            eps: 0.01,
            n_steps: 600,
            refit_every: 1,
            seed: 0,
            bandwidth: Bandwidth::Silverman,
            estimator: Estimator::Binned(16),
            histogram: HistogramSpec {
                lower: -8.0,
                upper: 8.0,
                bins: 200,
            },
            record_every: 1,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(FlowError::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.m == 0 {
            return bad("m", "must be at least 1");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps", "must be positive");
        }
        if self.refit_every == 0 {
            return bad("refit_every", "must be at least 1");
        }
        if self.record_every == 0 {
            return bad("record_every", "must be at least 1");
        }
        self.histogram.validate()
    }
}

/// Per-record diagnostics of a particle run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrace {
    pub dim: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub hist_jsd: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl ParticleTrace {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            steps: Vec::new(),
            times: Vec::new(),
            hist_jsd: Vec::new(),
            means: Vec::new(),
            variances: Vec::new(),
        }
    }

    fn record(&mut self, step: usize, ens: &ParticleEnsemble, target: &ProductTarget, spec: &HistogramSpec) -> Result<()> {
        self.steps.push(step);
        self.times.push(ens.time());
        self.hist_jsd.push(histogram_jsd(ens, target, spec)?);
        self.means.push(ens.mean());
        self.variances.push(ens.variance());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Columns `step,time,hist_jsd,mean,variance`, plus `mean_y,variance_y` in 2-D.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,time,hist_jsd,mean,variance");
        if self.dim == 2 {
            out.push_str(",mean_y,variance_y");
        }
        out.push('\n');
        for r in 0..self.len() {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                self.steps[r], self.times[r], self.hist_jsd[r], self.means[r][0], self.variances[r][0]
            );
            if self.dim == 2 {
                let _ = write!(out, ",{},{}", self.means[r][1], self.variances[r][1]);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub ensemble: ParticleEnsemble,
    pub trace: ParticleTrace,
}

enum Fitted {
    Exact(KdeDensity),
    Binned(BinnedKde),
}

fn fit(ens: &ParticleEnsemble, params: &SimulationParams) -> Result<Fitted> {
    Ok(match params.estimator {
        Estimator::Exact => Fitted::Exact(KdeDensity::new(ens.clone(), params.bandwidth)?),
        Estimator::Binned(k) => Fitted::Binned(BinnedKde::new(ens, params.bandwidth, k)?),
    })
}

/// Explicit Euler transport of an initial sample of `rho0` toward `rho_d`.
///
/// The density of the ensemble is re-estimated every `refit_every` steps and
/// the exact discriminator against `rho_d` drives the step.
pub fn simulate(rho0: &ProductTarget, rho_d: &ProductTarget, params: &SimulationParams) -> Result<SimulationRun> {
    params.validate()?;
    if rho0.dim() != rho_d.dim() {
        return Err(FlowError::UnsupportedDimension(rho0.dim()));
    }
    let ens = init_product_ensemble(rho0, params.m, params.seed)?;
    run_from(ens, rho_d, params)
}

/// Same as [`simulate`] from a given ensemble.
pub fn run_from(mut ens: ParticleEnsemble, rho_d: &ProductTarget, params: &SimulationParams) -> Result<SimulationRun> {
    params.validate()?;
    let mut trace = ParticleTrace::new(ens.dim());
    trace.record(0, &ens, rho_d, &params.histogram)?;
    let mut fitted = None;
    for step in 1..=params.n_steps {
        if (step - 1) % params.refit_every == 0 || fitted.is_none() {
            fitted = Some(fit(&ens, params).map_err(|e| e.at_step(step))?);
        }
        let next = match fitted.as_ref().expect("fitted above") {
            Fitted::Exact(k) => euler_step(&ens, &ExactDiscriminator { rho_d, rho_hat: k }, params.eps),
            Fitted::Binned(k) => euler_step(&ens, &ExactDiscriminator { rho_d, rho_hat: k }, params.eps),
        };
        ens = next.map_err(|e| e.at_step(step))?;
        if step % params.record_every == 0 || step == params.n_steps {
            trace.record(step, &ens, rho_d, &params.histogram)?;
        }
    }
    Ok(SimulationRun { ensemble: ens, trace })
}

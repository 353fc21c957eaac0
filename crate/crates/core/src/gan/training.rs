use std::fmt::Write as _;

use crate::error::{FlowError, Result};
use crate::particles::{histogram_jsd, HistogramSpec, ParticleEnsemble, ProductTarget};
use crate::rng::Stream;

use super::losses::{mlp_gradient, sorted_matching_targets, transport_targets, Loss};
use super::mlp::Mlp;

/// How generator outputs are paired with transported points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assignment {
    /// `G(z_i)` is fitted to `y_i` (the MSE step of the algorithm).
    #[default]
    Pointwise,
    /// `G(z_i)` is fitted to the target of the same rank (1-D only).
    Sorted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

#[derive(Debug, Clone)]
struct OptState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, n: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` along `direction` (`+1` ascends, `-1` descends).
    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64, direction: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += direction * lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + epsilon);
                    params[i] += direction * lr * step;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub m: usize,
    pub eps: f64,
    pub lr_d: f64,
    pub lr_g: f64,
    /// Discriminator ascent steps per iteration.
    pub k_d: usize,
    /// Generator descent steps per iteration against the same targets.
    pub g_steps: usize,
    pub assignment: Assignment,
    pub optimizer: Optimizer,
    /// Skips the discriminator updates, keeping `D` fixed.
    pub freeze_discriminator: bool,
    /// Size of the fixed noise sample used for the histogram JSD.
    pub eval_m: usize,
    pub histogram: HistogramSpec,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            m: 256,
            eps: 1.0,
            lr_d: 0.05,
            lr_g: 0.05,
            k_d: 1,
            g_steps: 1,
            assignment: Assignment::Pointwise,
            optimizer: Optimizer::Sgd,
            freeze_discriminator: false,
            eval_m: 4000,
            histogram: HistogramSpec {
                lower: -8.0,
                upper: 8.0,
                bins: 80,
            },
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(FlowError::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.m == 0 || self.eval_m == 0 {
            return bad("m", "minibatch sizes must be positive");
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return bad("eps", "must be nonnegative");
        }
        if !(self.lr_d > 0.0 && self.lr_g > 0.0 && self.lr_d.is_finite() && self.lr_g.is_finite()) {
            return bad("lr", "learning rates must be positive");
        }
        if self.k_d == 0 {
            return bad("k_d", "must be at least 1");
        }
        if self.g_steps == 0 {
            return bad("g_steps", "must be at least 1");
        }
        Ok(())
    }
}

/// Metrics of one training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Histogram JSD of `G` on the evaluation noise against the data law.
    pub jsd_hist: f64,
    /// Mean `|y_i - G(z_i)|` of the transport step.
    pub mean_displacement: f64,
    /// Euclidean norm of the last discriminator gradient.
    pub grad_norm_d: f64,
    /// Euclidean norm of the last generator gradient.
    pub grad_norm_g: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanTrace {
    pub rows: Vec<IterationDiagnostics>,
}

impl GanTrace {
    /// Columns `iteration,jsd_hist,mean_displacement,grad_norm_D,grad_norm_G`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,jsd_hist,mean_displacement,grad_norm_D,grad_norm_G\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.jsd_hist, r.mean_displacement, r.grad_norm_d, r.grad_norm_g
            );
        }
        out
    }

    pub fn final_jsd(&self) -> Option<f64> {
        self.rows.last().map(|r| r.jsd_hist)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Generator/discriminator pair trained by transport-then-regress iterations.
#[derive(Debug, Clone)]
pub struct GanTrainer {
    pub g: Mlp,
    pub d: Mlp,
    noise: ProductTarget,
    data: ProductTarget,
    params: TrainParams,
    seed: u64,
    iteration: usize,
    opt_g: OptState,
    opt_d: OptState,
    eval_z: Vec<f64>,
}

impl GanTrainer {
    pub fn new(g: Mlp, d: Mlp, noise: ProductTarget, data: ProductTarget, params: TrainParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if g.input_dim() != noise.dim() || g.output_dim() != data.dim() || d.input_dim() != data.dim() || d.output_dim() != 1 {
            return Err(FlowError::InvalidParameter {
                name: "networks",
                reason: format!(
                    "G {:?} and D {:?} do not fit noise dim {} and data dim {}",
                    g.layer_sizes(),
                    d.layer_sizes(),
                    noise.dim(),
                    data.dim()
                ),
            });
        }
        if params.assignment == Assignment::Sorted && data.dim() != 1 {
            return Err(FlowError::UnsupportedDimension(data.dim()));
        }
        let eval_z = noise.sample_with(&mut Stream::child(seed, "eval", 0), params.eval_m);
        Ok(Self {
            opt_g: OptState::new(params.optimizer, g.param_count()),
            opt_d: OptState::new(params.optimizer, d.param_count()),
            g,
            d,
            noise,
            data,
            params,
            seed,
            iteration: 0,
            eval_z,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    /// Histogram JSD of `G` on the fixed evaluation noise.
    pub fn evaluate(&self) -> Result<f64> {
        let n = self.g.input_dim();
        let mut out = Vec::with_capacity(self.params.eval_m * self.g.output_dim());
        for z in self.eval_z.chunks_exact(n) {
            out.extend(self.g.output(z)?);
        }
        let ens = ParticleEnsemble::new(self.g.output_dim(), out, 0.0, self.seed)?;
        histogram_jsd(&ens, &self.data, &self.params.histogram)
    }

    /// One iteration: `k_d` ascent steps on `D`, transport of fresh generator
    /// samples along `∇D/(2(1-D))`, then `g_steps` descent steps of the MSE.
    pub fn step(&mut self) -> Result<IterationDiagnostics> {
        self.advance(true)
    }

    // `jsd_hist` is NaN when `evaluate` is false
    fn advance(&mut self, evaluate: bool) -> Result<IterationDiagnostics> {
        self.iteration += 1;
        let k = self.iteration;
        let p = self.params;
        let mut stream = Stream::child(self.seed, "iteration", k as u64);
        let wrap = |e: FlowError| e.at_step(k);

        let mut grad_norm_d = 0.0;
        for _ in 0..p.k_d {
            let z = self.noise.sample_with(&mut stream, p.m);
            let x = self.data.sample_with(&mut stream, p.m);
            let mut fake = Vec::with_capacity(p.m * self.g.output_dim());
            for zi in z.chunks_exact(self.g.input_dim()) {
                fake.extend(self.g.output(zi).map_err(wrap)?);
            }
            let (_, grad) = mlp_gradient(&self.d, &Loss::DiscriminatorLogistic { data: &x, fake: &fake }).map_err(wrap)?;
            grad_norm_d = norm(&grad);
            if p.freeze_discriminator {
                continue;
            }
            self.opt_d.apply(self.d.params_mut(), &grad, p.lr_d, 1.0);
        }

        let z = self.noise.sample_with(&mut stream, p.m);
        let (outputs, mut targets) = transport_targets(&self.g, &self.d, &z, p.eps).map_err(wrap)?;
        if p.assignment == Assignment::Sorted {
            targets = sorted_matching_targets(&outputs, &targets, 1).map_err(wrap)?;
        }
        let dim = self.g.output_dim();
        let mean_displacement = outputs
            .chunks_exact(dim)
            .zip(targets.chunks_exact(dim))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / p.m as f64;

        let mut grad_norm_g = 0.0;
        for _ in 0..p.g_steps {
            let (_, grad) = mlp_gradient(&self.g, &Loss::GeneratorMse { z: &z, targets: &targets }).map_err(wrap)?;
            grad_norm_g = norm(&grad);
            self.opt_g.apply(self.g.params_mut(), &grad, p.lr_g, -1.0);
        }

        if self.g.params().iter().chain(self.d.params()).any(|x| !x.is_finite()) {
            return Err(FlowError::Divergence("network parameters are no longer finite".into()).at_step(k));
        }
        Ok(IterationDiagnostics {
            iteration: k,
            jsd_hist: if evaluate { self.evaluate().map_err(wrap)? } else { f64::NAN },
            mean_displacement,
            grad_norm_d,
            grad_norm_g,
        })
    }

    /// Runs `iterations` steps, recording a row every `record_every` steps and
    /// at the end. Row 0 holds the untrained state.
    pub fn train(&mut self, iterations: usize, record_every: usize) -> Result<GanTrace> {
        let record_every = record_every.max(1);
        let mut trace = GanTrace::default();
        trace.rows.push(IterationDiagnostics {
            iteration: self.iteration,
            jsd_hist: self.evaluate()?,
            mean_displacement: 0.0,
            grad_norm_d: 0.0,
            grad_norm_g: 0.0,
        });
        for i in 1..=iterations {
            let keep = i % record_every == 0 || i == iterations;
            let row = self.advance(keep)?;
            if keep {
                trace.rows.push(row);
            }
        }
        Ok(trace)
    }
}

/// A single iteration from the given state with a fresh optimizer.
pub fn algorithm1_iteration(
    g: &Mlp,
    d: &Mlp,
    rho_d: &ProductTarget,
    noise: &ProductTarget,
    params: &TrainParams,
    seed: u64,
) -> Result<(Mlp, Mlp, IterationDiagnostics)> {
    let mut t = GanTrainer::new(g.clone(), d.clone(), noise.clone(), rho_d.clone(), *params, seed)?;
    let diag = t.step()?;
    Ok((t.g, t.d, diag))
}

/// Setup of the point-wise versus rank-matched fitting comparison.
#[derive(Debug, Clone)]
pub struct DivergenceConfig {
    pub g: Mlp,
    pub d: Mlp,
    pub noise: ProductTarget,
    pub data: ProductTarget,
    pub params: TrainParams,
    pub iterations: usize,
    pub record_every: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceOutcome {
    pub pointwise: GanTrace,
    pub sorted: GanTrace,
}

impl DivergenceOutcome {
    /// Columns `iteration,jsd_pointwise,jsd_sorted`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,jsd_pointwise,jsd_sorted\n");
        for (a, b) in self.pointwise.rows.iter().zip(&self.sorted.rows) {
            let _ = writeln!(out, "{},{},{}", a.iteration, a.jsd_hist, b.jsd_hist);
        }
        out
    }
}

/// Trains two arms from the same networks and seed, differing only in the
/// target assignment.
pub fn divergence_experiment(config: &DivergenceConfig) -> Result<DivergenceOutcome> {
    let run = |assignment| -> Result<GanTrace> {
        let params = TrainParams {
            assignment,
            ..config.params
        };
        let mut t = GanTrainer::new(
            config.g.clone(),
            config.d.clone(),
            config.noise.clone(),
            config.data.clone(),
            params,
            config.seed,
        )?;
        t.train(config.iterations, config.record_every)
    };
    Ok(DivergenceOutcome {
        pointwise: run(Assignment::Pointwise)?,
        sorted: run(Assignment::Sorted)?,
    })
}

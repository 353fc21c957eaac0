//! Crandall-Liggett time stepping `v_k = (I + λA)⁻¹ v_{k-1}` and the
//! diagnostics recorded along the way.

use std::fmt::Write as _;

use crate::divergence::jsd;
use crate::error::{FlowError, Result};
use crate::grid::RatioField;
use crate::rng::Stream;

use super::operator::WeightedOperator;
use super::resolvent::{
    resolvent_residual, solve_resolvent, ResolventOptions, ResolventProblem, BETA_MAX,
};

/// Slack allowed on consecutive JSD differences.
pub const JSD_MONOTONE_SLACK: f64 = 1e-10;

/// Per-step diagnostics of a flow. Index 0 is the initial state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrace {
    pub lambda: f64,
    pub beta: f64,
    pub times: Vec<f64>,
    pub jsd_values: Vec<f64>,
    pub masses: Vec<f64>,
    pub sup_v: Vec<f64>,
    pub inf_v: Vec<f64>,
    /// `Σ λ ‖∇v_k‖²_{L²(μ_d)}` over completed steps.
    pub energy_partial_sums: Vec<f64>,
    /// `λ ∫ |∇(δJ/δρ)|² ρ dy` for each step, in its face-based discrete form.
    pub dissipation: Vec<f64>,
    /// `(1+β) ∫ v₀² dμ_d`, the right-hand side of the energy estimate.
    pub energy_budget: f64,
}

/// Solver statistics for one implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub bracket_gap: f64,
    pub lower_decrease: f64,
    pub upper_increase: f64,
    pub max_inversion: f64,
    /// `|∫ v_k dμ_d - ∫ v_{k-1} dμ_d|`.
    pub mass_change: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub v: RatioField,
    pub trace: FlowTrace,
    pub steps: Vec<StepStats>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with columns `time,jsd,mass,inf_v,sup_v,energy_sum`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,jsd,mass,inf_v,sup_v,energy_sum\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[i],
                self.jsd_values[i],
                self.masses[i],
                self.inf_v[i],
                self.sup_v[i],
                self.energy_partial_sums[i]
            );
        }
        out
    }

    /// Energy estimate `(1+β)β²` for the run's `β`.
    pub fn energy_bound(&self) -> f64 {
        (1.0 + self.beta) * self.beta * self.beta
    }
}

/// Discrete `∫ |∇v|² / (v(1+v)²) dμ_d`, written on cell faces as
/// `(1/h) Σ ρ_{i+½} [ln(v/(1+v))]_{i+½} [ln(1+v)]_{i+½}`.
/// Faces touching a zero value contribute nothing.
pub fn fisher_dissipation(op: &WeightedOperator, v: &[f64]) -> f64 {
    let h = op.grid().spacing();
    op.half_weights()
        .iter()
        .enumerate()
        .map(|(i, rw)| {
            let (a, b) = (v[i], v[i + 1]);
            if a <= 0.0 || b <= 0.0 {
                return 0.0;
            }
            let dlog = (b / (1.0 + b)).ln() - (a / (1.0 + a)).ln();
            let dlog1p = b.ln_1p() - a.ln_1p();
            rw * dlog * dlog1p
        })
        .sum::<f64>()
        / h
}

fn jsd_of_ratio(op: &WeightedOperator, v: &RatioField) -> Result<f64> {
    let u = v.to_density(op.rho_d())?;
    jsd(&u, op.rho_d())
}

/// Advances `v0` to `t_final` by `n_steps` implicit steps of size `t_final/n_steps`.
///
/// Each step uses the right-hand side's own maximum as its bound `β`.
pub fn crandall_liggett_evolve(
    v0: &RatioField,
    op: &WeightedOperator,
    t_final: f64,
    n_steps: usize,
    options: &ResolventOptions,
) -> Result<FlowRun> {
    op.grid().check_same(v0.grid())?;
    if n_steps == 0 {
        return Err(FlowError::InvalidParameter {
            name: "n_steps",
            reason: "must be at least 1".into(),
        });
    }
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(FlowError::InvalidParameter {
            name: "t_final",
            reason: format!("must be positive, got {t_final}"),
        });
    }
    let beta = v0.max().max(1.0);
    if beta > BETA_MAX {
        return Err(FlowError::InvalidParameter {
            name: "beta",
            reason: format!("initial ratio bound {beta} exceeds {BETA_MAX:e}"),
        });
    }
    let lambda = t_final / n_steps as f64;

    let mut trace = FlowTrace {
        lambda,
        beta,
        energy_budget: (1.0 + beta) * op.inner(v0.values(), v0.values()),
        ..Default::default()
    };
    let record = |trace: &mut FlowTrace, t: f64, v: &RatioField, energy: f64, diss: f64| -> Result<()> {
        trace.times.push(t);
        trace.jsd_values.push(jsd_of_ratio(op, v)?);
        trace.masses.push(op.integral(v.values()));
        trace.sup_v.push(v.max());
        trace.inf_v.push(v.min());
        trace.energy_partial_sums.push(energy);
        trace.dissipation.push(diss);
        Ok(())
    };
    record(&mut trace, 0.0, v0, 0.0, 0.0)?;

    let mut v = v0.clone();
    let mut energy = 0.0;
    let mut steps = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let step_beta = v.max().max(1.0);
        let problem = ResolventProblem::new(lambda, step_beta, v.clone()).map_err(|e| e.at_step(k))?;
        let sol = solve_resolvent(&problem, op, options).map_err(|e| e.at_step(k))?;
        let before = op.integral(v.values());
        let after = op.integral(sol.v.values());
        steps.push(StepStats {
            iterations: sol.iterations,
            bracket_gap: sol.bracket_gap,
            lower_decrease: sol.lower_decrease,
            upper_increase: sol.upper_increase,
            max_inversion: sol.max_inversion,
            mass_change: (after - before).abs(),
            residual: resolvent_residual(op, lambda, sol.v.values(), v.values()),
        });
        energy += lambda * op.gradient_energy(sol.v.values());
        // |∇ δJ/δρ|² ρ = ¼ |∇v|² / (v(1+v)²) ρ_d
        let diss = 0.25 * lambda * fisher_dissipation(op, sol.v.values());
        v = sol.v;
        record(&mut trace, k as f64 * lambda, &v, energy, diss)?;
    }
    Ok(FlowRun { v, trace, steps })
}

/// Outcome of [`jsd_descent_audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentAudit {
    pub is_monotone: bool,
    /// `max_k [J_k - J_{k-1} + λ ∫|∇ δJ/δρ|² ρ]`; nonpositive up to quadrature error.
    pub dissipation_check: f64,
}

pub fn jsd_descent_audit(trace: &FlowTrace) -> DescentAudit {
    let mut is_monotone = true;
    let mut check = f64::NEG_INFINITY;
    for k in 1..trace.jsd_values.len() {
        let dj = trace.jsd_values[k] - trace.jsd_values[k - 1];
        if dj > JSD_MONOTONE_SLACK {
            is_monotone = false;
        }
        let d = trace.dissipation.get(k).copied().unwrap_or(0.0);
        check = check.max(dj + d);
    }
    if trace.jsd_values.len() < 2 {
        check = 0.0;
    }
    DescentAudit {
        is_monotone,
        dissipation_check: check,
    }
}

/// Largest `‖v₁-v₂‖ - ‖(I+λA)v₁ - (I+λA)v₂‖` in `L¹(μ_d)` over random smooth pairs in `[0, β]`.
pub fn accretivity_check(
    op: &WeightedOperator,
    beta: f64,
    lambda: f64,
    trials: usize,
    rng_seed: u64,
) -> f64 {
    let mut stream = Stream::new(rng_seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v1 = random_smooth_field(op, beta, &mut stream);
        let v2 = random_smooth_field(op, beta, &mut stream);
        worst = worst.max(accretivity_gap(op, lambda, &v1, &v2));
    }
    worst
}

/// `‖v₁-v₂‖_{L¹(μ)} - ‖(v₁+λA v₁)-(v₂+λA v₂)‖_{L¹(μ)}` for one pair.
pub fn accretivity_gap(op: &WeightedOperator, lambda: f64, v1: &[f64], v2: &[f64]) -> f64 {
    let a1 = op.nonlinear_apply(v1);
    let a2 = op.nonlinear_apply(v2);
    let diff: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a - b).collect();
    let img: Vec<f64> = (0..v1.len())
        .map(|i| (v1[i] + lambda * a1[i]) - (v2[i] + lambda * a2[i]))
        .collect();
    op.l1_norm(&diff) - op.l1_norm(&img)
}

/// Random field in `[0, β]` built from a few low-frequency Fourier modes.
pub fn random_smooth_field(op: &WeightedOperator, beta: f64, stream: &mut Stream) -> Vec<f64> {
    let g = op.grid();
    let width = g.upper() - g.lower();
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|k| {
            let freq = (k + 1) as f64 * std::f64::consts::PI / width;
            (freq, stream.normal() / (k + 1) as f64, 2.0 * std::f64::consts::PI * stream.uniform())
        })
        .collect();
    let raw: Vec<f64> = g
        .nodes()
        .iter()
        .map(|y| {
            modes
                .iter()
                .map(|(f, a, p)| a * (f * (y - g.lower()) + p).sin())
                .sum::<f64>()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let top = beta * stream.uniform();
    raw.iter().map(|r| top * (r - lo) / span).collect()
}

//! Nonlinear Fokker-Planck flow of the ratio `v = u/ρ_d`:
//! `v_t = ½ Δ_μ ln(1+v)`, solved by iterated resolvents.

mod flow;
mod operator;
mod resolvent;

pub use flow::{
    accretivity_check, accretivity_gap, crandall_liggett_evolve, fisher_dissipation,
    jsd_descent_audit, random_smooth_field, DescentAudit, FlowRun, FlowTrace, StepStats,
    JSD_MONOTONE_SLACK,
};
pub use operator::WeightedOperator;
pub use resolvent::{
    resolvent_residual, solve_resolvent, ResolventOptions, ResolventProblem, ResolventSolution,
    ShiftRule, BETA_MAX, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};

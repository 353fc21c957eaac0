//! One implicit step `(I + λA)v = f` with `A v = -½ Δ_μ ln(1+v)`.
//!
//! With `w = ln(1+v)` the step reads `-(λ/2) Δ_μ w = f + 1 - e^w`. Two
//! monotone sequences bracket the solution: `w̲₀ ≡ 0` from below and
//! `w̄₀ ≡ ln(1+β)` from above, each updated by the linear solve
//!
//! ```text
//! (α I - (λ/2) Δ_μ) w_k = α w_{k-1} + 1 - e^{w_{k-1}} + f
//! ```
//!
//! which is order preserving as long as `x ↦ αx - e^x` is increasing on the
//! bracket. The iteration stops once `sup |w̄_k - w̲_k| < tol`.

use crate::error::{FlowError, Result};
use crate::grid::RatioField;

use super::operator::WeightedOperator;

/// Largest admissible `β` (bound of `f` against `ρ_d`).
pub const BETA_MAX: f64 = 1e6;
/// Default sup-norm tolerance on the bracket gap.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap per solve.
pub const DEFAULT_MAX_ITERS: usize = 500;

// rounding allowance for the monotonicity bookkeeping
const MONOTONE_SLACK: f64 = 1e-13;

/// How the shift `α` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftRule {
    /// `α = 1 + β` at every node and every iteration.
    Fixed,
    /// `α_i = e^{w̄_{k-1}(i)}`, the smallest node-wise shift keeping
    /// `x ↦ α_i x - e^x` increasing on the current bracket.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct ResolventProblem {
    lambda: f64,
    beta: f64,
    alpha: f64,
    f: RatioField,
}

impl ResolventProblem {
    /// Problem with the smallest fixed shift `α = 1 + β`.
    pub fn new(lambda: f64, beta: f64, f: RatioField) -> Result<Self> {
        Self::with_alpha(lambda, beta, 1.0 + beta, f)
    }

    pub fn with_alpha(lambda: f64, beta: f64, alpha: f64, f: RatioField) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(FlowError::InvalidParameter {
                name: "lambda",
                reason: format!("must be positive, got {lambda}"),
            });
        }
        if !(beta.is_finite() && (1.0..=BETA_MAX).contains(&beta)) {
            return Err(FlowError::InvalidParameter {
                name: "beta",
                reason: format!("must lie in [1, {BETA_MAX:e}], got {beta}"),
            });
        }
        if !(alpha >= 1.0 + beta) {
            return Err(FlowError::InvalidParameter {
                name: "alpha",
                reason: format!("must be at least 1 + beta = {}, got {alpha}", 1.0 + beta),
            });
        }
        let fmax = f.max();
        if f.min() < 0.0 || fmax > beta {
            return Err(FlowError::InvalidParameter {
                name: "f",
                reason: format!("right-hand side must lie in [0, {beta}], max is {fmax}"),
            });
        }
        Ok(Self {
            lambda,
            beta,
            alpha,
            f,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn f(&self) -> &RatioField {
        &self.f
    }
}

/// Result of one resolvent solve together with its monotonicity audit.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub v: RatioField,
    pub iterations: usize,
    pub bracket_gap: f64,
    /// Largest decrease observed in the lower sequence (0 when monotone).
    pub lower_decrease: f64,
    /// Largest increase observed in the upper sequence (0 when monotone).
    pub upper_increase: f64,
    /// Largest `w̲_k - w̄_k` observed (nonpositive when ordered).
    pub max_inversion: f64,
}

impl ResolventSolution {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.lower_decrease <= slack && self.upper_increase <= slack && self.max_inversion <= slack
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResolventOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub shift: ShiftRule,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            shift: ShiftRule::default(),
        }
    }
}

/// Solves `(I + λA) v = f` by the monotone sub/supersolution iteration.
pub fn solve_resolvent(
    problem: &ResolventProblem,
    op: &WeightedOperator,
    options: &ResolventOptions,
) -> Result<ResolventSolution> {
    op.grid().check_same(problem.f.grid())?;
    if !(options.tol > 0.0) {
        return Err(FlowError::InvalidParameter {
            name: "tol",
            reason: "must be positive".into(),
        });
    }
    let n = op.grid().len();
    let f = problem.f.values();
    let scale = 0.5 * problem.lambda;
    let top = problem.beta.ln_1p();

    let mut lo = vec![0.0; n];
    let mut hi = vec![top; n];
    let mut rhs_lo = vec![0.0; n];
    let mut rhs_hi = vec![0.0; n];

    let fixed = match options.shift {
        ShiftRule::Fixed => Some(op.shifted_factor(problem.alpha, scale)?),
        ShiftRule::Adaptive => None,
    };
    let mut shift = vec![problem.alpha; n];

    let mut lower_decrease: f64 = 0.0;
    let mut upper_increase: f64 = 0.0;
    let mut max_inversion = f64::NEG_INFINITY;
    let mut gap = top;

    for k in 1..=options.max_iters {
        if options.shift == ShiftRule::Adaptive {
            for i in 0..n {
                shift[i] = hi[i].exp();
            }
        }
        for i in 0..n {
            rhs_lo[i] = shift[i] * lo[i] - lo[i].exp_m1() + f[i];
            rhs_hi[i] = shift[i] * hi[i] - hi[i].exp_m1() + f[i];
        }
        match &fixed {
            Some(t) => {
                t.solve_in_place(&mut rhs_lo);
                t.solve_in_place(&mut rhs_hi);
            }
            None => {
                let t = op.shifted_factor_nodewise(&shift, scale)?;
                t.solve_in_place(&mut rhs_lo);
                t.solve_in_place(&mut rhs_hi);
            }
        }
        gap = 0.0;
        let mut inversion = f64::NEG_INFINITY;
        for i in 0..n {
            lower_decrease = lower_decrease.max(lo[i] - rhs_lo[i]);
            upper_increase = upper_increase.max(rhs_hi[i] - hi[i]);
            let d = rhs_hi[i] - rhs_lo[i];
            inversion = inversion.max(-d);
            gap = gap.max(d.abs());
        }
        max_inversion = max_inversion.max(inversion);
        std::mem::swap(&mut lo, &mut rhs_lo);
        std::mem::swap(&mut hi, &mut rhs_hi);
        if inversion > options.tol.max(MONOTONE_SLACK) {
            return Err(FlowError::MonotonicityViolation {
                iteration: k,
                excess: inversion,
            });
        }
        if gap < options.tol {
            let v = hi.iter().map(|w| w.exp_m1().max(0.0)).collect();
            return Ok(ResolventSolution {
                v: RatioField::new(*op.grid(), v)?,
                iterations: k,
                bracket_gap: gap,
                lower_decrease,
                upper_increase,
                max_inversion,
            });
        }
    }
    Err(FlowError::NonConvergence {
        iterations: options.max_iters,
        bracket_gap: gap,
    })
}

/// `‖v + λ A_h v - f‖_∞`.
pub fn resolvent_residual(op: &WeightedOperator, lambda: f64, v: &[f64], f: &[f64]) -> f64 {
    let av = op.nonlinear_apply(v);
    v.iter()
        .zip(&av)
        .zip(f)
        .map(|((x, a), b)| (x + lambda * a - b).abs())
        .fold(0.0, f64::max)
}

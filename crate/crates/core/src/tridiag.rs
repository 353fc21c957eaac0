//! Thomas algorithm for tridiagonal systems, factored once and reused.

use crate::error::{FlowError, Result};

/// LU factors of a tridiagonal matrix with rows `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1]`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    // modified superdiagonal c'_i and inverse pivots
    upper_mod: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    /// `lower[0]` and `upper[n-1]` are ignored.
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if lower.len() != n || upper.len() != n {
            return Err(FlowError::LengthMismatch {
                expected: n,
                actual: lower.len().min(upper.len()),
            });
        }
        let mut upper_mod = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let l = if i == 0 { 0.0 } else { lower[i] };
            let pivot = diag[i] - l * prev_c;
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(FlowError::InvalidParameter {
                    name: "matrix",
                    reason: format!("zero pivot at row {i}"),
                });
            }
            inv_pivot[i] = 1.0 / pivot;
            prev_c = if i + 1 < n { upper[i] * inv_pivot[i] } else { 0.0 };
            upper_mod[i] = prev_c;
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper_mod,
            inv_pivot,
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_mod[i] * rhs[i + 1];
        }
    }
}

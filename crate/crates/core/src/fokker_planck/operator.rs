//! Conservative discretization of `Δ_μ = Δ + ∇ln ρ_d · ∇`.
//!
//! In divergence form `Δ_μ w = ρ_d⁻¹ ∇·(ρ_d ∇w)`. Node `i` owns a control
//! volume `c_i` (`h` inside, `h/2` at the two ends) and exchanges flux with
//! its neighbours through cell faces weighted by the geometric mean
//! `ρ_{i+½} = √(ρ_i ρ_{i+1})`. No flux leaves the window. The operator is
//! self-adjoint for `⟨a, b⟩_μ = Σ c_i ρ_i a_i b_i`, which is exactly the
//! trapezoidal rule against `μ_d`, and
//! `⟨Δ_μ a, b⟩_μ = -(1/h) Σ_faces ρ_{i+½} (a_{i+1}-a_i)(b_{i+1}-b_i)`.

use crate::error::Result;
use crate::grid::{check_positive, Grid, GridDensity};
use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone)]
pub struct WeightedOperator {
    grid: Grid,
    rho_d: GridDensity,
    half_weights: Vec<f64>,
    // row coefficients: (Δw)_i = west_i (w_{i-1}-w_i) + east_i (w_{i+1}-w_i)
    west: Vec<f64>,
    east: Vec<f64>,
    volumes: Vec<f64>,
}

impl WeightedOperator {
    pub fn new(rho_d: GridDensity) -> Result<Self> {
        check_positive(&rho_d)?;
        let grid = *rho_d.grid();
        let n = grid.len();
        let h = grid.spacing();
        let r = rho_d.values();
        let half_weights: Vec<f64> = (0..n - 1).map(|i| (r[i] * r[i + 1]).sqrt()).collect();
        let volumes = grid.trapezoid_weights();
        let mut west = vec![0.0; n];
        let mut east = vec![0.0; n];
        for i in 0..n {
            let scale = 1.0 / (h * volumes[i] * r[i]);
            if i > 0 {
                west[i] = half_weights[i - 1] * scale;
            }
            if i + 1 < n {
                east[i] = half_weights[i] * scale;
            }
        }
        Ok(Self {
            grid,
            rho_d,
            half_weights,
            west,
            east,
            volumes,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rho_d(&self) -> &GridDensity {
        &self.rho_d
    }

    pub fn half_weights(&self) -> &[f64] {
        &self.half_weights
    }

    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(w.len())?;
        Ok(self.apply_unchecked(w))
    }

    pub(crate) fn apply_unchecked(&self, w: &[f64]) -> Vec<f64> {
        let n = w.len();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                if i > 0 {
                    s += self.west[i] * (w[i - 1] - w[i]);
                }
                if i + 1 < n {
                    s += self.east[i] * (w[i + 1] - w[i]);
                }
                s
            })
            .collect()
    }

    /// `⟨a, b⟩_μ` with trapezoidal weights.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.rho_d.values();
        (0..a.len())
            .map(|i| self.volumes[i] * r[i] * a[i] * b[i])
            .sum()
    }

    /// `∫ |a| dμ_d`.
    pub fn l1_norm(&self, a: &[f64]) -> f64 {
        let r = self.rho_d.values();
        (0..a.len())
            .map(|i| self.volumes[i] * r[i] * a[i].abs())
            .sum()
    }

    /// `∫ a dμ_d`.
    pub fn integral(&self, a: &[f64]) -> f64 {
        let r = self.rho_d.values();
        (0..a.len()).map(|i| self.volumes[i] * r[i] * a[i]).sum()
    }

    /// Face-based Dirichlet form `∫ ∇a·∇b dμ_d`.
    pub fn dirichlet_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let h = self.grid.spacing();
        self.half_weights
            .iter()
            .enumerate()
            .map(|(i, rw)| rw * (a[i + 1] - a[i]) * (b[i + 1] - b[i]))
            .sum::<f64>()
            / h
    }

    /// `‖∇a‖²_{L²(μ_d)}`.
    pub fn gradient_energy(&self, a: &[f64]) -> f64 {
        self.dirichlet_form(a, a)
    }

    /// `A_h v = -½ Δ_μ ln(1+v)`.
    pub fn nonlinear_apply(&self, v: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = v.iter().map(|x| x.ln_1p()).collect();
        self.apply_unchecked(&w).into_iter().map(|x| -0.5 * x).collect()
    }

    /// Factors `shift·I - scale·Δ_μ`.
    pub(crate) fn shifted_factor(&self, shift: f64, scale: f64) -> Result<Tridiagonal> {
        let n = self.grid.len();
        let lower: Vec<f64> = self.west.iter().map(|a| -scale * a).collect();
        let upper: Vec<f64> = self.east.iter().map(|b| -scale * b).collect();
        let diag: Vec<f64> = (0..n)
            .map(|i| shift + scale * (self.west[i] + self.east[i]))
            .collect();
        Tridiagonal::factor(&lower, &diag, &upper)
    }

    /// Same as [`Self::shifted_factor`] with a node-wise shift.
    pub(crate) fn shifted_factor_nodewise(&self, shift: &[f64], scale: f64) -> Result<Tridiagonal> {
        let n = self.grid.len();
        let lower: Vec<f64> = self.west.iter().map(|a| -scale * a).collect();
        let upper: Vec<f64> = self.east.iter().map(|b| -scale * b).collect();
        let diag: Vec<f64> = (0..n)
            .map(|i| shift[i] + scale * (self.west[i] + self.east[i]))
            .collect();
        Tridiagonal::factor(&lower, &diag, &upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::TargetModel;

    fn gaussian_op(n: usize) -> WeightedOperator {
        let g = Grid::new(-8.0, 8.0, n).unwrap();
        let d = TargetModel::gaussian(0.0, 1.0).unwrap().discretize(&g).unwrap();
        WeightedOperator::new(d.density).unwrap()
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let op = gaussian_op(401);
        let out = op.apply(&vec![3.7; 401]).unwrap();
        assert!(out.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn ornstein_uhlenbeck_generator_on_polynomials() {
        // second-order consistency: error bounded by h²(1 + |y|³)
        for n in [401usize, 801] {
            let op = gaussian_op(n);
            let h2 = op.grid().spacing().powi(2);
            let y = op.grid().nodes();
            let lin = op.apply(&y).unwrap();
            let sq: Vec<f64> = y.iter().map(|x| x * x).collect();
            let quad = op.apply(&sq).unwrap();
            for i in 1..n - 1 {
                let tol = h2 * (1.0 + y[i].abs().powi(3));
                assert!((lin[i] + y[i]).abs() < tol, "y={} got {}", y[i], lin[i]);
                assert!((quad[i] - (2.0 - 2.0 * y[i] * y[i])).abs() < 4.0 * tol * (1.0 + y[i].abs()));
            }
        }
    }

    #[test]
    fn dirichlet_form_matches_inner_product() {
        let op = gaussian_op(101);
        let a: Vec<f64> = op.grid().nodes().iter().map(|x| (0.7 * x).sin()).collect();
        let b: Vec<f64> = op.grid().nodes().iter().map(|x| x.cos() + 0.1 * x).collect();
        let lhs = op.inner(&op.apply(&a).unwrap(), &b);
        let rhs = -op.dirichlet_form(&a, &b);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let op = gaussian_op(11);
        assert!(op.apply(&[1.0; 5]).is_err());
    }
}

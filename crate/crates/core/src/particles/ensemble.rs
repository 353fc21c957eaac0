use std::fmt::Write as _;

use crate::error::{FlowError, Result};
use crate::rng::Stream;
use crate::target::TargetModel;

/// Law with independent coordinates, one [`TargetModel`] per axis.
///
/// One marginal gives the 1-D setting; two give product targets in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductTarget {
    marginals: Vec<TargetModel>,
}

impl ProductTarget {
    pub fn new(marginals: Vec<TargetModel>) -> Result<Self> {
        if !(1..=2).contains(&marginals.len()) {
            return Err(FlowError::UnsupportedDimension(marginals.len()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[TargetModel] {
        &self.marginals
    }

    pub fn pdf(&self, y: &[f64]) -> f64 {
        self.marginals.iter().zip(y).map(|(m, x)| m.pdf(*x)).product()
    }

    /// Writes `∇ρ` into `grad` and returns `ρ`. The gradient is `ρ ∇ln ρ`.
    pub fn pdf_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.pdf(y);
        for (k, m) in self.marginals.iter().enumerate() {
            grad[k] = p * m.grad_log_pdf(y[k]);
        }
        p
    }

    /// Probability of the axis-aligned box `[a, b]`.
    pub fn box_probability(&self, a: &[f64], b: &[f64]) -> f64 {
        self.marginals
            .iter()
            .enumerate()
            .map(|(k, m)| m.cdf(b[k]) - m.cdf(a[k]))
            .product()
    }

    /// `m` points drawn from one stream, row-major, axes interleaved per point.
    pub fn sample_with(&self, s: &mut Stream, m: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(m * self.dim());
        for _ in 0..m {
            for model in &self.marginals {
                out.push(model.sample_with(s, 1)[0]);
            }
        }
        out
    }

    /// Draws `m` points; axis `k` uses the child stream `(seed, "init", k)`.
    pub fn sample(&self, seed: u64, m: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; m * d];
        for (k, model) in self.marginals.iter().enumerate() {
            let mut s = Stream::child(seed, "init", k as u64);
            for (i, x) in model.sample_with(&mut s, m).into_iter().enumerate() {
                out[i * d + k] = x;
            }
        }
        out
    }
}

impl From<TargetModel> for ProductTarget {
    fn from(model: TargetModel) -> Self {
        Self {
            marginals: vec![model],
        }
    }
}

/// `m` points in the line or the plane at a common time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    // row-major, `dim` entries per particle
    positions: Vec<f64>,
    time: f64,
    seed: u64,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<f64>, time: f64, seed: u64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(FlowError::UnsupportedDimension(dim));
        }
        if positions.is_empty() || positions.len() % dim != 0 {
            return Err(FlowError::DegenerateEnsemble(format!(
                "{} coordinates do not form a nonempty {dim}-D ensemble",
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(FlowError::Divergence(format!("particle {} is not finite", i / dim)));
        }
        Ok(Self {
            dim,
            positions,
            time,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.positions.chunks_exact(self.dim)
    }

    /// Values of coordinate `k` for all particles.
    pub fn axis(&self, k: usize) -> Vec<f64> {
        self.points().map(|p| p[k]).collect()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-axis sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let m = self.len() as f64;
        (0..self.dim)
            .map(|k| self.points().map(|p| p[k]).sum::<f64>() / m)
            .collect()
    }

    /// Per-axis sample variance with the `m - 1` denominator (0 when `m = 1`).
    pub fn variance(&self) -> Vec<f64> {
        let m = self.len();
        let mean = self.mean();
        (0..self.dim)
            .map(|k| {
                if m < 2 {
                    return 0.0;
                }
                let ss: f64 = self.points().map(|p| (p[k] - mean[k]).powi(2)).sum();
                ss / (m - 1) as f64
            })
            .collect()
    }

    /// One row per particle; header `x` or `x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.dim == 1 { "x\n" } else { "x,y\n" });
        for p in self.points() {
            if self.dim == 1 {
                let _ = writeln!(out, "{}", p[0]);
            } else {
                let _ = writeln!(out, "{},{}", p[0], p[1]);
            }
        }
        out
    }
}

/// `m` i.i.d. draws from `model` at time 0.
pub fn init_ensemble(model: &TargetModel, m: usize, seed: u64) -> Result<ParticleEnsemble> {
    init_product_ensemble(&ProductTarget::from(model.clone()), m, seed)
}

pub fn init_product_ensemble(model: &ProductTarget, m: usize, seed: u64) -> Result<ParticleEnsemble> {
    if m == 0 {
        return Err(FlowError::InvalidParameter {
            name: "m",
            reason: "ensemble needs at least one particle".into(),
        });
    }
    ParticleEnsemble::new(model.dim(), model.sample(seed, m), 0.0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_ensembles_are_reproducible() {
        let model = TargetModel::gaussian(2.0, 0.7).unwrap();
        let a = init_ensemble(&model, 1000, 5).unwrap();
        let b = init_ensemble(&model, 1000, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_ensemble(&model, 1000, 6).unwrap());
        let one = init_ensemble(&model, 1, 5).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.point(0)[0].is_finite());
    }

    #[test]
    fn product_axes_are_independent_streams() {
        let g = TargetModel::gaussian(0.0, 1.0).unwrap();
        let t = ProductTarget::new(vec![g.clone(), g]).unwrap();
        let e = init_product_ensemble(&t, 500, 1).unwrap();
        assert_eq!(e.dim(), 2);
        assert_ne!(e.axis(0), e.axis(1));
        assert!(ProductTarget::new(vec![]).is_err());
    }

    #[test]
    fn csv_layout() {
        let e = ParticleEnsemble::new(2, vec![1.0, 2.5, -3.0, 0.125], 0.0, 0).unwrap();
        assert_eq!(e.to_csv(), "x,y\n1,2.5\n-3,0.125\n");
        assert!(ParticleEnsemble::new(1, vec![f64::NAN], 0.0, 0).is_err());
        assert!(ParticleEnsemble::new(3, vec![0.0; 3], 0.0, 0).is_err());
    }
}

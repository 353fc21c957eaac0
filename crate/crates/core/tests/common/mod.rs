#![allow(dead_code)]

use densflow::Grid;

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    // split into panels so narrow features are not missed
    let panels = 64;
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * w, a + (k + 1) as f64 * w);
            let (fa, fb, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            rec(f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol / panels as f64, 40)
        })
        .sum()
}

pub fn gauss(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal cdf from the Abramowitz-Stegun 7.1.26 erf fit (|error| < 1.5e-7).
pub fn std_normal_cdf(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    if z >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Kolmogorov-Smirnov statistic of a sample against a cdf.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Row coefficients of the weighted Laplacian, assembled from scratch:
/// face weights √(ρ_i ρ_{i+1}), control volumes h inside and h/2 at the ends.
pub fn laplacian_rows(g: &Grid, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = g.len();
    let h = g.spacing();
    let mut west = vec![0.0; n];
    let mut east = vec![0.0; n];
    for i in 0..n {
        let vol = if i == 0 || i == n - 1 { 0.5 * h } else { h };
        if i > 0 {
            west[i] = (rho[i - 1] * rho[i]).sqrt() / (h * vol * rho[i]);
        }
        if i + 1 < n {
            east[i] = (rho[i] * rho[i + 1]).sqrt() / (h * vol * rho[i]);
        }
    }
    (west, east)
}

pub fn apply_rows(west: &[f64], east: &[f64], w: &[f64]) -> Vec<f64> {
    let n = w.len();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            if i > 0 {
                s += west[i] * (w[i - 1] - w[i]);
            }
            if i + 1 < n {
                s += east[i] * (w[i + 1] - w[i]);
            }
            s
        })
        .collect()
}

pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Damped Newton on `e^w - 1 - (λ/2) L w = f`, returning `v = e^w - 1`.
pub fn newton_resolvent(g: &Grid, rho: &[f64], lambda: f64, f: &[f64]) -> Vec<f64> {
    let (west, east) = laplacian_rows(g, rho);
    let residual = |w: &[f64]| -> Vec<f64> {
        let lw = apply_rows(&west, &east, w);
        (0..w.len()).map(|i| w[i].exp_m1() - 0.5 * lambda * lw[i] - f[i]).collect()
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut w: Vec<f64> = f.iter().map(|x| x.ln_1p()).collect();
    let mut r = residual(&w);
    for _ in 0..100 {
        if norm(&r) < 1e-14 {
            break;
        }
        let s = 0.5 * lambda;
        let sub: Vec<f64> = west.iter().map(|a| -s * a).collect();
        let sup: Vec<f64> = east.iter().map(|b| -s * b).collect();
        let diag: Vec<f64> = (0..w.len()).map(|i| w[i].exp() + s * (west[i] + east[i])).collect();
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let dw = thomas(&sub, &diag, &sup, &neg);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + t * b).collect();
            let rt = residual(&trial);
            if norm(&rt) < norm(&r) || t < 1e-6 {
                w = trial;
                r = rt;
                break;
            }
            t *= 0.5;
        }
    }
    assert!(norm(&r) < 1e-12, "Newton oracle did not converge: {}", norm(&r));
    w.iter().map(|x| x.exp_m1()).collect()
}

mod common;

use common::{gauss, mean_var};
use densflow::fokker_planck::{crandall_liggett_evolve, ResolventOptions, WeightedOperator};
use densflow::particles::{
    bin_averages, euler_step, exact_discriminator, histogram_density, init_ensemble, run_from, select_bandwidth,
    simulate, Bandwidth, BinnedKde, DensityModel, Estimator, ExactDiscriminator, HistogramSpec, KdeDensity,
    ParticleEnsemble, ProductTarget, SimulationParams,
};
use densflow::{FlowError, Grid, RatioField, TargetModel};

fn normal(mean: f64, std: f64) -> ProductTarget {
    ProductTarget::from(TargetModel::gaussian(mean, std).unwrap())
}

fn spec() -> HistogramSpec {
    HistogramSpec {
        lower: -8.0,
        upper: 8.0,
        bins: 200,
    }
}

fn l1_hist(a: &[f64], b: &[f64], width: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * width
}

/// Bin averages of the PDE solution for the Gaussian-shift benchmark at `t`.
fn pde_marginal(t: f64) -> (Vec<f64>, f64) {
    let g = Grid::new(-8.0, 8.0, 401).unwrap();
    let rd = TargetModel::gaussian(0.0, 1.0).unwrap().discretize(&g).unwrap().density;
    let r0 = TargetModel::gaussian(2.0, 0.7).unwrap().discretize(&g).unwrap().density;
    let v0 = RatioField::from_densities(&r0, &rd).unwrap();
    let op = WeightedOperator::new(rd.clone()).unwrap();
    let n = (t / 0.01).round() as usize;
    let run = crandall_liggett_evolve(&v0, &op, t, n, &ResolventOptions::default()).unwrap();
    let u = run.v.to_density(&rd).unwrap();
    let mean = g.integrate(&g.nodes().iter().zip(u.values()).map(|(y, p)| y * p).collect::<Vec<_>>());
    (bin_averages(&g, u.values(), &spec()).unwrap(), mean)
}

#[test]
fn initial_ensembles() {
    let model = TargetModel::gaussian(2.0, 0.7).unwrap();
    let ens = init_ensemble(&model, 100_000, 21).unwrap();
    assert!((ens.mean()[0] - 2.0).abs() < 0.02);
    assert_eq!(ens, init_ensemble(&model, 100_000, 21).unwrap());
    let one = init_ensemble(&model, 1, 3).unwrap();
    assert!(one.len() == 1 && one.point(0)[0].is_finite());
    assert!(init_ensemble(&model, 0, 3).is_err());
}

#[test]
fn kde_is_consistent() {
    let g = Grid::new(-8.0, 8.0, 401).unwrap();
    for seed in [101, 102, 103] {
        let ens = init_ensemble(&TargetModel::gaussian(0.0, 1.0).unwrap(), 100_000, seed).unwrap();
        let kde = KdeDensity::new(ens, Bandwidth::Silverman).unwrap();
        let diff: Vec<f64> = g.nodes().iter().map(|y| (kde.density(&[*y]) - gauss(*y, 0.0, 1.0)).abs()).collect();
        let l1 = g.integrate(&diff);
        assert!(l1 <= 0.02, "seed {seed}: L1 {l1}");
    }
}

#[test]
fn silverman_rule_and_bandwidth_smoothing() {
    let ens = init_ensemble(&TargetModel::gaussian(1.0, 2.0).unwrap(), 5000, 8).unwrap();
    let (_, var) = mean_var(&ens.axis(0));
    let h = select_bandwidth(&ens, Bandwidth::Silverman).unwrap();
    assert!((h - 1.06 * var.sqrt() * 5000f64.powf(-0.2)).abs() < 1e-12);

    let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.05).collect();
    let sup = |h: f64| {
        let k = KdeDensity::new(ens.clone(), Bandwidth::Fixed(h)).unwrap();
        grid.iter().map(|y| k.density(&[*y])).fold(0.0, f64::max)
    };
    let mut last = f64::INFINITY;
    for h in [0.05, 0.1, 0.2, 0.4, 0.8] {
        let s = sup(h);
        assert!(s < last, "sup did not decrease at h = {h}");
        last = s;
    }

    let flat = ParticleEnsemble::new(1, vec![2.0; 10], 0.0, 0).unwrap();
    assert!(matches!(select_bandwidth(&flat, Bandwidth::Silverman), Err(FlowError::DegenerateEnsemble(_))));
    let single = ParticleEnsemble::new(1, vec![2.0], 0.0, 0).unwrap();
    assert!(select_bandwidth(&single, Bandwidth::Silverman).is_err());
    assert!(select_bandwidth(&single, Bandwidth::Fixed(-1.0)).is_err());
}

#[test]
fn repeated_point_is_a_kernel() {
    let ens = ParticleEnsemble::new(1, vec![0.5; 7], 0.0, 0).unwrap();
    let kde = KdeDensity::new(ens, Bandwidth::Fixed(0.3)).unwrap();
    for y in [-1.0, 0.5, 0.9] {
        assert!((kde.density(&[y]) - gauss(y, 0.5, 0.3)).abs() < 1e-15);
    }
}

#[test]
fn discriminator_of_a_self_sample_is_confused() {
    let rho_d = normal(0.0, 1.0);
    let ens = init_ensemble(&TargetModel::gaussian(0.0, 1.0).unwrap(), 100_000, 55).unwrap();
    let kde = BinnedKde::new(&ens, Bandwidth::Silverman, 16).unwrap();
    for i in 0..=40 {
        let y = -2.0 + 0.1 * i as f64;
        let (d, _) = exact_discriminator(&rho_d, &kde, &[y]);
        assert!((d - 0.5).abs() <= 0.02, "D({y}) = {d}");
    }
}

#[test]
fn discriminator_gradient_matches_finite_differences() {
    let rho_d = normal(0.0, 1.0);
    let ens = init_ensemble(&TargetModel::gaussian(1.5, 0.8).unwrap(), 2000, 9).unwrap();
    let kde = KdeDensity::new(ens, Bandwidth::Silverman).unwrap();
    let h = 1e-5;
    for i in 0..50 {
        let y = -3.0 + 0.13 * i as f64;
        let (_, g) = exact_discriminator(&rho_d, &kde, &[y]);
        let fd = (exact_discriminator(&rho_d, &kde, &[y + h]).0 - exact_discriminator(&rho_d, &kde, &[y - h]).0) / (2.0 * h);
        assert!((g[0] - fd).abs() <= 1e-6, "at {y}: {} vs {fd}", g[0]);
    }

    let plane = ProductTarget::new(vec![TargetModel::gaussian(0.0, 1.0).unwrap(), TargetModel::logistic(0.5, 0.7).unwrap()]).unwrap();
    let src = init_ensemble(&TargetModel::gaussian(0.0, 1.0).unwrap(), 600, 2).unwrap();
    let pts: Vec<f64> = src.axis(0).chunks(2).flat_map(|c| [c[0], c[1] + 1.0]).collect();
    let kde2 = KdeDensity::new(ParticleEnsemble::new(2, pts, 0.0, 0).unwrap(), Bandwidth::Silverman).unwrap();
    for y in [[0.2, 0.4], [-1.0, 1.5], [1.3, -0.2]] {
        let (_, g) = exact_discriminator(&plane, &kde2, &y);
        for k in 0..2 {
            let mut a = y;
            let mut b = y;
            a[k] += h;
            b[k] -= h;
            let fd = (exact_discriminator(&plane, &kde2, &a).0 - exact_discriminator(&plane, &kde2, &b).0) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-6);
        }
    }
}

#[test]
fn far_tail_saturates_the_discriminator() {
    let rho_d = normal(0.0, 1.0);
    let cluster = ParticleEnsemble::new(1, (0..50).map(|i| -0.5 + 0.02 * i as f64).collect(), 0.0, 0).unwrap();
    let kde = KdeDensity::new(cluster.clone(), Bandwidth::Fixed(0.1)).unwrap();
    let (d, _) = exact_discriminator(&rho_d, &kde, &[6.0]);
    assert!(d > 1.0 - 1e-6, "{d}");
    let (d, _) = exact_discriminator(&rho_d, &kde, &[30.0]);
    assert_eq!(d, 1.0);

    let mut pts = cluster.positions().to_vec();
    pts.insert(3, 30.0);
    let ens = ParticleEnsemble::new(1, pts, 0.0, 0).unwrap();
    match euler_step(&ens, &ExactDiscriminator { rho_d: &rho_d, rho_hat: &kde }, 0.01) {
        Err(FlowError::DiscriminatorSaturation { indices, .. }) => assert_eq!(indices, vec![3]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn euler_step_examples() {
    let ens = ParticleEnsemble::new(1, vec![0.0], 0.0, 0).unwrap();
    let logistic = |y: &[f64], g: &mut [f64]| {
        let s = 1.0 / (1.0 + (-y[0]).exp());
        g[0] = s * (1.0 - s);
        s
    };
    let next = euler_step(&ens, &logistic, 0.1).unwrap();
    assert!((next.point(0)[0] - 0.025).abs() < 1e-15);
    assert!((next.time() - 0.1).abs() < 1e-15);

    let many = init_ensemble(&TargetModel::gaussian(0.0, 3.0).unwrap(), 100, 1).unwrap();
    let confused = |_: &[f64], g: &mut [f64]| {
        g[0] = 0.0;
        0.5
    };
    let same = euler_step(&many, &confused, 0.5).unwrap();
    assert_eq!(same.positions(), many.positions());
    assert_eq!(same.len(), many.len());
    assert!(euler_step(&many, &confused, 0.0).is_err());
}

#[test]
fn exact_target_freezes_the_ensemble() {
    let rho_d = normal(0.3, 1.2);
    let ens = init_ensemble(&TargetModel::gaussian(-1.0, 2.0).unwrap(), 1000, 4).unwrap();
    let mut cur = ens.clone();
    for _ in 0..10 {
        cur = euler_step(&cur, &ExactDiscriminator { rho_d: &rho_d, rho_hat: &rho_d }, 0.1).unwrap();
    }
    assert_eq!(cur.positions(), ens.positions());
}

#[test]
fn stationary_flow_stays_close() {
    let rho_d = normal(0.0, 1.0);
    let params = SimulationParams {
        m: 100_000,
        eps: 0.01,
        n_steps: 100,
        seed: 6,
        record_every: 10,
        ..Default::default()
    };
    let run = simulate(&rho_d, &rho_d, &params).unwrap();
    assert_eq!(run.trace.len(), 11);
    assert!(run.trace.hist_jsd.iter().all(|j| *j <= 0.01), "{:?}", run.trace.hist_jsd);
    assert_eq!(run.ensemble.len(), 100_000);
}

#[test]
fn particles_follow_the_pde() {
    let (pde, _) = pde_marginal(1.0);
    let params = SimulationParams {
        m: 100_000,
        eps: 0.005,
        n_steps: 200,
        seed: 11,
        record_every: 200,
        ..Default::default()
    };
    let run = simulate(&normal(2.0, 0.7), &normal(0.0, 1.0), &params).unwrap();
    let hist = histogram_density(&run.ensemble, &spec()).unwrap();
    let l1 = l1_hist(&hist, &pde, spec().width());
    assert!(l1 <= 0.1, "L1 {l1}");
    assert!((run.ensemble.time() - 1.0).abs() < 1e-9);
}

#[test]
fn halving_the_step_shrinks_the_error() {
    // common random numbers: every run starts from the same sample
    let final_hist = |eps: f64| {
        let params = SimulationParams {
            m: 100_000,
            eps,
            n_steps: (1.0 / eps).round() as usize,
            seed: 12,
            record_every: 1000,
            ..Default::default()
        };
        let run = simulate(&normal(2.0, 0.7), &normal(0.0, 1.0), &params).unwrap();
        histogram_density(&run.ensemble, &spec()).unwrap()
    };
    let reference = final_hist(0.005);
    let coarse = l1_hist(&final_hist(0.02), &reference, spec().width());
    let fine = l1_hist(&final_hist(0.01), &reference, spec().width());
    assert!(fine <= 0.75 * coarse, "coarse {coarse} fine {fine}");
}

#[test]
fn simulations_are_reproducible() {
    let params = SimulationParams {
        m: 5000,
        eps: 0.02,
        n_steps: 20,
        seed: 77,
        estimator: Estimator::Exact,
        record_every: 5,
        ..Default::default()
    };
    let a = simulate(&normal(2.0, 0.7), &normal(0.0, 1.0), &params).unwrap();
    let b = simulate(&normal(2.0, 0.7), &normal(0.0, 1.0), &params).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.ensemble, b.ensemble);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    let c = simulate(&normal(2.0, 0.7), &normal(0.0, 1.0), &SimulationParams { seed: 78, ..params }).unwrap();
    assert_ne!(a.ensemble, c.ensemble);
}

#[test]
fn plane_stationarity() {
    let target = ProductTarget::new(vec![TargetModel::gaussian(0.0, 1.0).unwrap(), TargetModel::gaussian(1.0, 0.5).unwrap()]).unwrap();
    let params = SimulationParams {
        m: 20_000,
        eps: 0.01,
        n_steps: 20,
        seed: 3,
        estimator: Estimator::Binned(8),
        record_every: 5,
        histogram: HistogramSpec {
            lower: -6.0,
            upper: 6.0,
            bins: 60,
        },
        ..Default::default()
    };
    let run = simulate(&target, &target, &params).unwrap();
    for (mean, var) in run.trace.means.iter().zip(&run.trace.variances) {
        assert!(mean[0].abs() < 0.03 && (mean[1] - 1.0).abs() < 0.03, "{mean:?}");
        assert!((var[0] - 1.0).abs() < 0.05 && (var[1] - 0.25).abs() < 0.02, "{var:?}");
    }
}

#[test]
fn plane_marginal_tracks_the_line() {
    // with a product target and an initial law that differs on x only, the
    // x-marginal evolves by the one-dimensional flow
    let start = ProductTarget::new(vec![TargetModel::gaussian(2.0, 0.7).unwrap(), TargetModel::gaussian(0.0, 1.0).unwrap()]).unwrap();
    let target = ProductTarget::new(vec![TargetModel::gaussian(0.0, 1.0).unwrap(), TargetModel::gaussian(0.0, 1.0).unwrap()]).unwrap();
    let params = SimulationParams {
        m: 50_000,
        eps: 0.01,
        n_steps: 50,
        seed: 14,
        estimator: Estimator::Binned(8),
        record_every: 50,
        ..Default::default()
    };
    let run = simulate(&start, &target, &params).unwrap();
    let (_, pde_mean) = pde_marginal(0.5);
    let mean = run.ensemble.mean();
    assert!((mean[0] - pde_mean).abs() < 0.05, "x mean {} vs {pde_mean}", mean[0]);
    assert!(mean[1].abs() < 0.03, "y mean {}", mean[1]);
    let xs = &run.trace.means;
    assert!(xs.last().unwrap()[0] < xs[0][0]);
}

#[test]
fn run_from_continues_a_simulation() {
    let params = SimulationParams {
        m: 2000,
        eps: 0.05,
        n_steps: 4,
        seed: 5,
        estimator: Estimator::Exact,
        ..Default::default()
    };
    let rho_d = normal(0.0, 1.0);
    let whole = simulate(&normal(1.0, 1.0), &rho_d, &SimulationParams { n_steps: 8, ..params }).unwrap();
    let half = simulate(&normal(1.0, 1.0), &rho_d, &params).unwrap();
    let rest = run_from(half.ensemble, &rho_d, &params).unwrap();
    assert_eq!(rest.ensemble.positions(), whole.ensemble.positions());
}

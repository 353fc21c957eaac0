use std::fs;
use std::path::Path;
use std::process::Command;

use densflow::gan::Mlp;
use densflow_cli::config::ModelSpec;
use densflow_cli::{
    emit_svg, parse_config, parse_with, run, ConfigIssue, Experiment, ExperimentConfig, Overrides, PlotSpec, RunOptions,
    SvgError,
};
use serde_json::Value;
use tempfile::TempDir;

fn densflow(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_densflow")).args(args).output().unwrap()
}

fn column(csv_text: &str, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = parse_config("experiment = pde_flow\nseed = 7\n").unwrap();
    assert_eq!(cfg, ExperimentConfig::defaults(Experiment::PdeFlow, 7));
    assert_eq!(cfg.pde.n_steps, 600);
    assert_eq!(cfg.grid.n, 401);
    assert_eq!(cfg.rho0, ModelSpec::Gaussian { mean: 2.0, std: 0.7 });

    let dir = TempDir::new().unwrap();
    let cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..cfg
    };
    let report = run(&cfg, &RunOptions { svg: false }).unwrap();
    assert_eq!(report.exit_code, 0);
    let m = manifest(dir.path());
    assert_eq!(m["config"]["pde"]["n_steps"], 600);
    assert_eq!(m["config"]["pde"]["shift"], "adaptive");
    assert_eq!(m["config"]["rho_d"]["family"], "gaussian");
    assert!(m["derived"]["beta"].as_f64().unwrap() > 1.0);
    assert!(m["derived"]["rho_d_renormalization"].as_f64().is_some());
    assert!(m["audits"].as_array().unwrap().iter().all(|a| a["passed"] == true));
}

#[test]
fn negative_eps_is_one_precise_error() {
    let err = parse_config("experiment = particle_flow\nseed = 1\nparticle.eps = -0.5\n").unwrap_err();
    assert_eq!(err.issues.len(), 1, "{err}");
    match &err.issues[0] {
        ConfigIssue::Precondition { line, key, .. } => {
            assert_eq!(*line, 3);
            assert_eq!(key, "particle.eps");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn both_bandwidth_rules_conflict() {
    let text = "experiment = particle_flow\nseed = 1\nparticle.bandwidth = silverman\nparticle.fixed_bandwidth = 0.2\n";
    let err = parse_config(text).unwrap_err();
    assert_eq!(err.issues.len(), 1);
    assert!(matches!(
        &err.issues[0],
        ConfigIssue::Conflict { line: 4, other_line: 3, .. }
    ));
    let ok = parse_config("experiment = particle_flow\nseed = 1\nparticle.fixed_bandwidth = 0.2\n").unwrap();
    assert_eq!(ok.particle.bandwidth, "0.2");
}

#[test]
fn every_problem_is_reported_with_its_line() {
    let text = "\
experiment = gan_train
seed = 3
# comment line
gan.lr_g = fast
gan.k_d = 0
grid.spacing = 0.1
no equals sign here
gan.m = 16
gan.m = 32
rho_d.family = logistic
rho_d.std = 2
";
    let err = parse_config(text).unwrap_err();
    let lines: Vec<Option<usize>> = err.issues.iter().map(ConfigIssue::line).collect();
    assert_eq!(lines, vec![Some(4), Some(5), Some(6), Some(7), Some(9), Some(11)], "{err}");
    assert!(matches!(err.issues[0], ConfigIssue::TypeMismatch { .. }));
    assert!(matches!(err.issues[1], ConfigIssue::Precondition { .. }));
    assert!(matches!(err.issues[2], ConfigIssue::UnknownKey { .. }));
    assert!(matches!(err.issues[3], ConfigIssue::Syntax { .. }));
    assert!(matches!(err.issues[4], ConfigIssue::Duplicate { first: 8, .. }));
    assert_eq!(err.issues[5].key(), Some("rho_d.std"));
    assert!(err.to_string().starts_with("6 configuration error(s)"));
}

#[test]
fn seed_and_experiment_rules() {
    let err = parse_config("experiment = pde_flow\n").unwrap_err();
    assert_eq!(err.issues, vec![ConfigIssue::Missing { key: "seed".into() }]);

    let o = Overrides {
        experiment: Some(Experiment::PdeFlow),
        seed: Some(9),
        ..Default::default()
    };
    assert_eq!(parse_with("", &o).unwrap().seed, 9);
    assert_eq!(parse_with("seed = 2\n", &o).unwrap().seed, 9);

    let err = parse_with("experiment = gan_train\n", &o).unwrap_err();
    assert_eq!(err.issues[0].key(), Some("experiment"));
    assert!(parse_config("experiment = nonsense\nseed = 1\n").is_err());
}

#[test]
fn module_preconditions_are_checked_at_load_time() {
    let err = parse_config("experiment = pde_flow\nseed = 1\ngrid.lower = -1\ngrid.upper = 1\n").unwrap_err();
    assert!(err.to_string().contains("window too narrow"), "{err}");
    let err = parse_config("experiment = pde_flow\nseed = 1\nrho0.family = mixture\n").unwrap_err();
    assert_eq!(err.issues, vec![ConfigIssue::Missing { key: "rho0.components".into() }]);
    let cfg = parse_config("experiment = pde_flow\nseed = 1\nrho0.family = mixture\nrho0.components = 0.3:-1:0.5, 0.7:1:0.5\n").unwrap();
    assert!(matches!(cfg.rho0, ModelSpec::Mixture { ref components } if components.len() == 2));
}

#[test]
fn resolved_text_parses_back_to_the_same_config() {
    for e in Experiment::ALL {
        let mut cfg = ExperimentConfig::defaults(e, 12);
        cfg.rho0 = ModelSpec::Gaussian { mean: 0.5, std: 0.6 };
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg, "{e}");
    }
}

#[test]
fn stationary_pde_run_passes() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "seed = 1\nrho0.family = gaussian\nrho0.mean = 0\nrho0.std = 1\npde.n_steps = 100\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = densflow(&["pde_flow", "--config", conf.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("time,jsd,mass,inf_v,sup_v,energy_sum\n"));
    assert!(!trace.contains('\r'));
    let jsd = column(&trace, "jsd");
    assert_eq!(jsd.len(), 101);
    assert!(jsd.iter().all(|j| j.abs() <= 1e-10));
    assert!(out_dir.join("jsd.svg").exists());
}

#[test]
fn equivalence_run_passes() {
    let dir = TempDir::new().unwrap();
    let out = densflow(&["gan_equivalence", "--seed", "4", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("equivalence.csv")).unwrap();
    let rel = column(&text, "rel_error");
    assert_eq!(rel.len(), 50);
    assert!(rel.iter().all(|r| *r <= 1e-10));
    assert_eq!(column(&text, "eps")[..3], [1e-3, 0.1, 1.0]);
}

#[test]
fn non_convergence_is_recorded() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "experiment = pde_flow\nseed = 1\npde.max_iters = 1\n").unwrap();
    let out = densflow(&["pde_flow", "--config", conf.to_str().unwrap(), "--output", dir.path().to_str().unwrap(), "--no-svg"]);
    assert_eq!(out.status.code(), Some(3));
    let m = manifest(dir.path());
    assert_eq!(m["error"]["kind"], "non_convergence");
    assert_eq!(m["error"]["step"], 1);
    assert_eq!(m["exit_code"], 3);
}

#[test]
fn failed_audit_exits_with_four() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "seed = 1\npde.n_steps = 50\naudit.mass_tol = 1e-30\n").unwrap();
    let out = densflow(&["pde_flow", "--config", conf.to_str().unwrap(), "--output", dir.path().to_str().unwrap(), "--no-svg"]);
    assert_eq!(out.status.code(), Some(4));
    let m = manifest(dir.path());
    let mass = m["audits"].as_array().unwrap().iter().find(|a| a["name"] == "mass_conservation").unwrap();
    assert_eq!(mass["passed"], false);
    assert!(m["error"].is_null());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "seed = x\nbogus = 1\n").unwrap();
    let out = densflow(&["metrics_audit", "--config", conf.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1") && err.contains("line 2"), "{err}");
    assert!(!dir.path().join("manifest.json").exists());
    assert_eq!(densflow(&["pde_flow"]).status.code(), Some(2));
}

fn small_runs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("pde_flow", "pde.n_steps = 40\npde.t_final = 1\n"),
        ("particle_flow", "particle.m = 2000\nparticle.n_steps = 20\nparticle.record_every = 5\n"),
        ("gan_train", "gan.iterations = 10\ngan.m = 32\ngan.eval_m = 200\ngan.record_every = 5\n"),
        ("gan_equivalence", "equivalence.trials = 6\n"),
        ("mse_divergence", "gan.iterations = 6\ngan.m = 32\ngan.eval_m = 200\ngan.record_every = 2\n"),
        ("metrics_audit", "metrics.pairs = 20\n"),
    ]
}

/// Every emitted byte except the wall clock and the output location.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json" && p.file_name().unwrap() != "config.resolved")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    let mut m = manifest(dir);
    m.as_object_mut().unwrap().remove("wall_clock_seconds");
    m["config"].as_object_mut().unwrap().remove("output_dir");
    files.push(("manifest".into(), m.to_string().into_bytes()));
    files
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let root = TempDir::new().unwrap();
    for (name, extra) in small_runs() {
        let conf = root.path().join(format!("{name}.conf"));
        fs::write(&conf, format!("seed = 5\n{extra}")).unwrap();
        let a = root.path().join(format!("{name}_a"));
        let b = root.path().join(format!("{name}_b"));
        for dir in [&a, &b] {
            let out = densflow(&[name, "--config", conf.to_str().unwrap(), "--output", dir.to_str().unwrap()]);
            assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        }
        assert_eq!(snapshot(&a), snapshot(&b), "{name}");
        let m = manifest(&a);
        let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert!(outputs.iter().any(|o| o.ends_with(".csv")), "{name}");
        assert!(outputs.iter().any(|o| o.ends_with(".svg")), "{name}");
        for o in outputs {
            assert!(a.join(o).exists());
        }

        // the resolved configuration replays the run
        let c = root.path().join(format!("{name}_c"));
        let resolved = a.join("config.resolved");
        let out = densflow(&[name, "--config", resolved.to_str().unwrap(), "--output", c.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(snapshot(&a), snapshot(&c), "{name} replay");
    }
}

#[test]
fn no_svg_flag_skips_plots() {
    let dir = TempDir::new().unwrap();
    let out = densflow(&["gan_equivalence", "--seed", "1", "--no-svg", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let svgs = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
    assert_eq!(svgs, 0);
}

#[test]
fn gan_snapshots_load_back() {
    let dir = TempDir::new().unwrap();
    let cfg = parse_with(
        "gan.iterations = 4\ngan.m = 16\ngan.eval_m = 100\ngan.hidden = 6, 5\n",
        &Overrides {
            experiment: Some(Experiment::GanTrain),
            seed: Some(2),
            output_dir: Some(dir.path().to_path_buf()),
        },
    )
    .unwrap();
    assert_eq!(run(&cfg, &RunOptions::default()).unwrap().exit_code, 0);
    let g = Mlp::from_text(&fs::read_to_string(dir.path().join("generator.txt")).unwrap()).unwrap();
    assert_eq!(g.layer_sizes(), &[1, 6, 5, 1]);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,jsd_hist,mean_displacement,grad_norm_D,grad_norm_G\n"));
    assert_eq!(column(&trace, "iteration"), vec![0.0, 4.0]);
}

fn spec(series: &[&str]) -> PlotSpec {
    PlotSpec {
        title: "trace".into(),
        x: "iteration".into(),
        series: series.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn svg_of_an_empty_trace_has_axes_only() {
    let svg = emit_svg("iteration,jsd\n", &spec(&["jsd"])).unwrap();
    assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("<path d=\"M70.00,40.00 L70.00,350.00 L620.00,350.00\""));
    assert_eq!(svg.matches("<path").count(), 1);
}

#[test]
fn two_arm_svg_has_both_series_and_a_legend() {
    let text = "iteration,jsd_pointwise,jsd_sorted\n0,0.3,0.3\n10,0.2,0.25\n20,0.1,0.3\n";
    let svg = emit_svg(text, &spec(&["jsd_pointwise", "jsd_sorted"])).unwrap();
    assert_eq!(svg.matches("<path").count(), 3);
    assert!(svg.contains(">jsd_pointwise</text>") && svg.contains(">jsd_sorted</text>"));
    assert_eq!(svg.matches("<line").count(), 2);
    assert_eq!(svg, emit_svg(text, &spec(&["jsd_pointwise", "jsd_sorted"])).unwrap());
}

#[test]
fn svg_rejects_missing_columns_and_bad_values() {
    let err = emit_svg("iteration,jsd\n0,0.1\n", &spec(&["loss"])).unwrap_err();
    assert!(matches!(err, SvgError::MissingColumn(ref c) if c == "loss"));
    let err = emit_svg("iteration,jsd\n0,abc\n", &spec(&["jsd"])).unwrap_err();
    assert!(matches!(err, SvgError::BadValue { row: 1, .. }));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sfnn_cli::manifest::{RunManifest, CONFIG_FILE};
use sfnn_cli::output::RunContext;
use sfnn_cli::plot::{polyline_points, render_plot, PlotSpec, Scale};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sfnn(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfnn"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

fn summary(dir: &Path) -> Vec<(String, f64)> {
    fs::read_to_string(dir.join("summary.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_owned(), v.parse().unwrap())
        })
        .collect()
}

fn metric(dir: &Path, name: &str) -> f64 {
    summary(dir).into_iter().find(|(k, _)| k == name).unwrap().1
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_64() {
    let o = sfnn(&["frobnicate"], &[]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(sfnn(&[], &[]).status.code(), Some(64));
    assert_eq!(sfnn(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.toml");
    let o = sfnn(
        &["linear", "--config", missing.to_str().unwrap(), "--out", &out_arg(&dir.path().join("o"))],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn bad_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[linear]\ntoll = 1e-6\n").unwrap();
    let o = sfnn(&["linear", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&dir.path().join("a"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("linear.toll"));
    let o = sfnn(&["dsfnn", "--out", &out_arg(&dir.path().join("b"))], &[("SFNN_DSFNN_ACTIVATION", "relu6")]);
    assert_eq!(o.status.code(), Some(2));
    let o = sfnn(&["linear", "--tol", "-1", "--out", &out_arg(&dir.path().join("c"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = sfnn(&["linear", "--seed", "minus-one"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn violated_certificate_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfnn(
        &["contagion", "--out", &out_arg(dir.path())],
        &[("SFNN_CONTAGION_BETA", "100.0")],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("spectral radius"), "{}", stderr(&o));
}

#[test]
fn linear_demo_reaches_the_dense_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = sfnn(&["linear", "--demo", "--out", &out_arg(dir.path())], &[("SFNN_LINEAR_TOL", "1e-3")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let last = trace.lines().last().unwrap();
    let residual: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(residual < 1e-10, "{last}");
    assert!(metric(dir.path(), "relative_error_vs_direct") < 1e-10);
    assert_eq!(metric(dir.path(), "converged"), 1.0);
}

#[test]
fn manifest_lists_every_file_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sfnn(&["contagion", "--out", &out_arg(&out)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = RunManifest::read(&out).unwrap();
    manifest.verify(&out).unwrap();
    assert_eq!(manifest.subcommand, "contagion");
    assert_eq!(manifest.seed, 2024);
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    for name in ["config.toml", "trace.csv", "trace.svg", "trajectories.csv", "trajectories.svg", "trajectories_log.svg", "summary.csv"] {
        assert!(manifest.files.iter().any(|f| f.path == name), "{name} missing");
    }
    assert!(manifest.duration_seconds >= 0.0);

    fs::write(out.join("stray.txt"), "x").unwrap();
    assert!(manifest.verify(&out).is_err());
    fs::remove_file(out.join("stray.txt")).unwrap();

    let mut cfg = fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
    cfg.push_str("# edited\n");
    fs::write(out.join(CONFIG_FILE), cfg).unwrap();
    assert!(RunManifest::read(&out).is_err());
}

#[test]
fn output_directory_is_reused_but_never_clobbered() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    for _ in 0..2 {
        let o = sfnn(&["vf", "--out", &out_arg(&out)], &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    RunManifest::read(&out).unwrap().verify(&out).unwrap();

    let foreign = dir.path().join("foreign");
    fs::create_dir(&foreign).unwrap();
    fs::write(foreign.join("notes.txt"), "keep me").unwrap();
    let o = sfnn(&["vf", "--out", &out_arg(&foreign)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_to_string(foreign.join("notes.txt")).unwrap(), "keep me");
}

#[test]
fn flags_beat_environment_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[run]\nseed = 5\n[linear]\nmax_iterations = 100\n").unwrap();
    let base = dir.path().join("base");
    sfnn(&["linear", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&base)], &[]);
    let m = RunManifest::read(&base).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.config_source.as_deref(), cfg.to_str());

    let env = dir.path().join("env");
    sfnn(
        &["linear", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&env)],
        &[("SFNN_RUN_SEED", "6"), ("SFNN_LINEAR_PROBLEM_KERNEL_PARAMS_BETA", "0.25")],
    );
    let m_env = RunManifest::read(&env).unwrap();
    assert_eq!(m_env.seed, 6);
    assert_ne!(m_env.config_digest, m.config_digest);
    assert!(fs::read_to_string(env.join(CONFIG_FILE)).unwrap().contains("beta = 0.25"));

    let flag = dir.path().join("flag");
    sfnn(
        &["linear", "--config", cfg.to_str().unwrap(), "--seed", "7", "--tol", "1e-4", "--paths", "3", "--out", &out_arg(&flag)],
        &[("SFNN_RUN_SEED", "6")],
    );
    let m_flag = RunManifest::read(&flag).unwrap();
    assert_eq!(m_flag.seed, 7);
    assert!(m_flag.warnings.iter().any(|w| w.contains("--paths")));
    assert!(metric(&flag, "iterations") < metric(&base, "iterations"));
}

#[test]
fn same_seed_gives_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (run, seed) in runs.iter().zip(["7", "7", "8"]) {
        let o = sfnn(&["linear", "--seed", seed, "--out", &out_arg(run)], &[]);
        assert_eq!(o.status.code(), Some(0));
    }
    for name in ["trace.csv", "solution.csv", "summary.csv"] {
        let a = fs::read(runs[0].join(name)).unwrap();
        assert_eq!(a, fs::read(runs[1].join(name)).unwrap(), "{name}");
        assert!(!a.contains(&b'\r'));
    }
    assert_ne!(
        fs::read(runs[0].join("solution.csv")).unwrap(),
        fs::read(runs[2].join("solution.csv")).unwrap()
    );
}

#[test]
fn constant_column_draws_a_horizontal_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    fs::write(&csv, "level\n1.0\n1.0\n1.0\n1.0\n").unwrap();
    let outcome = render_plot(&csv, &PlotSpec::new("flat", None, Scale::Linear)).unwrap();
    assert_eq!(outcome.dropped, 0);
    let svg = fs::read_to_string(&outcome.svg_path).unwrap();
    let pts = polyline_points(&svg, "level").unwrap();
    assert_eq!(pts.len(), 4);
    assert!(pts.iter().all(|p| p.1 == pts[0].1));
    assert!(pts.windows(2).all(|w| w[1].0 > w[0].0));
    assert!(svg.contains(r#"class="legend""#) && svg.contains(">level</text>"));
}

#[test]
fn semilog_drops_non_positive_and_non_finite_points() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    fs::write(&csv, "k,residual,other\n1,1e-1,1\n2,0,1\n3,1e-3,NaN\n4,-2,1\n5,1e-5,inf\n").unwrap();
    let spec = PlotSpec::new("r", Some("k"), Scale::SemilogY);
    let outcome = render_plot(&csv, &spec.clone().series(&["residual"])).unwrap();
    assert_eq!(outcome.dropped, 2);
    let svg = fs::read_to_string(&outcome.svg_path).unwrap();
    assert_eq!(polyline_points(&svg, "residual").unwrap().len(), 3);
    let both = render_plot(&csv, &spec).unwrap();
    assert_eq!(both.dropped, 4);
    assert!(render_plot(&csv, &PlotSpec::new("r", Some("missing"), Scale::Linear)).is_err());

    let out = dir.path().join("ctx");
    let mut ctx = RunContext::create(&out).unwrap();
    ctx.write_bytes("r.csv", &fs::read(&csv).unwrap()).unwrap();
    ctx.plot("r.csv", PlotSpec::new("r", Some("k"), Scale::SemilogY).series(&["residual"])).unwrap();
    assert_eq!(ctx.dropped_points, 2);
    assert_eq!(ctx.warnings.len(), 1);
}

#[test]
fn merton_residual_plot_decreases_on_log_axis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("merton_quick.toml");
    let o = sfnn(&["merton", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("fp_residuals.svg")).unwrap();
    let pts = polyline_points(&svg, "fp_residual").unwrap();
    assert!(pts.len() >= 5);
    // SVG y grows downwards
    assert!(pts.windows(2).all(|w| w[1].1 > w[0].1), "{pts:?}");
    assert_eq!(metric(dir.path(), "converged"), 1.0);
    let m = RunManifest::read(dir.path()).unwrap();
    m.verify(dir.path()).unwrap();
    assert!(m.files.iter().any(|f| f.path == "kernel.ckpt"));
}

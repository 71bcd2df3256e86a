use sfnn_core::linalg::linear_fit;
use sfnn_core::merton::{
    direct_fixed_point, run_sfvnn, simulate_ensemble, simulate_merton_path, KernelSource, MertonConfig, SfvnnConfig,
};
use sfnn_core::RandomSeed;

#[test]
fn terminal_mean_matches_compensated_growth() {
    let cfg = MertonConfig::default();
    let n = 10_000;
    let terminal: Vec<f64> = (0..n)
        .map(|p| {
            let path = simulate_merton_path(&cfg, RandomSeed::new(99, p)).unwrap();
            path.s[path.s.len() - 1]
        })
        .collect();
    let mean = terminal.iter().sum::<f64>() / n as f64;
    let var = terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let expected = cfg.s0 * (cfg.compensated_drift() * cfg.horizon).exp();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");
}

fn euler_rms_gap(intervals: usize, paths: usize) -> f64 {
    let cfg = MertonConfig {
        intervals,
        ..MertonConfig::default()
    };
    let dt = cfg.grid().unwrap().step();
    let truth = cfg.true_kernel_matrix().unwrap();
    let mut acc = 0.0;
    let mut count = 0usize;
    for path in simulate_ensemble(&cfg, 5, paths).unwrap() {
        let euler = direct_fixed_point(&truth, &path.noise_increments(&cfg), cfg.s0, dt).unwrap();
        for (a, b) in euler.iter().zip(path.s.iter()) {
            acc += ((a - b) / cfg.s0).powi(2);
            count += 1;
        }
    }
    (acc / count as f64).sqrt()
}

#[test]
fn euler_fixed_point_converges_at_half_order() {
    let steps = [64, 128, 256];
    let gaps: Vec<f64> = steps.iter().map(|&n| euler_rms_gap(n, 2000)).collect();
    let xs: Vec<f64> = steps.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let (slope, _) = linear_fit(&xs, &ys);
    assert!((0.4..=0.6).contains(&slope), "slope {slope}, gaps {gaps:?}");
}

fn small_run() -> SfvnnConfig {
    SfvnnConfig {
        n_paths: 32,
        sweeps: 3,
        steps_per_sweep: 600,
        ..SfvnnConfig::default()
    }
}

#[test]
fn learned_kernel_run_properties() {
    let cfg = small_run();
    let report = run_sfvnn(&cfg).unwrap();
    let fp = &report.state.fp_residuals;
    let nn = &report.state.nn_errors;
    assert!(report.converged, "{fp:?}");
    assert!(fp.iter().all(|r| r.is_finite() && *r > 0.0));

    // geometric outer convergence
    let xs: Vec<f64> = (0..fp.len()).map(|k| k as f64).collect();
    let ys: Vec<f64> = fp.iter().map(|r| r.ln()).collect();
    let (slope, r2) = linear_fit(&xs, &ys);
    assert!(slope < 0.0 && r2 > 0.98, "slope {slope} R² {r2}");

    // residual falls by six orders while the network error moves by less than one
    assert!(fp[0] / fp[fp.len() - 1] >= 1e6);
    let tail = &nn[1..];
    let (mx, mn) = tail.iter().fold((0.0_f64, f64::INFINITY), |(a, b), &x| (a.max(x), b.min(x)));
    assert!(mx / mn < 10.0, "{nn:?}");

    // loss history spans every sweep and restarts at each boundary
    let train = &report.training;
    assert_eq!(train.loss_history.len(), 3 * 600);
    assert_eq!(train.outer_history[0], 1);
    assert_eq!(*train.outer_history.last().unwrap(), 3);
    for k in 1..3 {
        assert!(train.loss_history[k * 600] > 10.0 * train.moving_average[k * 600 - 1]);
    }
}

#[test]
fn moving_average_decreases_within_sweeps() {
    let cfg = small_run();
    let report = run_sfvnn(&cfg).unwrap();
    let ma = &report.training.moving_average;
    let sweep = cfg.steps_per_sweep;
    for k in 0..cfg.sweeps {
        let start = k * sweep;
        assert!(ma[start + sweep - 1] < 0.1 * ma[start + 10]);
    }
}

#[test]
fn training_is_reproducible() {
    let cfg = SfvnnConfig {
        n_paths: 16,
        sweeps: 2,
        steps_per_sweep: 50,
        ..SfvnnConfig::default()
    };
    let a = run_sfvnn(&cfg).unwrap();
    let b = run_sfvnn(&cfg).unwrap();
    assert_eq!(a.training, b.training);
    assert_eq!(a.state, b.state);
}

#[test]
fn true_kernel_ablation_reaches_quadrature_floor() {
    let cfg = SfvnnConfig {
        kernel_source: KernelSource::True,
        ..SfvnnConfig::default()
    };
    let report = run_sfvnn(&cfg).unwrap();
    assert!(report.converged);
    assert!(*report.state.nn_errors.last().unwrap() < 1e-12);
    assert!(report.training.loss_history.is_empty());
}

use nalgebra::DVector;
use sfnn_core::merton::{simulate_ensemble, Ensemble, MertonConfig};
use sfnn_core::neural_kernel::{cyclic_batch, residual_loss, NeuralKernel, ResidualProblem, PARAM_COUNT};
use sfnn_core::{Grid, RandomSeed};

fn merton_problem(paths: usize, seed: u64) -> ResidualProblem {
    let cfg = MertonConfig {
        intervals: 16,
        ..MertonConfig::default()
    };
    let ensemble = Ensemble::new(&cfg, simulate_ensemble(&cfg, seed, paths).unwrap()).unwrap();
    ensemble.residual_problem(&cfg).unwrap()
}

/// Central differences (h = 1e-5) on the full-batch loss, relative error with
/// a floor on the denominator for coordinates whose derivative is ~0.
#[test]
fn analytic_gradient_matches_finite_differences() {
    for draw in 0..3u64 {
        let problem = merton_problem(4, 100 + draw);
        let nk = NeuralKernel::new(RandomSeed::new(draw, 9), (0.0, 1.0)).unwrap();
        let batch: Vec<usize> = (0..problem.len()).collect();
        let (_, grad) = problem.loss_and_gradient(&nk, &batch).unwrap();
        let scale = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for c in 0..50 {
            let k = (c * 7919 + draw as usize * 31) % PARAM_COUNT;
            let mut p = nk.clone();
            p.theta[k] += h;
            let up = residual_loss(&p, &problem, None).unwrap();
            p.theta[k] -= 2.0 * h;
            let down = residual_loss(&p, &problem, None).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-3 * scale);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "draw {draw}: worst relative error {worst}");
    }
}

#[test]
fn plug_in_true_kernel_leaves_only_quadrature_error() {
    let cfg = MertonConfig::default();
    let ensemble = Ensemble::new(&cfg, simulate_ensemble(&cfg, 4, 16).unwrap()).unwrap();
    let problem = ensemble.residual_problem(&cfg).unwrap();
    let truth = cfg.true_kernel_matrix().unwrap();
    let batch: Vec<usize> = (0..16).collect();
    let r = problem.residuals(&truth, &batch);
    let loss = r.norm_squared() * problem.grid.step() / (cfg.s0 * cfg.s0 * 16.0);
    let zero = NeuralKernel::zeros((0.0, 1.0)).unwrap();
    let untrained = residual_loss(&zero, &problem, None).unwrap();
    assert!(loss < 1e-2 * untrained, "{loss} vs {untrained}");
    assert!(loss.sqrt() < 10.0 * problem.grid.step(), "{loss}");
}

#[test]
fn minibatch_loss_is_mean_of_path_losses() {
    let problem = merton_problem(8, 3);
    let nk = NeuralKernel::new(RandomSeed::new(1, 1), (0.0, 1.0)).unwrap();
    let batch = cyclic_batch(1, 8, 4);
    let whole = residual_loss(&nk, &problem, Some(&batch)).unwrap();
    let mean = batch
        .iter()
        .map(|&p| residual_loss(&nk, &problem, Some(&[p])).unwrap())
        .sum::<f64>()
        / 4.0;
    assert!((whole - mean).abs() < 1e-14 * whole.max(1.0));
}

#[test]
fn loss_vanishes_only_with_zero_residual() {
    let grid = Grid::new(0.0, 1.0, 5).unwrap();
    let x = DVector::from_element(5, 1.0);
    let nk = NeuralKernel::zeros((0.0, 1.0)).unwrap();
    let zero = ResidualProblem::new(grid, vec![x.clone()], vec![DVector::zeros(5)], 1.0).unwrap();
    assert_eq!(residual_loss(&nk, &zero, None).unwrap(), 0.0);
    let mut y = DVector::zeros(5);
    y[3] = 1e-8;
    let tiny = ResidualProblem::new(grid, vec![x], vec![y], 1.0).unwrap();
    assert!(residual_loss(&nk, &tiny, None).unwrap() > 0.0);
}

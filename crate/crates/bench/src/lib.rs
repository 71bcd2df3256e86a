//! Fixtures shared by the benchmarks.

use nalgebra::DVector;
use sfnn_core::grid::assemble_layer;
use sfnn_core::merton::{simulate_ensemble, Ensemble, MertonConfig};
use sfnn_core::neural_kernel::ResidualProblem;
use sfnn_core::stochastic::sample_brownian;
use sfnn_core::{Grid, KernelSpec, LayerParams, RandomSeed};

pub fn linear_layer(n: usize) -> (LayerParams, DVector<f64>) {
    let grid = Grid::new(0.0, 1.0, n).expect("grid");
    let spec = KernelSpec::new(|t, s| 0.5 * (-(t - s).abs()).exp(), |t| (3.0 * t).sin())
        .with_stochastic(|_, _| 0.05);
    let path = sample_brownian(&grid, RandomSeed::new(1, 0)).expect("path");
    let layer = assemble_layer(&grid, &spec, Some(&path), 1.0).expect("layer");
    let g = DVector::from_iterator(n, grid.nodes().into_iter().map(|t| spec.forcing(t)));
    (layer, g)
}

pub fn merton_problem(paths: usize) -> (MertonConfig, Ensemble, ResidualProblem) {
    let cfg = MertonConfig::default();
    let ensemble = Ensemble::new(&cfg, simulate_ensemble(&cfg, 2024, paths).expect("paths")).expect("ensemble");
    let problem = ensemble.residual_problem(&cfg).expect("problem");
    (cfg, ensemble, problem)
}
